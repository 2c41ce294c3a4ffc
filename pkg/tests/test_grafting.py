from __future__ import annotations

import numpy as np
import pytest

from conftest import k8_with_triangle
from expflow.cutmatching import CutMatchingConfig, InvariantError
from expflow.grafting import (ExactGraftingOracle, Oracle2Result, boundary_receive, build_grafting_instance,
                              expander_decompose, finalize, route_grafted_demands)
from expflow.graph import VertexPartition, barbell, complete_graph, random_connected


def test_instance_whole_graph():
    G = complete_graph(5)
    inst = build_grafting_instance(G, VertexPartition([range(5)]), G.deg, G.deg)
    assert np.all(inst.sources == 0)
    assert np.allclose(inst.sinks, G.deg / 5)
    assert np.allclose(inst.graph.cap, 64.0)


def test_instance_barbell_bridge_sources():
    G = barbell(3)
    inst = build_grafting_instance(G, VertexPartition([[0, 1, 2], [3, 4, 5]]), G.deg, G.deg)
    assert inst.sources.tolist() == [0, 0, 1, 1, 0, 0]
    assert inst.graph.m == G.m - 1


def test_fully_deleted_block_not_plus(k8tri):
    P = VertexPartition([range(8), [8, 9, 10]])
    d_T = k8tri.deg.copy()
    d_T[[8, 9, 10]] = 0
    inst = build_grafting_instance(k8tri, P, k8tri.deg, d_T)
    assert inst.plus == [0]
    assert inst.sinks[[8, 9, 10]].tolist() == [0, 0, 0]


def test_finalize_on_hand_partition(k8tri):
    P = VertexPartition([range(8), [8, 9, 10]])
    inst = build_grafting_instance(k8tri, P, k8tri.deg, k8tri.deg)
    assert inst.eligible == [0]  # the triangle's boundary is too heavy
    res = ExactGraftingOracle()(k8tri, inst)
    fd = finalize(P, k8tri.deg, k8tri.deg, res, inst, k8tri)
    assert [A.tolist() for A in fd.certified] == [list(range(8))]
    assert [A.tolist() for A in fd.discarded] == [[8, 9, 10]]
    assert fd.certificates["cut_capacity"] == 1.0
    rec = boundary_receive(fd)
    assert np.all(rec <= k8tri.deg / 4 + 1e-9)


def test_finalize_rejects_overscaled_flow(k8tri):
    P = VertexPartition([range(8), [8, 9, 10]])
    inst = build_grafting_instance(k8tri, P, k8tri.deg, k8tri.deg, psi=0.5)
    f = np.zeros(k8tri.m)
    f[0] = 3.0  # above 1/psi = 2 on a unit edge
    with pytest.raises(InvariantError):
        finalize(P, k8tri.deg, k8tri.deg, Oracle2Result({0: np.zeros(0, dtype=np.int64)}, f), inst, k8tri)


def test_expander_decompose_k8():
    G = complete_graph(8)
    fd = expander_decompose(G, G.deg, CutMatchingConfig(phi=0.1))
    assert [A.tolist() for A in fd.certified] == [list(range(8))]
    assert fd.discarded == []
    assert np.abs(fd.boundary_flow).max(initial=0) == 0


def test_pendant_triangle_cut_end_to_end(k8tri):
    fd = expander_decompose(k8tri, k8tri.deg, CutMatchingConfig(phi=1.0, seed=0))
    assert fd.certificates["cut_capacity"] == 1.0
    assert [A.tolist() for A in fd.certified] == [list(range(8))]


@pytest.mark.parametrize("seed", range(3))
def test_grafted_routing_bounds(seed):
    G = random_connected(16, seed, W=3)
    cfg = CutMatchingConfig(phi=0.1, seed=seed)
    psi = 1 / 64
    fd = expander_decompose(G, G.deg, cfg, psi=psi)
    assert np.max(np.abs(fd.boundary_flow) / G.cap, initial=0) <= 2 / psi
    rng = np.random.default_rng(seed)
    from expflow.graph import boundary_degree
    lim = G.deg + boundary_degree(G, fd.partition)
    for A in fd.certified:
        if A.size < 2:
            continue
        cols = []
        for _ in range(10):
            b = np.zeros(G.n)
            x = rng.uniform(-1, 1, A.size) * lim[A]
            x -= x.mean()
            x *= min(1.0, float(np.min(lim[A] / np.maximum(np.abs(x), 1e-300))))
            b[A] = x
            cols.append(b)
        mf = route_grafted_demands(fd, cols)
        assert mf.conservation_error() <= 1e-6 * G.deg.sum()
        assert mf.congestion() <= fd.transcript.T / cfg.phi + 2 / psi


def test_zero_demands_route_to_nothing():
    G = complete_graph(6)
    fd = expander_decompose(G, G.deg, CutMatchingConfig(phi=0.2))
    mf = route_grafted_demands(fd, [np.zeros(6)])
    assert mf.congestion() == 0
