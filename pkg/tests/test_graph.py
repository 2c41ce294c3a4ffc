from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from expflow.graph import (CapGraph, FlowAssignment, StructuralError, VertexPartition, barbell, boundary,
                           complete_graph, conductance, cycle_graph, induced_degree, net_flow, path_graph,
                           random_connected, sbm, scale_graph)


def test_parallel_edges_merge_and_orientation():
    G = CapGraph(3, [(2, 0, 1), (0, 2, 2), (1, 2, 1)])
    assert G.m == 2
    assert G.tail.tolist() == [0, 1] and G.head.tolist() == [2, 2]
    assert G.cap.tolist() == [3.0, 1.0]
    assert G.deg.tolist() == [3.0, 1.0, 4.0]
    G.validate()


@pytest.mark.parametrize("edges", [[(0, 0, 1)], [(0, 3, 1)], [(0, 1, 0)], [(0, 1, 1.5)]])
def test_rejects_bad_edges(edges):
    with pytest.raises(StructuralError):
        CapGraph(3, edges)


def test_real_capacities_allowed_when_flagged():
    G = CapGraph(2, [(0, 1, 1.5)], real=True)
    assert G.W == 1.5


def test_partition_boundary_values():
    C4 = cycle_graph(4)
    assert boundary(C4, VertexPartition([[0, 1], [2, 3]]))[1] == 2
    assert boundary(C4, VertexPartition([range(4)]))[1] == 0
    K4 = complete_graph(4)
    assert boundary(K4, VertexPartition([[v] for v in range(4)]))[1] == 6


def test_conductance_examples():
    C4 = cycle_graph(4)
    assert conductance(C4, C4.deg, [0, 1]) == pytest.approx(0.5)
    K2 = complete_graph(2)
    assert conductance(K2, K2.deg, [0]) == pytest.approx(1.0)
    B = barbell(3)
    assert conductance(B, B.deg, [0, 1, 2]) == pytest.approx(1 / 7)


def test_conductance_rejects_trivial_sets():
    with pytest.raises(StructuralError):
        conductance(cycle_graph(4), np.ones(4), [])


def test_induced_degree_examples():
    C4 = cycle_graph(4)
    assert induced_degree(C4, np.zeros(C4.m, dtype=bool)).tolist() == [0, 0, 0, 0]
    mask = np.zeros(C4.m, dtype=bool)
    P = VertexPartition([[0, 1], [2, 3]])
    lab = P.block_of
    mask[lab[C4.tail] != lab[C4.head]] = True
    assert induced_degree(C4, mask).tolist() == [1, 1, 1, 1]
    assert np.array_equal(induced_degree(C4, np.ones(C4.m, dtype=bool)), C4.deg)


def test_net_flow_conventions():
    G = path_graph(3)
    fa = FlowAssignment.zeros(G)
    assert all(net_flow(G, fa, v) == 0 for v in range(3))
    f = np.zeros(G.m)
    f[0] = 1.0  # edge (0,1)
    assert net_flow(G, f, 1) == 1 and net_flow(G, f, 0) == -1
    rng = np.random.default_rng(0)
    H = random_connected(12, 0, W=3)
    g = FlowAssignment(H, rng.standard_normal(H.m))
    assert abs(g.excess().sum()) < 1e-12
    assert np.allclose(g.demand(), -g.excess())


def test_scale_graph():
    G = complete_graph(4)
    assert np.array_equal(scale_graph(G, 1).cap, G.cap)
    assert np.array_equal(scale_graph(G, Fraction(2, 1) / Fraction(1, 2)).cap, 4 * G.cap)
    assert np.array_equal(scale_graph(G, 1 / 0.25).cap, 4 * G.cap)
    with pytest.raises(StructuralError):
        scale_graph(G, 0)


def test_partition_rejects_overlap():
    with pytest.raises(StructuralError):
        VertexPartition([[0, 1], [1, 2]])
    P = VertexPartition.from_labels([1, 1, 0, -1])
    assert P.canonical() == [(0, 1), (2,)]
    assert P.ground.tolist() == [0, 1, 2]


def test_generators_are_connected_and_seeded():
    for seed in range(5):
        G = random_connected(20, seed, W=8)
        assert np.unique(G.components()).size == 1
        assert G.cap.max() <= 8 and G.cap.min() >= 1
    a, b = sbm(30, 0.5, 0.05, 3), sbm(30, 0.5, 0.05, 3)
    assert a.edges() == b.edges()
    B = barbell(4)
    assert B.n == 8 and B.m == 13
