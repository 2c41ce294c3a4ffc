from __future__ import annotations

import numpy as np
import pytest

from _instances import fair_cut_instance
from expflow.faircut import (FairCutError, FairCutInput, build_star_graph, check_fair_cut, fair_cut, family_delta,
                            inflow_vector, prune_candidates, route_residual_demands)
from expflow.graph import CapGraph, StructuralError, path_graph


def _check_properties(inp, res):
    G, A, f = inp.G, res.A, res.flow.f
    assert A[inp.t] and not np.any(A & ~inp.U)
    dA = G.cap[A[G.tail] != A[G.head]].sum()
    dU = G.cap[inp.U[G.tail] != inp.U[G.head]].sum()
    assert dA <= 4 * dU + 1e-9
    for e in np.flatnonzero(A[G.tail] != A[G.head]):
        inward = f[e] if A[G.head[e]] else -f[e]
        assert inward >= (1 - inp.eps) * G.cap[e] - 1e-9 * G.cap[e]
    net = np.zeros(G.n)
    np.add.at(net, G.tail, f)
    np.add.at(net, G.head, -f)
    inside = A.copy()
    inside[inp.t] = False
    assert np.all(np.abs(net[inside]) <= 1e-7 * max(1.0, G.cap.max()))


def test_input_validation():
    G = path_graph(4)
    with pytest.raises(StructuralError):
        FairCutInput(G, np.array([0, 1]), 3, [])
    with pytest.raises(StructuralError):
        FairCutInput(G, np.arange(4), 3, [np.array([3])])
    with pytest.raises(StructuralError):
        FairCutInput(G, np.arange(4), 3, [np.array([0, 1]), np.array([1, 2])])


def test_no_boundary_returns_U():
    G = path_graph(4)
    inp = FairCutInput(G, np.arange(4), 3, [np.array([0])])
    res = fair_cut(inp)
    assert res.A.all() and np.all(res.flow.f == 0)


def test_path_graph_cut():
    G = path_graph(6, caps=[3, 1, 2, 2, 5])
    inp = FairCutInput(G, np.arange(1, 6), 5, [np.array([v]) for v in range(1, 5)])
    res = fair_cut(inp)
    _check_properties(inp, res)


def _brute_prune(G, A, f, family):
    """Direct reimplementation of the largest-first pruning scan."""
    rf, rb = G.cap - f, G.cap + f
    B = A.copy()

    def entering(C):
        tot = 0.0
        for e in range(G.m):
            u, v = G.tail[e], G.head[e]
            if B[v] and not B[u] and v in C:
                tot += rf[e]
            if B[u] and not B[v] and u in C:
                tot += rb[e]
        return tot

    for i in sorted(range(len(family)), key=lambda i: (-len(family[i]), i)):
        C = set(family[i].tolist())
        dC = sum(G.cap[e] for e in range(G.m) if (G.tail[e] in C) != (G.head[e] in C))
        if entering(C) > 2 * dC * (1 + 1e-12):
            for v in C:
                B[v] = False
    return B


def test_pruning_matches_brute_force_on_nested_path_family():
    G = path_graph(8, caps=[4, 1, 3, 1, 2, 5, 1])
    fam = [np.arange(k) for k in range(1, 7)]  # nested prefixes, t = 7 outside
    rng = np.random.default_rng(0)
    for _ in range(30):
        A = rng.random(8) < 0.7
        A[7] = True
        f = rng.uniform(-1, 1, G.m) * G.cap
        B, ratio = prune_candidates(G, A, f, fam)
        assert np.array_equal(B, _brute_prune(G, A, f, fam))
        assert ratio <= 4


def test_star_graph_example():
    # v = 1 has one boundary edge of capacity 4 from outside B
    G = CapGraph(3, [(0, 1, 4), (1, 2, 1)])
    B = np.array([False, True, True])
    sg, _ = build_star_graph(G, B, np.zeros(G.m), 2, [np.array([1])])
    assert sg.tau == 2
    star = np.flatnonzero(sg.star_vertex == 1)
    assert sg.H.cap[star].tolist() == [2.0]
    B0 = np.ones(3, dtype=bool)
    sg0, _ = build_star_graph(G, B0, np.zeros(G.m), 2, [])
    assert sg0.tau == 0


def test_residual_router_examples():
    G = path_graph(4)
    B = np.ones(4, dtype=bool)
    fam = [np.array([0, 1])]
    delta = family_delta(G, fam)
    from expflow.faircut import exact_route_fn
    f, cong = route_residual_demands(G, B, 3, np.zeros(4), exact_route_fn(G), fam, delta, 0.1, 1.0)
    assert np.all(f == 0)
    d = np.zeros(4)
    d[0], d[1] = 0.05, -0.05  # a +-delta pair inside one family set
    f, cong = route_residual_demands(G, B, 3, d, exact_route_fn(G), fam, delta, 0.1, 1.0)
    assert cong <= 3 * 0.1


@pytest.mark.parametrize("seed", range(15))
def test_random_instances(seed):
    inp = fair_cut_instance(seed)
    res = fair_cut(inp)
    _check_properties(inp, res)
    h = res.phi_history
    assert all(h[k + 1] <= 0.75 * h[k] * (1 + 1e-9) + 1e-9 * inp.threshold for k in range(1, len(h) - 1))
    assert res.t_received <= 4 * res.delta_U + 1e-9


def test_check_rejects_unsaturated():
    G = path_graph(3)
    inp = FairCutInput(G, np.array([1, 2]), 2, [np.array([1])])
    res = fair_cut(inp)
    res.flow.f[:] = 0
    with pytest.raises(FairCutError):
        check_fair_cut(inp, res)
