from __future__ import annotations

import numpy as np
import pytest

from expflow.cutmatching import (CutMatchingConfig, CutMatchingState, ExactMatchingOracle, InvariantError,
                                 MatchingOracleResult, apply_round, build_matching_instance, compute_projections,
                                 cut_step, explicit_flow_matrix, potential_psi, route_respecting_demands,
                                 run_decomposition)
from expflow.exact import brute_progress_set, progress_check
from expflow.graph import CapGraph, barbell, complete_graph, random_connected


def test_config_validation():
    with pytest.raises(ValueError):
        CutMatchingConfig(phi=0)
    with pytest.raises(ValueError):
        CutMatchingConfig(eps1=0.6)
    T, x = CutMatchingConfig(T=7, x_max=3).resolve(10, 1)
    assert (T, x) == (7, 3.0)


def test_first_projection_is_r():
    G = complete_graph(5)
    st = CutMatchingState(G, G.deg, CutMatchingConfig())
    r = np.arange(5.0)
    assert np.allclose(compute_projections(st, r), r)


def test_recursive_projection_matches_explicit_matrix():
    G = random_connected(14, 3, W=3)
    cfg = CutMatchingConfig(phi=0.2, potential_mode="explicit", T=6, seed=2)
    P, d_T, tr = run_decomposition(G, G.deg, cfg)  # asserts agreement every round
    st = CutMatchingState(G, G.deg, cfg)
    st.rounds = tr.rounds
    r = np.random.default_rng(0).standard_normal(G.n)
    F = explicit_flow_matrix(st)
    assert np.allclose(compute_projections(st, r), F @ r / G.deg, atol=1e-9)


def test_cut_step_examples():
    G = complete_graph(2)
    st = CutMatchingState(G, G.deg, CutMatchingConfig())
    L, R, eta = cut_step(st, np.array([0.0, 1.0]), np.arange(2))
    assert L.size == 1 and R.size == 1
    G8 = complete_graph(8)
    st8 = CutMatchingState(G8, np.ones(8), CutMatchingConfig())
    p = np.array([0.0] * 7 + [10.0])
    L, R, eta = cut_step(st8, p, np.arange(8))
    assert L.tolist() == [7]
    assert brute_progress_set(p).L.tolist() == [7]


def test_cut_step_matches_progress_conditions_on_random_rounds():
    rng = np.random.default_rng(1)
    bad = 0
    for k in range(500):
        n = int(rng.integers(2, 40))
        G = complete_graph(n)
        st = CutMatchingState(G, G.deg, CutMatchingConfig())
        p = rng.standard_normal(n)
        L, R, eta = cut_step(st, p, np.arange(n))
        assert np.intersect1d(L, R).size == 0 and L.size + R.size == n
        mu = p.mean()
        res = brute_progress_set(p)
        if not progress_check(p, np.ones(n), res.eta, res.S, mu):
            # failures only where the mean sits strictly inside both 1/8 tails
            q = int(np.ceil(n / 8))
            srt = np.sort(p)
            assert srt[q - 1] < mu < srt[n - q]
            bad += 1
    assert bad < 50


def test_matching_instance_on_k4():
    G = complete_graph(4)
    st = CutMatchingState(G, G.deg, CutMatchingConfig(phi=0.5))
    L, R = np.array([0]), np.array([1, 2, 3])
    inst = build_matching_instance(st, {0: (L, R, 0.0)})
    assert np.allclose(inst.graph.cap, 4.0)
    assert inst.sources.tolist() == [3, 0, 0, 0]
    assert inst.sinks.tolist() == [0, 3, 3, 3]


def test_no_active_components_gives_empty_instance():
    G = complete_graph(3)
    st = CutMatchingState(G, np.zeros(3), CutMatchingConfig())
    assert st.active == []
    inst = build_matching_instance(st, {})
    assert inst.graph.m == 0


def test_apply_round_intact_component_gains_counter():
    G = complete_graph(6)
    st = CutMatchingState(G, G.deg, CutMatchingConfig(phi=0.5))
    L, R = np.array([0]), np.array([1, 2, 3, 4, 5])
    splits = {0: (L, R, 0.0)}
    inst = build_matching_instance(st, splits)
    res = ExactMatchingOracle()(st, inst, splits)
    assert res.cuts[0].size == 0
    apply_round(st, splits, res, inst)
    assert len(st.comps) == 1 and st.comps[0].x == 1
    assert np.array_equal(st.d_t, st.d)


def test_apply_round_rejects_bad_coverage():
    G = complete_graph(4)
    st = CutMatchingState(G, G.deg, CutMatchingConfig(phi=0.5))
    splits = {0: (np.array([0]), np.array([1, 2, 3]), 0.0)}
    inst = build_matching_instance(st, splits)
    bad = MatchingOracleResult([], {}, np.zeros(G.m), np.zeros(4))
    with pytest.raises(InvariantError):
        apply_round(st, splits, bad, inst)


@pytest.mark.parametrize("seed", range(3))
def test_k8_stays_whole(seed):
    G = complete_graph(8)
    P, d_T, tr = run_decomposition(G, G.deg, CutMatchingConfig(phi=0.1, seed=seed))
    assert P.canonical() == [tuple(range(8))]
    assert np.array_equal(d_T, G.deg)
    assert tr.cut_total == 0


def test_single_vertex():
    G = CapGraph(1, [])
    P, d_T, tr = run_decomposition(G, np.zeros(1))
    assert P.canonical() == [(0,)] and tr.rounds_run == 0


def test_all_deleted_component_is_inactive():
    G = complete_graph(4)
    d = np.zeros(4)
    st = CutMatchingState(G, d, CutMatchingConfig())
    assert st.active == []


def test_barbell_cut_capacity_bound():
    G = barbell(5)
    cfg = CutMatchingConfig(phi=0.2, seed=1)
    P, d_T, tr = run_decomposition(G, G.deg, cfg)
    lg = np.log2(G.n * G.W)
    assert tr.cut_total <= 16 * cfg.phi * G.deg.sum() * lg


def test_mixing_examples():
    G = complete_graph(4)
    cfg = CutMatchingConfig(phi=0.5, seed=0)
    P, d_T, tr = run_decomposition(G, G.deg, cfg)
    mf = route_respecting_demands(tr, [np.zeros(4)])
    assert mf.congestion() == 0
    b = np.zeros(4)
    b[0], b[3] = d_T[0], -d_T[3]
    mf = route_respecting_demands(tr, [b])
    assert mf.conservation_error() <= 1e-6 * G.deg.sum()
    assert mf.congestion() <= 4 * tr.T / cfg.phi
    with pytest.raises(ValueError):
        route_respecting_demands(tr, [2 * b])


def test_potential_examples():
    G = complete_graph(2)
    st = CutMatchingState(G, G.deg, CutMatchingConfig())
    # F = diag(d) with d = (1, 1): rows e_0, e_1, mean (1/2, 1/2)
    assert potential_psi(st, [0, 1]) == pytest.approx(2 * (1 * 0.5 + 1 * 0.5))
    assert potential_psi(st, [0]) == 0


def test_potential_decreases_on_k8():
    G = complete_graph(8)
    drops = []
    for seed in range(20):
        cfg = CutMatchingConfig(phi=0.1, seed=seed, T=4, potential_mode="explicit")
        P, d_T, tr = run_decomposition(G, G.deg, cfg)
        st = CutMatchingState(G, G.deg, cfg)
        vals = []
        for t in range(len(tr.rounds) + 1):
            st.rounds = tr.rounds[:t]
            vals.append(potential_psi(st, range(8)))
        drops.append(vals[-1] / vals[0])
    assert np.median(drops) < 1
