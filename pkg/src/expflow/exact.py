"""Exact flow oracles and brute-force checkers used for verification."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .graph import CapGraph, FlowAssignment, StructuralError, cut_value

FEAS_TOL = 1e-9


@dataclass
class FlowInstance:
    graph: CapGraph
    sources: np.ndarray  # Delta
    sinks: np.ndarray  # nabla

    def __post_init__(self):
        n = self.graph.n
        self.sources = _dense(self.sources, n)
        self.sinks = _dense(self.sinks, n)
        if np.any(self.sources < 0) or np.any(self.sinks < 0):
            raise ValueError("sources and sinks must be non-negative")


@dataclass
class MaxFlowResult:
    value: float
    flow: FlowAssignment
    mincut: np.ndarray  # sorted source-side vertex ids
    sent: np.ndarray  # per-vertex source usage
    absorbed: np.ndarray  # per-vertex sink usage

    @property
    def mincut_mask(self) -> np.ndarray:
        mask = np.zeros(self.flow.graph.n, dtype=bool)
        mask[self.mincut] = True
        return mask


def _dense(w, n: int) -> np.ndarray:
    if isinstance(w, dict):
        out = np.zeros(n)
        for k, v in w.items():
            if not 0 <= int(k) < n:
                raise StructuralError(f"unknown vertex {k}")
            out[int(k)] = v
        return out
    out = np.asarray(w, dtype=np.float64)
    if out.shape != (n,):
        raise StructuralError("weighting length does not match vertex count")
    return out.copy()


def max_flow_arrays(n, tail, head, cap_fwd, cap_bwd, sources, sinks):
    """Max flow from ``sources`` to ``sinks`` (netted per vertex) on an
    edge-array graph with per-direction capacities.

    Returns (value through the network, edge flow, source-side mask, sent,
    absorbed); the overlap ``min(sources, sinks)`` is absorbed locally and
    counted in ``sent``/``absorbed`` but not in the value.
    """
    src = np.maximum(sources - sinks, 0.0)
    snk = np.maximum(sinks - sources, 0.0)
    su = np.flatnonzero(src > 0)
    tv = np.flatnonzero(snk > 0)
    S, T = n, n + 1
    tail2 = np.concatenate([tail, np.full(su.size, S), tv]).astype(np.int64)
    head2 = np.concatenate([head, su, np.full(tv.size, T)]).astype(np.int64)
    cf = np.concatenate([cap_fwd, src[su], snk[tv]])
    cb = np.concatenate([cap_bwd, np.zeros(su.size + tv.size)])
    scale = float(cf.max()) if cf.size else 1.0
    val, flow, reach = kernels.max_flow(n + 2, tail2, head2, cf, cb, S, T, 1e-11 * max(scale, 1e-300))
    m = len(tail)
    overlap = np.minimum(sources, sinks)
    sent = overlap.copy()
    sent[su] += flow[m:m + su.size]
    absorbed = overlap.copy()
    absorbed[tv] += flow[m + su.size:]
    return float(val), flow[:m], reach[:n], sent, absorbed


def exact_max_flow(inst: FlowInstance) -> MaxFlowResult:
    G = inst.graph
    val, f, reach, sent, absorbed = max_flow_arrays(G.n, G.tail, G.head, G.cap, G.cap, inst.sources, inst.sinks)
    overlap = float(np.minimum(inst.sources, inst.sinks).sum())
    return MaxFlowResult(val + overlap, FlowAssignment(G, f), np.flatnonzero(reach), sent, absorbed)


class RouteResult(NamedTuple):
    congestion: float
    flow: FlowAssignment | None
    feasible: bool = True


def _components_balanced(G: CapGraph, b: np.ndarray) -> bool:
    lab = G.components()
    sums = np.zeros(lab.max() + 1 if lab.size else 0)
    np.add.at(sums, lab, b)
    return bool(np.all(np.abs(sums) <= FEAS_TOL * max(1.0, float(np.abs(b).sum()))))


def min_congestion_route(G: CapGraph, b, *, iters: int = 60, rel: float = 1e-6) -> RouteResult:
    """Minimum-congestion flow routing demand ``b`` (positive = supply).

    Searches over the capacity multiplier kappa.  Each infeasible probe
    yields a violated cut whose ratio b(S)/delta(S) is a valid lower bound,
    so the lower end jumps to that ratio; bisection takes over if jumps stall.
    """
    b = _dense(b, G.n)
    total = float(np.clip(b, 0, None).sum())
    if total <= 0 and np.all(b == 0):
        return RouteResult(0.0, FlowAssignment.zeros(G))
    if abs(b.sum()) > FEAS_TOL * np.abs(b).sum() or not _components_balanced(G, b):
        return RouteResult(math.inf, None, False)
    b = b - b.mean() * (np.abs(b.sum()) > 0)
    src, snk = np.clip(b, 0, None), np.clip(-b, 0, None)
    total = float(src.sum())
    if G.m == 0:
        return RouteResult(math.inf, None, False)
    hi = float(np.abs(b).sum() / G.cap.min())
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = float(np.nanmax(np.where(G.deg > 0, np.abs(b) / G.deg, 0.0)))
    best = None

    def probe(k):
        val, f, reach, _, _ = max_flow_arrays(G.n, G.tail, G.head, G.cap * k, G.cap * k, src, snk)
        return val >= total * (1 - 1e-10), f, reach

    ok, f, _ = probe(hi)
    if not ok:  # numerical safety: grow until feasible
        while not ok:
            hi *= 2
            ok, f, _ = probe(hi)
    best = f
    kappa = lo * (1 + 1e-9)
    for _ in range(iters):
        if hi <= lo * (1 + rel) or hi - lo <= 1e-300:
            break
        ok, f, reach = probe(kappa)
        if ok:
            hi, best = kappa, f
            kappa = 0.5 * (lo + hi)
            continue
        dS = float(G.cap[reach[G.tail] != reach[G.head]].sum())
        bS = float(b[reach].sum())
        cut_lb = bS / dS if dS > 0 else math.inf
        if cut_lb > kappa * (1 + 1e-12) and cut_lb < hi:
            lo = max(lo, cut_lb)
            kappa = lo * (1 + 1e-9)
        else:
            lo = max(lo, kappa)
            kappa = 0.5 * (lo + hi)
    flow = FlowAssignment(G, best)
    return RouteResult(flow.congestion(), flow)


def _subset_sums(vals: np.ndarray) -> np.ndarray:
    out = np.zeros(1)
    for x in vals:
        out = np.concatenate([out, out + x])
    return out


def _cut_table(G: CapGraph, A: np.ndarray) -> np.ndarray:
    """delta_G(S) for every subset S of A, indexed by bitmask."""
    k = len(A)
    pos = {int(v): i for i, v in enumerate(A)}
    W = np.zeros((k, k))
    for u, v, c in G.edges():
        if u in pos and v in pos:
            W[pos[u], pos[v]] += c
            W[pos[v], pos[u]] += c
    inner = np.zeros(1)
    for i in range(k):
        inner = np.concatenate([inner, inner + _subset_sums(W[i, :i])])
    return _subset_sums(G.deg[A]) - 2 * inner


def brute_near_expander(G: CapGraph, d, A, phi: float, *, limit: int = 20) -> bool:
    """Check delta_G(S) >= phi * min(d(S), d(A - S)) for all S within A."""
    A = np.array(sorted(set(int(v) for v in A)), dtype=np.int64)
    if len(A) > limit:
        raise ValueError(f"|A| = {len(A)} exceeds enumeration limit {limit}")
    if len(A) <= 1:
        return True
    d = np.asarray(d, dtype=np.float64)
    cut = _cut_table(G, A)
    dS = _subset_sums(d[A])
    denom = np.minimum(dS, dS[-1] - dS)
    ok = denom <= 0
    ok |= cut >= phi * denom * (1 - 1e-12)
    return bool(ok[1:-1].all())


class ProgressSet(NamedTuple):
    eta: float
    L: np.ndarray
    R: np.ndarray
    S: np.ndarray
    ok: bool


def _progress_candidate(vals, wts, order, mu, quota, top):
    """Fill L along ``order`` up to weight ``quota``; whole straddler kept."""
    cum = np.cumsum(wts[order])
    k = int(np.searchsorted(cum, quota - 1e-12)) + 1
    k = min(k, len(order))
    L = order[:k]
    R = order[k:]
    if R.size:
        eta = float(vals[R].max() if top else vals[R].min())
    else:
        eta = float(vals[L].min() if top else vals[L].max())
    lv = vals[L]
    S = L[(lv - eta) ** 2 >= (lv - mu) ** 2 / 9 - 1e-12 * (1 + (lv - mu) ** 2)]
    return eta, L, R, S


def progress_check(vals, wts, eta, S, mu) -> bool:
    """Both progress conditions by direct summation."""
    tot = float(np.dot(wts, (vals - mu) ** 2))
    sv = vals[S]
    c1 = bool(np.all((sv - eta) ** 2 >= (sv - mu) ** 2 / 9 - 1e-12 * (1 + (sv - mu) ** 2)))
    c2 = float(np.dot(wts[S], (sv - mu) ** 2)) >= tot / 36 - 1e-12 * (1 + tot)
    return c1 and c2


def progress_split(values, weights=None, ids=None) -> ProgressSet:
    """Threshold split of a weighted multiset with a large-deviation subset.

    L takes the first ceil(w(X)/8) weight from one extreme (a straddling
    item joins L whole); eta is the nearest R value and S keeps the items of
    L satisfying the distance condition.  Both extremes are tried, starting
    with the side holding more of the variance above the mean.
    """
    vals = np.asarray(values, dtype=np.float64)
    wts = np.ones_like(vals) if weights is None else np.asarray(weights, dtype=np.float64)
    ids = np.arange(len(vals)) if ids is None else np.asarray(ids)
    tw = float(wts.sum())
    mu = float(np.dot(wts, vals) / tw)
    quota = math.ceil(tw / 8 - 1e-9)
    tot = float(np.dot(wts, (vals - mu) ** 2))
    top_order = np.lexsort((ids, -vals))
    bot_order = np.lexsort((ids, vals))
    k = min(int(np.searchsorted(np.cumsum(wts[top_order]), quota - 1e-12)), len(vals) - 1)
    eta_top = vals[top_order[k]]
    if mu >= eta_top:
        upper = float(np.dot(wts[vals >= mu], (vals[vals >= mu] - mu) ** 2))
        top_first = upper >= tot / 36
    else:
        lower = float(np.dot(wts[vals < mu], (vals[vals < mu] - mu) ** 2))
        top_first = lower < tot / 36
    cands = [(top_order, True), (bot_order, False)]
    if not top_first:
        cands.reverse()
    first = None
    for order, top in cands:
        eta, L, R, S = _progress_candidate(vals, wts, order, mu, quota, top)
        res = ProgressSet(eta, L, R, S, progress_check(vals, wts, eta, S, mu))
        if res.ok:
            return res
        first = first or res
    return first


def brute_progress_set(X: Sequence[float] | tuple) -> ProgressSet:
    """Progress split of a multiset given as values or (values, weights).

    L, R, S are index arrays into the item list.
    """
    if isinstance(X, tuple) and len(X) == 2 and np.ndim(X[0]) == 1:
        vals, wts = X
    else:
        vals, wts = X, None
    vals = np.asarray(vals, dtype=np.float64)
    n = vals.size if wts is None else float(np.sum(wts))
    if n < 2:
        raise ValueError("need at least two elements")
    return progress_split(vals, wts)


class QualityResult(NamedTuple):
    max_ratio: float
    min_ratio: float
    unbounded: bool = False


def family_estimate(G: CapGraph, family, b) -> float:
    best = 0.0
    for C in family:
        dC = cut_value(G, C)
        if dC <= 0:
            continue
        best = max(best, abs(float(np.sum(b[np.asarray(list(C), dtype=np.int64)]))) / dC)
    return best


def approximator_quality(G: CapGraph, family, trials: int, seed: int) -> QualityResult:
    """Extremes of opt(b) / max_C |b(C)|/delta(C) over random demands."""
    fam = []
    for C in family:
        C = np.asarray(sorted(set(int(v) for v in C)), dtype=np.int64)
        if cut_value(G, C) <= 0:
            warnings.warn(f"family set of size {len(C)} has zero boundary; skipped", stacklevel=2)
            continue
        fam.append(C)
    rng = np.random.default_rng(seed)
    lab = G.components()
    hi, lo = 0.0, math.inf
    unbounded = False
    for _ in range(trials):
        b = rng.normal(size=G.n)
        for c in np.unique(lab):
            b[lab == c] -= b[lab == c].mean()
        est = family_estimate(G, fam, b)
        opt = min_congestion_route(G, b).congestion
        if est <= 0:
            unbounded = True
            hi = math.inf
            continue
        r = opt / est
        hi, lo = max(hi, r), min(lo, r)
    return QualityResult(hi, lo, unbounded)
