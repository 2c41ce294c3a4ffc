"""Warm-started cut-matching game with deletions.

The game keeps a partition of V into active and inactive components and a
surviving weighting ``d_t``.  Each round projects the implicit flow matrix
onto a random direction, splits every active component by a threshold, and
asks a matching oracle to route the heavy side into the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol

import numpy as np
import scipy.sparse as sp

from .exact import FlowInstance, exact_max_flow, min_congestion_route, progress_split
from .graph import CapGraph, FlowAssignment, VertexPartition
from .paths import path_decompose


class InvariantError(AssertionError):
    """An algorithm or oracle contract clause does not hold."""


@dataclass
class CutMatchingConfig:
    phi: float = 0.1
    eps1: float = 0.01
    T: int | None = None
    x_max: float | None = None
    C_conc: float = 4.0
    seed: int = 0
    potential_mode: str = "off"  # off | explicit
    x_factor: float = 8.0
    T_factor: float = 10.0
    strict_constants: bool = False

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if not 0 < self.eps1 < 0.5:
            raise ValueError("eps1 must lie in (0, 1/2)")
        if self.T is not None and self.T < 1:
            raise ValueError("T must be >= 1")
        if self.potential_mode not in ("off", "explicit"):
            raise ValueError("potential_mode must be off or explicit")

    def resolve(self, n: int, W: float) -> tuple[int, float]:
        ln = max(1.0, math.log2(max(n, 2)))
        lnw = max(1.0, math.log2(max(n * W, 2)))
        if self.strict_constants:
            x_max = 1e5 * self.C_conc * ln * lnw
        else:
            x_max = self.x_factor * ln * lnw
        if self.x_max is not None:
            x_max = self.x_max
        T = self.T if self.T is not None else int(math.ceil(self.T_factor * ln * lnw))
        return T, float(x_max)


@dataclass
class Component:
    verts: np.ndarray
    active: bool
    x: float


@dataclass
class MatchingRound:
    """One matching step: the oracle flow and its path decomposition."""

    t: int
    flow: np.ndarray
    pu: np.ndarray
    pw: np.ndarray
    weights: np.ndarray
    inc: sp.csr_matrix  # m x P signed edge incidence of the paths
    M: sp.csr_matrix  # symmetric n x n matching matrix
    Msum: np.ndarray
    aprime: list[int]
    cuts: dict[int, np.ndarray]
    cut_capacity: float
    deleted: np.ndarray


class ProjectionRound(NamedTuple):
    r: np.ndarray
    p: np.ndarray
    splits: dict[int, tuple[np.ndarray, np.ndarray, float]]


@dataclass
class MatchingOracleResult:
    aprime: list[int]
    cuts: dict[int, np.ndarray]
    flow: np.ndarray  # flow on G's edges (G units)
    routed: np.ndarray  # source routed per vertex
    cut_capacity: float = 0.0
    stats: dict = field(default_factory=dict)


@dataclass
class MatchingInstance(FlowInstance):
    edge_map: np.ndarray = None
    labels: np.ndarray = None  # active component index per vertex, -1 elsewhere


class MatchingOracle(Protocol):
    def __call__(self, state: "CutMatchingState", inst: MatchingInstance,
                 splits: dict[int, tuple[np.ndarray, np.ndarray, float]]) -> MatchingOracleResult: ...


class CutMatchingState:
    def __init__(self, G: CapGraph, d, config: CutMatchingConfig):
        self.G = G
        self.d = np.asarray(d, dtype=np.float64).copy()
        if self.d.shape != (G.n,) or np.any(self.d < 0):
            raise ValueError("d must be a non-negative vector over V")
        self.config = config
        self.T, self.x_max = config.resolve(G.n, G.W)
        self.d_t = self.d.copy()
        self.t = 0
        all_v = np.arange(G.n)
        self.comps: list[Component] = [Component(all_v, True, 0.0)] if G.n else []
        self._inactivate_if_needed(self.comps[0]) if G.n else None
        self.rounds: list[MatchingRound] = []
        self.rng = np.random.default_rng(config.seed)
        self.F = np.diag(self.d) if config.potential_mode == "explicit" else None
        self.stacked = np.zeros(G.m)
        self.phi_history = [self.counter_potential()]
        self.cut_total = 0.0

    def _inactivate_if_needed(self, c: Component) -> None:
        dt = self.d_t[c.verts]
        if dt.sum() <= 0 or c.x > self.x_max or np.count_nonzero(dt) == 1:
            c.active = False

    @property
    def active(self) -> list[int]:
        return [i for i, c in enumerate(self.comps) if c.active]

    def labels(self) -> np.ndarray:
        lab = np.full(self.G.n, -1, dtype=np.int64)
        for i, c in enumerate(self.comps):
            lab[c.verts] = i
        return lab

    def partition(self) -> VertexPartition:
        return VertexPartition([c.verts for c in self.comps], n=self.G.n)

    def counter_potential(self) -> float:
        return float(sum((self.x_max - c.x) * self.d_t[c.verts].sum() for c in self.comps if c.active))

    @property
    def deleted(self) -> np.ndarray:
        return np.flatnonzero((self.d_t == 0) & (self.d > 0))


def _safe_div(a: np.ndarray, d: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=np.float64)
    nz = d > 0
    out[nz] = a[nz] / d[nz]
    return out


def compute_projections(state: CutMatchingState, r: np.ndarray) -> np.ndarray:
    """p(u) = <F_{t-1}(u), r> / d(u) via the matching recursion."""
    d = state.d
    g = d * r
    for rd in state.rounds:
        q = _safe_div(g, d)
        g = g - 0.5 * rd.Msum * q + 0.5 * (rd.M @ q)
    return _safe_div(g, d)


def explicit_flow_matrix(state: CutMatchingState, upto: int | None = None) -> np.ndarray:
    if state.G.n > 512:
        raise ValueError("explicit flow matrix limited to n <= 512")
    d = state.d
    F = np.diag(d)
    for rd in state.rounds[:upto]:
        Q = np.where(d[:, None] > 0, F / np.where(d > 0, d, 1)[:, None], 0.0)
        F = F - 0.5 * rd.Msum[:, None] * Q + 0.5 * (rd.M @ Q)
    return F


def cut_step(state: CutMatchingState, p: np.ndarray, A: np.ndarray):
    """Threshold split of the live part of A.  Returns (L, R, eta)."""
    A = np.asarray(A)
    live = A[state.d_t[A] > 0]
    if live.size < 2:
        raise ValueError("cut step needs at least two live vertices")
    res = progress_split(p[live], state.d_t[live], ids=live)
    return np.sort(live[res.L]), np.sort(live[res.R]), res.eta


def build_matching_instance(state: CutMatchingState, splits) -> MatchingInstance:
    G = state.G
    lab = np.full(G.n, -1, dtype=np.int64)
    for i in state.active:
        lab[state.comps[i].verts] = i
    keep = (lab[G.tail] >= 0) & (lab[G.tail] == lab[G.head])
    sub = G.edge_mask_subgraph(keep, scale=2.0 / state.config.phi)
    src = np.zeros(G.n)
    snk = np.zeros(G.n)
    for i, (L, R, _) in splits.items():
        src[L] = state.d_t[L]
        snk[R] = state.d_t[R]
    return MatchingInstance(sub, src, snk, edge_map=np.flatnonzero(keep), labels=lab)


class ExactMatchingOracle:
    """Oracle 1 from one exact max flow on the scaled, component-restricted graph."""

    def __call__(self, state, inst: MatchingInstance, splits) -> MatchingOracleResult:
        G = state.G
        res = exact_max_flow(inst)
        f = np.zeros(G.m)
        f[inst.edge_map] = res.flow.f
        S = res.mincut_mask
        dt = state.d_t
        aprime, cuts = [], {}
        dropped = 0
        for i in state.active:
            A = state.comps[i].verts
            C = A[S[A]]
            dA = dt[A].sum()
            if inst.sinks[C].sum() >= dA / 3 or dt[C].sum() > dA / 2:
                dropped += 1
                continue
            aprime.append(i)
            cuts[i] = C
        return MatchingOracleResult(aprime, cuts, f, res.sent, stats={"dropped": dropped, "value": res.value})


def _matching_from_flow(state: CutMatchingState, inst: MatchingInstance, flow: np.ndarray):
    G = state.G
    D = path_decompose(G, flow, inst.sources, inst.sinks, rel_tol=1e-7)
    keep = D.weights > 0
    D = D.select(keep)
    pu, pw, w = D.starts, D.ends, D.weights
    n = G.n
    M = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([pu, pw]), np.concatenate([pw, pu]))),
                      shape=(n, n)).tocsr()
    M.sum_duplicates()
    Msum = np.asarray(M.sum(axis=1)).ravel()
    rows = D.edges
    cols = D.edge_path_index()
    inc = sp.csr_matrix((D.signs, (rows, cols)), shape=(G.m, len(D)))
    return pu, pw, w, inc, M, Msum


def apply_round(state: CutMatchingState, splits, res: MatchingOracleResult, inst: MatchingInstance) -> MatchingRound:
    """Validate the oracle output, then perform deletions, splits and counter updates."""
    G, cfg = state.G, state.config
    dt_prev = state.d_t.copy()
    act = state.active
    tot_active = sum(dt_prev[state.comps[i].verts].sum() for i in act)
    cov = sum(dt_prev[state.comps[i].verts].sum() for i in res.aprime)
    tol = 1e-9 * max(1.0, state.d.sum())
    if cov < 0.5 * tot_active - tol:
        raise InvariantError(f"Oracle 1 coverage: d(A') = {cov:g} < half of active weight {tot_active:g}")
    fa = FlowAssignment(G, res.flow)
    if fa.congestion() > (2.0 / cfg.phi) * (1 + 1e-9):
        raise InvariantError("Oracle 1 flow exceeds the scaled capacities 2/phi")
    lab = inst.labels
    crossing = (lab[G.tail] != lab[G.head]) & (res.flow != 0)
    if np.any(crossing):
        raise InvariantError("Oracle 1 flow uses an edge between components")
    pu, pw, w, inc, M, Msum = _matching_from_flow(state, inst, res.flow)
    if np.any(Msum > state.d * (1 + 1e-9) + tol):
        raise InvariantError("matching row sum exceeds d(u)")
    cut_cap = 0.0
    charge = 0.0
    for i in res.aprime:
        A = state.comps[i].verts
        C = res.cuts.get(i, np.zeros(0, dtype=np.int64))
        if C.size and not np.all(np.isin(C, A)):
            raise InvariantError(f"Oracle 1 clause 1: C_A not contained in component {i}")
        dA = dt_prev[A].sum()
        if dt_prev[C].sum() > dA / 2 + tol:
            raise InvariantError(f"Oracle 1 clause 1: d(C_A) = {dt_prev[C].sum():g} > d(A)/2 = {dA / 2:g}")
        inC = np.zeros(G.n, dtype=bool)
        inC[C] = True
        inA = np.zeros(G.n, dtype=bool)
        inA[A] = True
        ce = inA[G.tail] & inA[G.head] & (inC[G.tail] != inC[G.head])
        cut_cap += float(G.cap[ce].sum())
        charge += float(dt_prev[C].sum())
        rest = inA & ~inC
        need = float(inst.sources[rest].sum())
        routed = float(Msum[rest & (inst.sources > 0)].sum())
        if routed < need - 2 * cfg.eps1 * state.d[A].sum() - tol:
            raise InvariantError(f"Oracle 1 clause 2: routed {routed:g} < Delta(A - C_A) - 2 eps d(A) = "
                                 f"{need - 2 * cfg.eps1 * state.d[A].sum():g}")
    if cut_cap > (cfg.phi / 2) * charge + cfg.phi * cfg.eps1 * state.d.sum() + tol:
        raise InvariantError(f"Oracle 1 clause 1: cut capacity {cut_cap:g} exceeds (phi/2) sum d(C_A) + phi eps d(V)")

    # deletions of under-matched sources
    new_dt = dt_prev.copy()
    for i in res.aprime:
        A = state.comps[i].verts
        C = res.cuts.get(i, np.zeros(0, dtype=np.int64))
        L = splits[i][0]
        cand = np.setdiff1d(L, C)
        under = cand[Msum[cand] < state.d[cand] / 2]
        new_dt[under] = 0.0
    # split components and update counters
    new_comps: list[Component] = []
    for i, c in enumerate(state.comps):
        if not c.active:
            new_comps.append(c)
            continue
        C = res.cuts.get(i, np.zeros(0, dtype=np.int64)) if i in res.aprime else np.zeros(0, dtype=np.int64)
        parts = [np.sort(C), np.setdiff1d(c.verts, C)] if C.size else [c.verts]
        for S in parts:
            if S.size == 0:
                continue
            x = c.x + 1 if i in res.aprime else c.x
            if new_dt[S].sum() <= 15 * state.d[S].sum() / 16:
                new_dt[S] = 0.0
            comp = Component(S, True, x)
            new_comps.append(comp)
    state.d_t = new_dt
    for comp in new_comps:
        if comp.active:
            state._inactivate_if_needed(comp)
    state.comps = new_comps
    state.t += 1
    deleted = np.flatnonzero((new_dt == 0) & (dt_prev > 0))
    rd = MatchingRound(state.t, res.flow.copy(), pu, pw, w, inc, M, Msum, list(res.aprime),
                       dict(res.cuts), cut_cap, deleted)
    state.rounds.append(rd)
    state.cut_total += cut_cap
    state.stacked += np.abs(res.flow)
    if state.F is not None:
        state.F = explicit_flow_matrix(state)
    _check_round_invariants(state, dt_prev, charge)
    return rd


def _check_round_invariants(state: CutMatchingState, dt_prev: np.ndarray, charge: float) -> None:
    G, cfg, t = state.G, state.config, state.t
    tol = 1e-9 * max(1.0, state.d.sum())
    if np.any(state.d_t > dt_prev) or np.any((state.d_t != 0) & (state.d_t != state.d)):
        raise InvariantError("weighting must satisfy d_t <= d_{t-1} with d_t(u) in {0, d(u)}")
    if G.m and np.max(state.stacked / G.cap) > (2 * t / cfg.phi) * (1 + 1e-9):
        raise InvariantError("stacked matchings exceed congestion 2t/phi")
    lost = state.d.sum() - state.d_t.sum()
    if lost > 64 * t * cfg.eps1 * state.d.sum() + tol:
        raise InvariantError(f"deleted demand {lost:g} exceeds 64 t eps1 d(V)")
    phi_now = state.counter_potential()
    if phi_now > state.phi_history[-1] + tol * max(1.0, state.x_max):
        raise InvariantError("counter potential increased")
    state.phi_history.append(phi_now)
    if state.F is not None:
        live = state.d_t > 0
        rows = state.F.sum(axis=1)
        if not np.allclose(rows[live], state.d[live], rtol=1e-9, atol=1e-9):
            raise InvariantError("flow matrix row sums differ from d(u)")
    lab = state.labels()
    if np.any(lab < 0):
        raise InvariantError("components do not cover V")


@dataclass
class DecompositionTranscript:
    G: CapGraph
    d: np.ndarray
    d_T: np.ndarray
    comps: list[Component]
    rounds: list[MatchingRound]
    config: CutMatchingConfig
    T: int
    x_max: float
    projections: list[ProjectionRound] = field(default_factory=list)
    phi_history: list[float] = field(default_factory=list)
    cut_total: float = 0.0

    @property
    def partition(self) -> VertexPartition:
        return VertexPartition([c.verts for c in self.comps], n=self.G.n)

    @property
    def rounds_run(self) -> int:
        return len(self.rounds)


class Decomposition(NamedTuple):
    partition: VertexPartition
    d_T: np.ndarray
    transcript: DecompositionTranscript


def run_decomposition(G: CapGraph, d, config: CutMatchingConfig | None = None,
                      oracle1: MatchingOracle | Callable | None = None, *, keep_projections: bool = False) -> Decomposition:
    config = config or CutMatchingConfig()
    oracle1 = oracle1 or ExactMatchingOracle()
    state = CutMatchingState(G, d, config)
    projs = []
    while state.t < state.T and state.active:
        r = state.rng.standard_normal(G.n)
        r /= np.linalg.norm(r)
        p = compute_projections(state, r)
        if state.F is not None:
            pe = _safe_div(state.F @ r, state.d)
            if not np.allclose(p, pe, rtol=1e-9, atol=1e-9):
                raise InvariantError("recursive projections disagree with the explicit flow matrix")
        splits = {i: cut_step(state, p, state.comps[i].verts) for i in state.active}
        if keep_projections:
            projs.append(ProjectionRound(r, p, splits))
        inst = build_matching_instance(state, splits)
        res = oracle1(state, inst, splits)
        apply_round(state, splits, res, inst)
    tr = DecompositionTranscript(G, state.d, state.d_t.copy(), state.comps, state.rounds, config, state.T,
                                 state.x_max, projs, state.phi_history, state.cut_total)
    return Decomposition(tr.partition, state.d_t.copy(), tr)


def potential_psi(state_or_tr, A, F: np.ndarray | None = None) -> float:
    """psi_t(A) from an explicit flow matrix (test mode, n <= 512)."""
    G = state_or_tr.G
    if G.n > 512:
        raise ValueError("potential_psi limited to n <= 512")
    d = state_or_tr.d
    d_t = state_or_tr.d_t if hasattr(state_or_tr, "d_t") else state_or_tr.d_T
    if F is None:
        F = explicit_flow_matrix(state_or_tr)
    A = np.asarray(list(A), dtype=np.int64)
    live = A[d_t[A] > 0]
    if live.size <= 1:
        return 0.0
    dA = d_t[live].sum()
    mu = F[live].sum(axis=0) / dA
    rows = F[live] / d[live][:, None]
    return float(dA * np.sum(d[live] * np.sum((rows - mu) ** 2, axis=1)))


# -- mixing witness ------------------------------------------------------------

@dataclass
class MultiFlow:
    G: CapGraph
    flows: np.ndarray  # m x k, one column per commodity
    demands: np.ndarray  # n x k

    def congestion(self) -> float:
        if self.G.m == 0 or self.flows.size == 0:
            return 0.0
        return float(np.max(np.abs(self.flows).sum(axis=1) / self.G.cap))

    def conservation_error(self) -> float:
        if self.flows.size == 0:
            return 0.0
        G = self.G
        out = np.zeros((G.n, self.flows.shape[1]))
        np.add.at(out, G.tail, self.flows)
        np.add.at(out, G.head, -self.flows)
        return float(np.max(np.abs(out - self.demands)))

    def total(self) -> np.ndarray:
        return self.flows.sum(axis=1)


def _as_demand_matrix(tr: DecompositionTranscript, demands) -> np.ndarray:
    n = tr.G.n
    if isinstance(demands, dict):
        cols = [np.asarray(v, dtype=np.float64) for _, v in sorted(demands.items())]
    elif isinstance(demands, np.ndarray) and demands.ndim == 2:
        cols = [demands[:, j] for j in range(demands.shape[1])]
    else:
        cols = [np.asarray(v, dtype=np.float64) for v in demands]
    B = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
    if B.shape[0] != n:
        raise ValueError("demand length does not match vertex count")
    return B


def mix_route(tr: DecompositionTranscript, B: np.ndarray, *, finish: bool = True) -> MultiFlow:
    """Route the columns of B through the recorded matchings, unchecked."""
    G, d = tr.G, tr.d
    X = B.copy()
    flows = np.zeros((G.m, B.shape[1]))
    half_inv = np.where(d > 0, 0.5 / np.where(d > 0, d, 1), 0.0)
    for rd in reversed(tr.rounds):
        if len(rd.weights) == 0:
            continue
        Q = X * half_inv[:, None]
        pf = rd.weights[:, None] * (Q[rd.pu] - Q[rd.pw])
        flows += rd.inc @ pf
        np.add.at(X, rd.pu, -pf)
        np.add.at(X, rd.pw, pf)
    if finish:
        scale = max(1.0, float(d.sum()))
        for j in range(X.shape[1]):
            x = X[:, j]
            if np.max(np.abs(x)) > 1e-12 * scale:
                supp = np.abs(x) > 0
                if abs(x.sum()) <= 1e-9 * scale:
                    x = np.where(supp, x - x.sum() / supp.sum(), 0.0)  # float drift only
                res = min_congestion_route(G, x)
                if not res.feasible:
                    raise InvariantError("mixing residual is not routable")
                flows[:, j] += res.flow.f
    return MultiFlow(G, flows, B)


def route_respecting_demands(tr: DecompositionTranscript, demands) -> MultiFlow:
    """Multicommodity routing of demands respecting d_T on each final component."""
    B = _as_demand_matrix(tr, demands)
    lab = tr.partition.block_of
    scale = max(1.0, float(tr.d.sum()))
    for j in range(B.shape[1]):
        b = B[:, j]
        supp = np.flatnonzero(np.abs(b) > 0)
        if supp.size == 0:
            continue
        if np.unique(lab[supp]).size > 1:
            raise ValueError(f"demand {j} spans several components")
        if np.any(np.abs(b) > tr.d_T * (1 + 1e-12) + 1e-12):
            raise ValueError(f"demand {j} exceeds d_T")
        if abs(b.sum()) > 1e-9 * scale:
            raise ValueError(f"demand {j} does not sum to zero")
    return mix_route(tr, B)
