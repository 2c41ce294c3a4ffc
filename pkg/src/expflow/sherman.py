"""Almost-route flows on residual graphs, the cut-matching oracle built on
them, and approximate max flow through a congestion approximator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .exact import max_flow_arrays
from .graph import CapGraph, FlowAssignment, StructuralError

TOL = 1e-9


class Unconverged(RuntimeError):
    """The first-order backend hit its iteration cap without a certificate."""


class ContractError(AssertionError):
    """A returned object failed its own dichotomy check."""


def family_matrix(n: int, family: Sequence[np.ndarray]) -> sparse.csr_matrix:
    rows, cols = [], []
    for i, C in enumerate(family):
        C = np.asarray(C, dtype=np.int64)
        rows.append(np.full(C.size, i))
        cols.append(C)
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    return sparse.csr_matrix((np.ones(r.size), (r, c)), shape=(len(family), n))


def check_laminar(n: int, family: Sequence[np.ndarray]) -> bool:
    """Pairwise nested-or-disjoint, checked via a containment sweep."""
    sets = sorted((frozenset(np.asarray(C).tolist()) for C in family), key=len, reverse=True)
    owner = [-1] * n
    for i, S in enumerate(sets):
        parents = {owner[v] for v in S}
        if len(parents) != 1:
            return False
        p = parents.pop()
        if p >= 0 and not S <= sets[p]:
            return False
        for v in S:
            owner[v] = i
    return True


@dataclass
class AlmostRouteInput:
    graph: CapGraph
    s: int
    t: int
    eps: float
    tau: float
    family: list[np.ndarray]
    cap_fwd: np.ndarray | None = None
    cap_bwd: np.ndarray | None = None

    def __post_init__(self):
        if self.eps <= 0 or self.tau < 0:
            raise ValueError("need eps > 0 and tau >= 0")
        G = self.graph
        if self.cap_fwd is None:
            self.cap_fwd = G.cap.copy()
        if self.cap_bwd is None:
            self.cap_bwd = G.cap.copy()
        self.family = [np.asarray(C, dtype=np.int64) for C in self.family]

    def delta(self) -> np.ndarray:
        """Undirected boundary capacity of each family set."""
        G = self.graph
        R = family_matrix(G.n, self.family)
        inc = R[:, G.tail] - R[:, G.head]
        return np.asarray(abs(inc) @ G.cap).ravel()

    def demand(self) -> np.ndarray:
        b = np.zeros(self.graph.n)
        b[self.s] += self.tau
        b[self.t] -= self.tau
        return b


@dataclass
class AlmostRouteOutput:
    kind: str
    cut: np.ndarray | None = None
    flow: FlowAssignment | None = None
    cut_value: float = math.nan
    residual_ratio: float = math.nan
    iterations: int = 0


def residual_cut_value(inp: AlmostRouteInput, S: np.ndarray) -> float:
    """Residual capacity leaving the vertex mask ``S``."""
    G = inp.graph
    a, b = S[G.tail], S[G.head]
    return float(inp.cap_fwd[a & ~b].sum() + inp.cap_bwd[b & ~a].sum())


def verify_output(inp: AlmostRouteInput, out: AlmostRouteOutput) -> AlmostRouteOutput:
    G = inp.graph
    if out.kind == "cut":
        S = out.cut
        if not S[inp.s] or S[inp.t]:
            raise ContractError("cut does not separate s from t")
        out.cut_value = residual_cut_value(inp, S)
        if not out.cut_value < inp.tau:
            raise ContractError(f"cut value {out.cut_value} not below tau {inp.tau}")
        return out
    f = out.flow.f
    scale = max(1.0, float(np.abs(inp.cap_fwd).max(initial=0.0)))
    if np.any(f > inp.cap_fwd + TOL * scale) or np.any(-f > inp.cap_bwd + TOL * scale):
        raise ContractError("flow exceeds residual capacity")
    d = np.zeros(G.n)
    np.add.at(d, G.tail, f)
    np.add.at(d, G.head, -f)
    resid = inp.demand() - d
    delta = inp.delta()
    R = family_matrix(G.n, inp.family)
    rc = np.abs(R @ resid)
    slack = inp.eps * delta + TOL * max(1.0, inp.tau)
    if np.any(rc > slack):
        raise ContractError("residual demand exceeds eps * delta on a family set")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(delta > 0, rc / delta, 0.0)
    out.residual_ratio = float(ratio.max(initial=0.0))
    return out


def almost_route_exact(inp: AlmostRouteInput) -> AlmostRouteOutput:
    G = inp.graph
    if inp.tau <= 0 or inp.s == inp.t:
        return AlmostRouteOutput("flow", flow=FlowAssignment.zeros(G))
    src = np.zeros(G.n)
    snk = np.zeros(G.n)
    src[inp.s] = inp.tau
    snk[inp.t] = inp.tau
    val, f, reach, _, _ = max_flow_arrays(G.n, G.tail, G.head, inp.cap_fwd, inp.cap_bwd, src, snk)
    if val < inp.tau * (1 - 1e-12):
        S = reach.copy()
        S[inp.s] = True
        if residual_cut_value(inp, S) < inp.tau:
            return AlmostRouteOutput("cut", cut=S)
    return AlmostRouteOutput("flow", flow=FlowAssignment(G, f))


@dataclass
class BackendB:
    """Projected accelerated gradient on a soft-max of scaled residuals.

    The flow lives in the residual box ``[-cap_bwd, cap_fwd]`` so the
    congestion constraint is hard; the potential is the log-sum-exp of
    ``+-R r / eps`` with one row per family set scaled by ``1/delta``.
    """

    K_iter: float = 400.0
    check_every: int = 25
    power_iters: int = 50
    seed: int = 0
    max_iter: int = 20000  # hard ceiling on top of K_iter / eps^2

    def __call__(self, inp: AlmostRouteInput) -> AlmostRouteOutput:
        G = inp.graph
        if inp.tau <= 0 or inp.s == inp.t:
            return AlmostRouteOutput("flow", flow=FlowAssignment.zeros(G))
        delta = inp.delta()
        keep = delta > 0
        fam = [C for C, k in zip(inp.family, keep) if k]
        if not fam:
            return almost_route_exact(inp)  # no constraints to smooth over
        R = sparse.diags(1.0 / delta[keep]) @ family_matrix(G.n, fam)
        B = sparse.csr_matrix((np.r_[np.ones(G.m), -np.ones(G.m)],
                               (np.r_[G.tail, G.head], np.r_[np.arange(G.m), np.arange(G.m)])),
                              shape=(G.n, G.m))
        M = (R @ B).tocsr() / inp.eps
        b = R @ inp.demand() / inp.eps
        k = M.shape[0]
        mu = 1.0 / (4.0 * math.log(2 * k))
        L = self._opnorm(M) ** 2 / mu
        step = 1.0 / (2.0 * L) if L > 0 else 1.0
        lo, hi = -inp.cap_bwd, inp.cap_fwd
        cap_it = int(min(math.ceil(self.K_iter / inp.eps ** 2), self.max_iter))
        f = np.zeros(G.m)
        y = f.copy()
        theta = 1.0
        for it in range(1, cap_it + 1):
            r = b - M @ y
            w = self._softmax_grad(r, mu)
            g = -(M.T @ w)
            f_new = np.clip(y - step * g, lo, hi)
            th_new = 0.5 * (1 + math.sqrt(1 + 4 * theta * theta))
            y = f_new + ((theta - 1) / th_new) * (f_new - f)
            f, theta = f_new, th_new
            if it % self.check_every == 0 or it == cap_it:
                out = self._certify(inp, f, M, b, mu, it)
                if out is not None:
                    return out
        raise Unconverged(f"no certificate after {cap_it} iterations")

    @staticmethod
    def _softmax_grad(r: np.ndarray, mu: float) -> np.ndarray:
        z = np.concatenate([r, -r]) / mu
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        k = r.size
        return p[:k] - p[k:]

    def _opnorm(self, M) -> float:
        rng = np.random.default_rng(self.seed)
        x = rng.standard_normal(M.shape[1])
        nrm = 0.0
        for _ in range(self.power_iters):
            x = M.T @ (M @ x)
            nrm = float(np.linalg.norm(x))
            if nrm == 0:
                return 0.0
            x /= nrm
        return math.sqrt(nrm)

    def _certify(self, inp, f, M, b, mu, it) -> AlmostRouteOutput | None:
        r = b - M @ f
        if np.abs(r).max() <= 1.0:
            out = AlmostRouteOutput("flow", flow=FlowAssignment(inp.graph, f.copy()), iterations=it)
            try:
                return verify_output(inp, out)
            except ContractError:
                pass
        pot = np.asarray(_vertex_potential(inp, r, mu)).ravel()
        S = sweep_cut(inp, pot)
        if S is not None:
            return verify_output(inp, AlmostRouteOutput("cut", cut=S, iterations=it))
        return None


def _vertex_potential(inp: AlmostRouteInput, r: np.ndarray, mu: float) -> np.ndarray:
    delta = inp.delta()
    keep = delta > 0
    fam = [C for C, k in zip(inp.family, keep) if k]
    R = sparse.diags(1.0 / delta[keep]) @ family_matrix(inp.graph.n, fam)
    return R.T @ BackendB._softmax_grad(r, mu)


def sweep_cut(inp: AlmostRouteInput, pot: np.ndarray) -> np.ndarray | None:
    """Best threshold set of ``pot`` containing s and not t, if its residual
    capacity is below tau."""
    G = inp.graph
    order = np.lexsort((np.arange(G.n), -pot))
    S = np.zeros(G.n, dtype=bool)
    best, best_val = None, inp.tau
    for v in order:
        if v == inp.t:
            break
        S[v] = True
        if not S[inp.s]:
            continue
        val = residual_cut_value(inp, S)
        if val < best_val * (1 - 1e-12):
            best, best_val = S.copy(), val
    return best


def almost_route(inp: AlmostRouteInput, backend: str | Callable = "exact") -> AlmostRouteOutput:
    if callable(backend):
        out = backend(inp)
    elif backend == "exact":
        out = almost_route_exact(inp)
    elif backend == "sherman":
        out = BackendB()(inp)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return verify_output(inp, out)


# -- s-t augmented graphs ----------------------------------------------------

def _keys(tail, head, N) -> np.ndarray:
    return np.asarray(tail, dtype=np.int64) * N + np.asarray(head, dtype=np.int64)


def _augment(G: CapGraph, out_cap: np.ndarray, in_cap: np.ndarray):
    """``G`` plus a super source ``s = n`` with edges ``s -> u`` of capacity
    ``out_cap[u]`` and a super sink ``t = n + 1`` with edges ``w -> t``.

    Returns the graph, its directional capacities and the index of every
    super edge (``-1`` where absent).
    """
    n = G.n
    su = np.flatnonzero(out_cap > 0)
    tw = np.flatnonzero(in_cap > 0)
    tail = np.concatenate([G.tail, su, tw])
    head = np.concatenate([G.head, np.full(su.size, n), np.full(tw.size, n + 1)])
    cap = np.concatenate([G.cap, out_cap[su], in_cap[tw]])
    H = CapGraph.from_arrays(n + 2, tail, head, cap)
    N = n + 2
    hk = _keys(H.tail, H.head, N)
    s_edge = np.full(n, -1, dtype=np.int64)
    t_edge = np.full(n, -1, dtype=np.int64)
    s_edge[su] = np.searchsorted(hk, _keys(su, np.full(su.size, n), N))
    t_edge[tw] = np.searchsorted(hk, _keys(tw, np.full(tw.size, n + 1), N))
    g_edge = np.searchsorted(hk, _keys(G.tail, G.head, N))
    fwd = H.cap.copy()
    bwd = H.cap.copy()
    # s -> u runs head to tail on the stored edge (u, s); w -> t runs tail to head
    fwd[s_edge[su]] = 0.0
    bwd[t_edge[tw]] = 0.0
    return H, fwd, bwd, s_edge, t_edge, g_edge


def _spread(H: CapGraph, f: np.ndarray, resid: np.ndarray, n: int, s_edge, t_edge, weight) -> np.ndarray:
    """Push the residual left on s and t onto the terminal vertices in
    proportion to ``weight``; returns the added flow."""
    f2 = np.zeros(H.m)
    for term, edges, sign in ((n, s_edge, -1.0), (n + 1, t_edge, 1.0)):
        r = resid[term] if term == n else -resid[term]
        on = np.flatnonzero(edges >= 0)
        w = weight[on]
        if r == 0 or on.size == 0 or w.sum() <= 0:
            continue
        f2[edges[on]] += sign * r * w / w.sum()
    return f2


def _divergence(G: CapGraph, f: np.ndarray) -> np.ndarray:
    d = np.zeros(G.n)
    np.add.at(d, G.tail, f)
    np.add.at(d, G.head, -f)
    return d


def _route_scaled(hier, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Route ``b`` through the hierarchy, shrinking it into the family
    bounds first and scaling the flow back up."""
    k = max(1.0, hier.estimate_congestion(b))
    if not math.isfinite(k):
        raise ContractError("residual demand is not routable through the approximator")
    fl, bp = hier.route_full(b / k, balanced=False)
    return fl.f * k, bp * k


def _binary_search(solve, lo_tau: float, hi_tau: float, stop):
    """Largest tau with a flow and smallest with a cut, both from ``solve``."""
    best_flow = best_cut = None
    out = solve(hi_tau)
    if out.kind == "flow":
        return (hi_tau, out), None
    best_cut = (hi_tau, out)
    if lo_tau > 0:
        out = solve(lo_tau)
        if out.kind == "cut":
            return None, (lo_tau, out)
        best_flow = (lo_tau, out)
    else:
        best_flow = (0.0, None)
    for _ in range(200):
        if stop(best_flow[0], best_cut[0]) or best_cut[0] - best_flow[0] <= 1e-12 * hi_tau:
            break
        mid = 0.5 * (best_flow[0] + best_cut[0])
        out = solve(mid)
        if out.kind == "flow":
            best_flow = (mid, out)
        else:
            best_cut = (mid, out)
    return best_flow, best_cut


# -- the cut-matching oracle ------------------------------------------------

class HierarchyMatchingOracle:
    """Oracle 1 answered by almost-route on the component graph with a super
    source and sink, the residual repaired through a partial hierarchy.

    ``eps`` overrides the almost-route slack; by default it is
    ``eps_hat / (4320 alpha beta L^2)``.
    """

    def __init__(self, hier, backend: str | Callable = "exact", eps_hat: float | None = None,
                 eps: float | None = None):
        self.hier = hier
        self.backend = backend
        self.eps_hat = eps_hat
        self.eps = eps

    def __call__(self, state, inst, splits):
        return matching_oracle(state, inst, splits, self.hier, self.backend,
                               eps_hat=self.eps_hat, eps=self.eps)


def matching_oracle(state, inst, splits, hierarchy, backend: str | Callable = "exact", *,
                    eps_hat: float | None = None, eps: float | None = None):
    from .cutmatching import InvariantError, MatchingOracleResult
    from .paths import path_decompose

    G, hier = state.G, hierarchy
    n = G.n
    eh = state.config.eps1 if eps_hat is None else eps_hat
    if eps is None:
        eps = eh / (4320.0 * hier.alpha * hier.beta * hier.L ** 2)
    src, snk = inst.sources, inst.sinks
    dV = float(state.d.sum())
    total = float(src.sum())
    lab = inst.labels

    # G_t on the component-restricted scaled graph; H on all of G for the repair
    Gt, fwd, bwd, s_t, t_t, g_t = _augment(inst.graph, src, snk)
    H, _, _, s_h, t_h, g_h = _augment(G, src, snk)
    fam = [np.asarray(C, dtype=np.int64) for C in hier.family.sets] + [np.array([n]), np.array([n + 1])]
    calls = [0]

    def solve(tau):
        calls[0] += 1
        inp = AlmostRouteInput(Gt, n, n + 1, eps, tau, fam, fwd, bwd)
        return almost_route(inp, backend)

    stats = {"eps": eps, "eps_hat": eh, "calls": 0}
    if total <= 0:
        return MatchingOracleResult([i for i in state.active], {i: np.zeros(0, dtype=np.int64) for i in state.active},
                                    np.zeros(G.m), np.zeros(n), 0.0, stats)
    lo0 = min(eh * dV, total)
    fl, ct = _binary_search(solve, lo0, total, lambda lo, hi: hi - lo <= eh * dV / 2)
    stats["calls"] = calls[0]
    S = np.zeros(n, dtype=bool) if ct is None else ct[1].cut[:n]
    tau = 0.0 if fl is None else fl[0]
    stats["tau"] = tau
    stats["cut_tau"] = None if ct is None else ct[0]

    F = np.zeros(H.m)
    if fl is not None and fl[1] is not None and tau > eh * dV:
        f1 = fl[1].flow.f
        # G_t edge -> H edge: interior edges through edge_map, terminals by vertex
        F[g_h[inst.edge_map]] += f1[g_t]
        on = s_t >= 0
        F[s_h[on]] += f1[s_t[on]]
        on = t_t >= 0
        F[t_h[on]] += f1[t_t[on]]
        dem = np.zeros(n + 2)
        dem[n], dem[n + 1] = tau, -tau
        resid = dem - _divergence(Gt, f1)
        f2 = _spread(H, F, resid, n, s_h, t_h, state.d)
        F += f2
        resid = dem - _divergence(H, F)
        b = resid[:n]
        if np.abs(b).max(initial=0.0) > TOL * max(1.0, tau):
            b = b - b.sum() * (np.abs(b) > 0) / max(1, np.count_nonzero(b))
            f3, _ = _route_scaled(hier, b)
            F[g_h] += f3
        D = path_decompose(H, F, rel_tol=1e-7)
        ok = (D.starts == n) & (D.ends == n + 1)
        pid = D.edge_path_index()
        e = D.edges
        inner = (H.tail[e] < n) & (H.head[e] < n)
        bad_e = inner & ((lab[np.minimum(H.tail[e], n - 1)] != lab[np.minimum(H.head[e], n - 1)])
                         | (lab[np.minimum(H.tail[e], n - 1)] < 0))
        bad = np.zeros(len(D), dtype=bool)
        bad[pid[bad_e]] = True
        keep = ok & ~bad
        stats["dropped_paths"] = int((~keep).sum())
        F = D.select(keep).assemble() / (1.0 + eh / 25.0)
    else:
        F = np.zeros(H.m)
    f = F[g_h]
    routed = np.zeros(n)
    on = s_h >= 0
    routed[on] = -F[s_h[on]]
    if np.any(routed > src * (1 + 1e-9) + TOL):
        raise InvariantError("matching oracle flow leaves a source above its supply")
    if np.any(f[(lab[G.tail] != lab[G.head]) | (lab[G.tail] < 0)] != 0):
        raise InvariantError("matching oracle flow uses an edge between components")

    dt = state.d_t
    aprime, cuts = [], {}
    drop_unsat = drop_sink = 0
    cut_cap = 0.0
    for i in state.active:
        A = state.comps[i].verts
        C = A[S[A]]
        rest = np.setdiff1d(A, C)
        dA = float(dt[A].sum())
        if routed[rest].sum() < src[rest].sum() - 2 * eh * state.d[A].sum():
            drop_unsat += 1
            continue
        if snk[C].sum() >= dA / 3 or dt[C].sum() > dA / 2:
            drop_sink += 1
            continue
        aprime.append(i)
        cuts[i] = C
        inC = np.zeros(n, dtype=bool)
        inC[C] = True
        inA = np.zeros(n, dtype=bool)
        inA[A] = True
        cut_cap += float(G.cap[inA[G.tail] & inA[G.head] & (inC[G.tail] != inC[G.head])].sum())
    stats.update(dropped_unsaturated=drop_unsat, dropped_sink=drop_sink, value=float(routed.sum()))
    return MatchingOracleResult(aprime, cuts, f, routed, cut_cap, stats)


# -- approximate max flow ---------------------------------------------------

@dataclass
class MaxFlowApprox:
    flow: FlowAssignment
    value: float
    upper: float
    calls: int
    stats: dict = field(default_factory=dict)


def approx_max_flow(G: CapGraph, b, eps: float, hierarchy=None, backend: str | Callable = "exact") -> MaxFlowApprox:
    """A feasible flow sending as much of ``b`` as possible, within ``1 - eps``.

    Supplies are ``b+`` and demands ``b-``; the flow's net outflow at each
    vertex lies between zero and its entry of ``b``. ``hierarchy`` must be
    complete when the backend leaves a residual to repair.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (G.n,):
        raise ValueError("demand length does not match vertex count")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    n = G.n
    bp, bm = np.maximum(b, 0.0), np.maximum(-b, 0.0)
    H, fwd, bwd, s_e, t_e, g_e = _augment(G, bp, bm)
    upper = min(float(bp.sum()), float(bm.sum()))
    if upper <= 0 or G.m == 0:
        return MaxFlowApprox(FlowAssignment.zeros(G), 0.0, 0.0, 0)
    if hierarchy is not None:
        if not hierarchy.complete:
            raise ContractError("approx_max_flow needs a complete hierarchy")
        Q = hierarchy.quality
        fam = [np.asarray(C, dtype=np.int64) for C in hierarchy.family.sets]
    else:
        Q = 1.0
        fam = [np.arange(n)]
    fam = fam + [np.array([n]), np.array([n + 1])]
    eps_ar = eps / (4.0 * Q)
    calls = [0]

    def solve(tau):
        calls[0] += 1
        return almost_route(AlmostRouteInput(H, n, n + 1, eps_ar, tau, fam, fwd, bwd), backend)

    fl, ct = _binary_search(solve, 0.0, upper, lambda lo, hi: lo >= (1 - eps / 2) * hi)
    if fl is None or fl[1] is None:
        return MaxFlowApprox(FlowAssignment.zeros(G), 0.0, ct[0] if ct else upper, calls[0])
    tau, out = fl
    F = out.flow.f.copy()
    dem = np.zeros(n + 2)
    dem[n], dem[n + 1] = tau, -tau
    resid = dem - _divergence(H, F)
    repaired = False
    if np.abs(resid).max() > TOL * max(1.0, tau):
        if hierarchy is None:
            raise ContractError("a residual remains and no hierarchy was given to route it")
        F += _spread(H, F, resid, n, s_e, t_e, np.where(b != 0, 1.0, 0.0) * G.deg)
        resid = dem - _divergence(H, F)
        r = resid[:n]
        r = r - r.sum() * (np.abs(r) > 0) / max(1, np.count_nonzero(r))
        f3, _ = _route_scaled(hierarchy, r)
        F[g_e] += f3
        repaired = True
    from .paths import path_decompose
    D = path_decompose(H, F, rel_tol=1e-7)
    D = D.select((D.starts == n) & (D.ends == n + 1))
    F = D.assemble()
    cong = FlowAssignment(H, F).congestion()
    # directional capacities of the terminal edges
    over = 0.0
    on = s_e >= 0
    if on.any():
        over = max(over, float(np.max(np.maximum(F[s_e[on]], 0.0) / H.cap[s_e[on]])))
    on = t_e >= 0
    if on.any():
        over = max(over, float(np.max(np.maximum(-F[t_e[on]], 0.0) / H.cap[t_e[on]])))
    if over > 0:
        raise ContractError("terminal edge carries flow against its direction")
    if cong > 1.0:
        F /= cong
    f = FlowAssignment(G, F[g_e])
    value = float(np.maximum(f.demand(), 0.0).sum())
    hi = ct[0] if ct is not None else upper
    return MaxFlowApprox(f, value, hi, calls[0], {"tau": tau, "repaired": repaired, "congestion_before": cong})


def approx_st_flow(G: CapGraph, s: int, t: int, eps: float, hierarchy=None,
                   backend: str | Callable = "exact") -> MaxFlowApprox:
    b = np.zeros(G.n)
    cap = min(G.deg[s], G.deg[t])
    b[s], b[t] = cap, -cap
    return approx_max_flow(G, b, eps, hierarchy, backend)
