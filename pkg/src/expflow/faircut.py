"""One-sided fair cuts from an almost-route solver and a routing family."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exact import min_congestion_route
from .graph import CapGraph, FlowAssignment, StructuralError
from .sherman import AlmostRouteInput, almost_route, check_laminar, family_matrix

REL = 1e-9


class FairCutError(AssertionError):
    pass


def exact_route_fn(G: CapGraph) -> Callable[[np.ndarray], FlowAssignment]:
    def route(b: np.ndarray) -> FlowAssignment:
        res = min_congestion_route(G, b)
        if not res.feasible:
            raise FairCutError("residual demand is not routable")
        return res.flow
    return route


@dataclass
class FairCutInput:
    G: CapGraph
    U: np.ndarray
    t: int
    family: list[np.ndarray]
    route_fn: Callable[[np.ndarray], FlowAssignment] | None = None
    q: float = 1.0
    eps: float = 0.1
    c2: float = 4.0
    threshold: float | None = None

    def __post_init__(self):
        G = self.G
        U = np.asarray(self.U)
        if U.dtype != bool:
            mask = np.zeros(G.n, dtype=bool)
            mask[U.astype(np.int64)] = True
            U = mask
        self.U = U.copy()
        U = self.U
        if not U[self.t]:
            raise StructuralError("t must lie in U")
        self.family = [np.unique(np.asarray(C, dtype=np.int64)) for C in self.family]
        for C in self.family:
            if np.any(C == self.t):
                raise StructuralError("family sets must avoid t")
        if not check_laminar(G.n, self.family):
            raise StructuralError("family is not laminar")
        if self.route_fn is None:
            self.route_fn = exact_route_fn(G)
        if self.threshold is None:
            self.threshold = 1.0 / (G.n ** 3 * G.W)

    @property
    def eps_prime(self) -> float:
        return self.eps / (self.c2 * max(1, math.ceil(math.log2(max(2.0, self.G.n * self.G.W)))))


@dataclass
class FairCutResult:
    A: np.ndarray
    flow: FlowAssignment
    phi_history: list[float]
    t_received: float
    delta_U: float
    delta_A: float
    prune_ratio: float = 0.0
    star_ratio: float = 0.0
    residual_congestion: list[float] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)


def residual_caps(G: CapGraph, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return G.cap - f, G.cap + f


def inflow_vector(G: CapGraph, B: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Residual capacity entering each vertex of ``B`` from outside."""
    rf, rb = residual_caps(G, f)
    out = np.zeros(G.n)
    into_head = ~B[G.tail] & B[G.head]
    into_tail = B[G.tail] & ~B[G.head]
    np.add.at(out, G.head[into_head], rf[into_head])
    np.add.at(out, G.tail[into_tail], rb[into_tail])
    return out


def potential(G: CapGraph, A: np.ndarray, f: np.ndarray) -> float:
    return float(inflow_vector(G, A, f).sum())


def family_delta(G: CapGraph, family: Sequence[np.ndarray]) -> np.ndarray:
    R = family_matrix(G.n, family)
    return np.asarray(abs(R[:, G.tail] - R[:, G.head]) @ G.cap).ravel()


def prune_candidates(G: CapGraph, A: np.ndarray, f: np.ndarray, family: Sequence[np.ndarray],
                     delta: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Drop family sets, largest first, whose entering residual exceeds 2 deltaC.

    Returns the surviving set and the largest ratio of entering residual to
    deltaC over the family after the scan (at most 4 by construction).
    """
    if delta is None:
        delta = family_delta(G, family)
    B = np.asarray(A, dtype=bool).copy()
    order = sorted(range(len(family)), key=lambda i: (-len(family[i]), i))
    into = inflow_vector(G, B, f)
    for i in order:
        C = family[i]
        if into[C].sum() > 2 * delta[i] * (1 + REL):
            B[C] = False
            into = inflow_vector(G, B, f)
    worst = 0.0
    for i, C in enumerate(family):
        x = float(into[C].sum())
        if x > 4 * delta[i] * (1 + REL) + REL:
            raise FairCutError(f"pruning bound broken on family set {i}")
        if delta[i] > 0:
            worst = max(worst, x / delta[i])
    return B, worst


@dataclass
class StarGraph:
    H: CapGraph
    cap_fwd: np.ndarray
    cap_bwd: np.ndarray
    s: int
    t: int
    tau: float
    family: list[np.ndarray]
    verts: np.ndarray          # H vertex i < s is G vertex verts[i]
    edge_of: np.ndarray        # H edge -> G edge, -1 for star edges
    star_vertex: np.ndarray    # H edge -> G vertex at the far end of a star edge, else -1
    into: np.ndarray


def build_star_graph(G: CapGraph, B: np.ndarray, f: np.ndarray, t: int,
                     family: Sequence[np.ndarray], delta: np.ndarray | None = None) -> tuple[StarGraph, float]:
    if delta is None:
        delta = family_delta(G, family)
    verts = np.flatnonzero(B)
    nb = verts.size
    relabel = np.full(G.n, -1, dtype=np.int64)
    relabel[verts] = np.arange(nb)
    s = nb
    into = inflow_vector(G, B, f)
    inner = B[G.tail] & B[G.head]
    star = verts[into[verts] > 0]
    tails = np.concatenate([relabel[G.tail[inner]], relabel[star]])
    heads = np.concatenate([relabel[G.head[inner]], np.full(star.size, s)])
    caps = np.concatenate([G.cap[inner], 0.5 * into[star]])
    H = CapGraph.from_arrays(nb + 1, tails, heads, caps)
    key_h = H.tail * (nb + 1) + H.head
    key = tails * (nb + 1) + heads
    pos = np.searchsorted(key_h, key)
    edge_of = np.full(H.m, -1, dtype=np.int64)
    star_vertex = np.full(H.m, -1, dtype=np.int64)
    ninner = int(inner.sum())
    edge_of[pos[:ninner]] = np.flatnonzero(inner)
    star_vertex[pos[ninner:]] = star
    rf, rb = residual_caps(G, f)
    cap_fwd = np.zeros(H.m)
    cap_bwd = np.zeros(H.m)
    cap_fwd[pos[:ninner]] = rf[inner]
    cap_bwd[pos[:ninner]] = rb[inner]
    # star edges are oriented (v, s); their only residual direction is s -> v
    cap_bwd[pos[ninner:]] = into[star]
    fam_h = [relabel[C[B[C]]] for C in family]
    keep = [i for i, C in enumerate(fam_h) if C.size]
    fam_h = [fam_h[i] for i in keep] + [np.array([s])]
    dH = family_delta(H, fam_h)
    ratio = 0.0
    for j, i in enumerate(keep):
        if dH[j] > 3 * delta[i] * (1 + REL) + REL:
            raise FairCutError(f"star graph boundary bound broken on family set {i}")
        if delta[i] > 0:
            ratio = max(ratio, dH[j] / delta[i])
    tau = float(0.5 * into[star].sum())
    return StarGraph(H, cap_fwd, cap_bwd, s, int(relabel[t]), tau, fam_h, verts, edge_of, star_vertex, into), ratio


def map_star_flow(G: CapGraph, B: np.ndarray, f: np.ndarray, sg: StarGraph, fh: np.ndarray) -> np.ndarray:
    """Lift a flow on the star graph to ``G``, splitting each star edge over
    the boundary edges entering its vertex in proportion to residual capacity."""
    out = np.zeros(G.m)
    inner = sg.edge_of >= 0
    out[sg.edge_of[inner]] = fh[inner]
    rf, rb = residual_caps(G, f)
    amount = np.zeros(G.n)
    st = sg.star_vertex >= 0
    amount[sg.star_vertex[st]] = -fh[st]  # positive means s -> v
    if np.any(amount < -REL * max(1.0, sg.tau)):
        raise FairCutError("star flow runs against its residual direction")
    amount = np.clip(amount, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(sg.into > 0, amount / sg.into, 0.0)
    into_head = ~B[G.tail] & B[G.head]
    into_tail = B[G.tail] & ~B[G.head]
    out[into_head] += frac[G.head[into_head]] * rf[into_head]
    out[into_tail] -= frac[G.tail[into_tail]] * rb[into_tail]
    return out


def _net_out(G: CapGraph, f: np.ndarray) -> np.ndarray:
    d = np.zeros(G.n)
    np.add.at(d, G.tail, f)
    np.add.at(d, G.head, -f)
    return d


def route_residual_demands(G: CapGraph, B: np.ndarray, t: int, d_prime: np.ndarray,
                           route_fn, family: Sequence[np.ndarray], delta: np.ndarray,
                           eps_p: float, q: float) -> tuple[np.ndarray, float]:
    """Flow cancelling ``d_prime`` on ``B`` minus t, with the imbalance sent to t.

    Returns the flow and its congestion.
    """
    d2 = np.where(B, d_prime, 0.0)
    d2[t] -= d2.sum()
    scale = max(1.0, float(np.abs(d_prime).max(initial=0.0)))
    R = family_matrix(G.n, family)
    if len(family):
        lhs = np.abs(R @ d2)
        if np.any(lhs > 3 * eps_p / q * delta + REL * scale):
            raise FairCutError("residual demand exceeds the almost-route guarantee")
    if np.all(np.abs(d2) <= REL * scale):
        return np.zeros(G.m), 0.0
    fl = route_fn(-d2)
    cong = fl.congestion()
    if cong > 3 * eps_p * (1 + 1e-6):
        raise FairCutError(f"residual routing congestion {cong:.3g} above 3 eps'")
    return fl.f, cong


def fair_cut(inp: FairCutInput, almost_route_fn: Callable | str = "exact", *,
             max_iter: int | None = None) -> FairCutResult:
    G = inp.G
    U, t = inp.U, inp.t
    family = inp.family
    delta = family_delta(G, family)
    eps_p = inp.eps_prime
    f = np.zeros(G.m)
    A = U.copy()
    delta_U = potential(G, U, f)
    if max_iter is None:
        max_iter = 8 + int(math.ceil(math.log(max(2.0, delta_U / inp.threshold)) / math.log(4 / 3)))
    history: list[float] = []
    res = FairCutResult(A, FlowAssignment(G, f), history, 0.0, delta_U, 0.0)
    t_in = 0.0
    for k in range(max_iter + 1):
        phi = potential(G, A, f)
        if k >= 2 and phi > 0.75 * history[-1] * (1 + REL) + REL * inp.threshold:
            raise FairCutError(f"potential rose from {history[-1]:.6g} to {phi:.6g} at iteration {k}")
        history.append(phi)
        if phi <= inp.threshold:
            break
        if k == max_iter:
            raise FairCutError("potential did not reach the termination threshold")
        B, pr = prune_candidates(G, A, f, family, delta)
        res.prune_ratio = max(res.prune_ratio, pr)
        if not B[t]:
            raise FairCutError("pruning removed t")
        sg, sr = build_star_graph(G, B, f, t, family, delta)
        res.star_ratio = max(res.star_ratio, sr)
        ar = AlmostRouteInput(sg.H, sg.s, sg.t, eps_p / inp.q, sg.tau, sg.family, sg.cap_fwd, sg.cap_bwd)
        out = almost_route(ar, almost_route_fn)
        res.kinds.append(out.kind)
        if out.kind == "cut":
            S = np.zeros(G.n, dtype=bool)
            S[sg.verts] = out.cut[:sg.s]
            A = B & ~S
            continue
        f1 = map_star_flow(G, B, f, sg, out.flow.f)
        d1 = _net_out(G, f1)
        f2, cong = route_residual_demands(G, B, t, d1, inp.route_fn, family, delta, eps_p, inp.q)
        res.residual_congestion.append(cong)
        step = f1 + f2
        t_in += -_net_out(G, step)[t]
        f = f + step
        A = B
    res.A, res.flow, res.t_received = A, FlowAssignment(G, f), t_in
    res.delta_A = float(G.cap[A[G.tail] != A[G.head]].sum())
    check_fair_cut(inp, res)
    return res


def check_fair_cut(inp: FairCutInput, res: FairCutResult) -> None:
    """Measure the three output properties directly on ``res``."""
    G, A, f = inp.G, res.A, res.flow.f
    if not A[inp.t] or np.any(A & ~inp.U):
        raise FairCutError("A must lie in U and contain t")
    if res.delta_A > 4 * res.delta_U * (1 + REL) + REL:
        raise FairCutError(f"deltaA = {res.delta_A:g} exceeds 4 deltaU = {4 * res.delta_U:g}")
    into_head = ~A[G.tail] & A[G.head]
    into_tail = A[G.tail] & ~A[G.head]
    sent = np.where(into_head, f, np.where(into_tail, -f, np.inf))
    low = (1 - inp.eps) * G.cap
    if np.any(sent < low - REL * G.cap):
        e = int(np.flatnonzero(sent < low - REL * G.cap)[0])
        raise FairCutError(f"boundary edge {e} carries {sent[e]:g} of {G.cap[e]:g} into A")
    net = _net_out(G, f)
    inside = A.copy()
    inside[inp.t] = False
    scale = max(1.0, float(G.cap.max(initial=1.0)))
    if np.any(np.abs(net[inside]) > 1e-7 * scale):
        raise FairCutError("nonzero net flow inside A")
    if res.t_received > 4 * res.delta_U * (1 + REL) + REL:
        raise FairCutError("t received more than 4 deltaU")
