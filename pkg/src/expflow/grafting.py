"""Grafting step: route deleted and boundary demand into certified mass.

Builds the grafting flow instance from a cut-matching result, consumes an
oracle answer (a cut C_A per eligible block plus a flow) and assembles the
final partition into certified and discarded clusters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cutmatching import (CutMatchingConfig, DecompositionTranscript, InvariantError, MultiFlow, mix_route,
                          run_decomposition)
from .exact import FlowInstance, exact_max_flow
from .graph import CapGraph, FlowAssignment, VertexPartition, boundary_degree, boundary_mask
from .paths import PathDecomposition, path_decompose


@dataclass
class GraftingInstance(FlowInstance):
    partition: VertexPartition = None
    d: np.ndarray = None
    d_T: np.ndarray = None
    psi: float = 1 / 64
    eps2: float = 1 / 16
    edge_map: np.ndarray = None
    plus: list[int] = field(default_factory=list)  # block ids with d_T(A) > 0
    eligible: list[int] = field(default_factory=list)  # plus blocks with deg_bd(A) <= d_T(A)/8
    deg_bd: np.ndarray = None


@dataclass
class Oracle2Result:
    cuts: dict[int, np.ndarray]
    flow: np.ndarray  # on G's edges, G units (congestion <= 1/psi)
    stats: dict = field(default_factory=dict)
    # paths may also start at the tail of a saturated edge leaving C_A; the
    # oracle reports that start mass here so the decomposition accepts it
    sources: np.ndarray | None = None


def build_grafting_instance(G: CapGraph, A_T: VertexPartition, d, d_T, psi: float = 1 / 64,
                            eps2: float = 1 / 16) -> GraftingInstance:
    if not psi > 0:
        raise ValueError("psi must be positive")
    d = np.asarray(d, dtype=np.float64)
    d_T = np.asarray(d_T, dtype=np.float64)
    cut = boundary_mask(G, A_T)
    deg_bd = boundary_degree(G, A_T)
    src = np.zeros(G.n)
    snk = np.zeros(G.n)
    plus, eligible = [], []
    for i, A in enumerate(A_T.blocks):
        if d_T[A].sum() <= 0:
            continue
        plus.append(i)
        if deg_bd[A].sum() <= d_T[A].sum() / 8:
            eligible.append(i)
        src[A] = deg_bd[A] + d[A] - d_T[A]
        live = A[(d_T[A] == d[A]) & (d[A] > 0)]
        snk[live] = d[live] / 5
    sub = G.edge_mask_subgraph(~cut, scale=1.0 / psi)
    return GraftingInstance(sub, src, snk, partition=A_T, d=d, d_T=d_T, psi=psi, eps2=eps2,
                            edge_map=np.flatnonzero(~cut), plus=plus, eligible=eligible, deg_bd=deg_bd)


class ExactGraftingOracle:
    """Oracle 2 from one exact max flow: C_A is A intersected with the source side."""

    def __call__(self, G: CapGraph, inst: GraftingInstance) -> Oracle2Result:
        res = exact_max_flow(inst)
        f = np.zeros(G.m)
        f[inst.edge_map] = res.flow.f
        S = res.mincut_mask
        cuts = {}
        for i in inst.eligible:
            A = inst.partition.blocks[i]
            cuts[i] = A[S[A]]
        return Oracle2Result(cuts, f, {"value": res.value})


@dataclass
class FinalDecomposition:
    G: CapGraph
    d: np.ndarray
    d_T: np.ndarray
    A_T: VertexPartition
    certified: list[np.ndarray]
    discarded: list[np.ndarray]
    provenance: list[tuple[int, np.ndarray]]  # per certified cluster: (A_T block id, C_A)
    grafting_flow: np.ndarray
    boundary_flow: np.ndarray
    instance: GraftingInstance
    paths: PathDecomposition
    transcript: DecompositionTranscript | None = None
    certificates: dict = field(default_factory=dict)

    @property
    def partition(self) -> VertexPartition:
        return VertexPartition(self.certified + self.discarded, n=self.G.n)

    @property
    def certified_mask(self) -> np.ndarray:
        mask = np.zeros(self.G.n, dtype=bool)
        for A in self.certified:
            mask[A] = True
        return mask


def _path_lengths(D: PathDecomposition) -> np.ndarray:
    return np.diff(D.ptr)


def _classify_paths(final_lab: np.ndarray, cut_side: np.ndarray, D: PathDecomposition):
    """For each path: start label, number of cut crossings, crossing position."""
    k = len(D)
    crossings = np.zeros(k, dtype=np.int64)
    cross_pos = np.full(k, -1, dtype=np.int64)
    inside = np.zeros(k, dtype=bool)
    for i in range(k):
        vs = D.path_vertices(i)
        side = cut_side[vs]
        ch = np.flatnonzero(side[1:] != side[:-1])
        crossings[i] = ch.size
        if ch.size:
            cross_pos[i] = ch[0] + 1
        inside[i] = np.all(final_lab[vs] == final_lab[vs[0]]) and final_lab[vs[0]] >= 0
    return crossings, cross_pos, inside


def finalize(A_T: VertexPartition, d, d_T, oracle2_result: Oracle2Result, inst: GraftingInstance,
             G: CapGraph, transcript: DecompositionTranscript | None = None) -> FinalDecomposition:
    """Assemble certified/discarded clusters and verify the Oracle 2 clauses."""
    d = np.asarray(d, dtype=np.float64)
    d_T = np.asarray(d_T, dtype=np.float64)
    eps = inst.eps2
    if eps > 0.1:
        raise InvariantError("Oracle 2 requires eps2 <= 1/10")
    f = oracle2_result.flow
    tol = 1e-9 * max(1.0, float(d.sum()), float(np.abs(f).max(initial=0)))
    if G.m and np.max(np.abs(f) / G.cap) > (1 / inst.psi) * (1 + 1e-9):
        raise InvariantError("Oracle 2 flow exceeds capacities scaled by 1/psi")
    cutmask = boundary_mask(G, A_T)
    if np.any(np.abs(f[cutmask]) > tol):
        raise InvariantError("Oracle 2 flow uses an edge cut by A_T")
    certified, discarded, prov = [], [], []
    in_C = np.zeros(G.n, dtype=bool)
    cap_cut = 0.0
    for i, A in enumerate(A_T.blocks):
        if i in inst.eligible:
            C = np.asarray(oracle2_result.cuts.get(i, np.zeros(0, dtype=np.int64)), dtype=np.int64)
            if C.size and not np.all(np.isin(C, A)):
                raise InvariantError(f"Oracle 2 clause 1: C_A not inside block {i}")
            rest = np.setdiff1d(A, C)
            in_C[C] = True
            if C.size:
                discarded.append(np.sort(C))
            if rest.size:
                certified.append(rest)
                prov.append((i, np.sort(C)))
        else:
            discarded.append(A)
    # clause checks on the flow
    src = inst.sources
    if oracle2_result.sources is not None:
        extra = np.asarray(oracle2_result.sources, dtype=np.float64)
        if np.any((extra > 0) & ~in_C & (extra > inst.sources + tol)):
            raise InvariantError("Oracle 2 flow starts extra mass outside the cut sides C_A")
        src = np.maximum(inst.sources, extra)
    D = path_decompose(G, f, src, inst.sinks, rel_tol=1e-7)
    final_lab = np.full(G.n, -1, dtype=np.int64)
    for j, A in enumerate(certified):
        final_lab[A] = j
    crossings, cross_pos, inside = _classify_paths(final_lab, in_C, D)
    starts = D.starts
    routed_in = np.zeros(G.n)
    np.add.at(routed_in, starts[inside], D.weights[inside])
    local = np.minimum(inst.sources, inst.sinks)
    for j, (i, C) in enumerate(prov):
        A = certified[j]
        need = A[inst.sources[A] > 0]
        got = routed_in[need] + local[need]
        bad = need[got < (1 - eps) * inst.sources[need] - tol]
        if bad.size:
            raise InvariantError(f"Oracle 2 clause 1a: vertex {int(bad[0])} routed {got[0]:g} "
                                 f"< (1-eps) Delta = {(1 - eps) * inst.sources[bad[0]]:g}")
        if C.size:
            a_mask = np.zeros(G.n, dtype=bool)
            a_mask[A] = True
            c_mask = np.zeros(G.n, dtype=bool)
            c_mask[C] = True
            e_tc = c_mask[G.tail] & a_mask[G.head]
            e_hc = c_mask[G.head] & a_mask[G.tail]
            inward = np.where(e_tc, f, 0.0) + np.where(e_hc, -f, 0.0)
            ce = e_tc | e_hc
            capc = G.cap[ce] / inst.psi
            if np.any(inward[ce] < (1 - eps) * capc - tol):
                raise InvariantError("Oracle 2 clause 1b: a cut edge from C_A is not (1-eps)-saturated")
            cap_cut += float(G.cap[ce].sum())
    if cap_cut > 8 * inst.psi * d.sum() + tol:
        raise InvariantError(f"Oracle 2 clause 1c: cut capacity {cap_cut:g} > 8 psi d(V)")
    deg_bd_T = inst.deg_bd
    lhs = float(d[in_C].sum())
    rhs = 30 * (d.sum() - d_T.sum() + deg_bd_T.sum())
    if lhs > rhs + tol:
        raise InvariantError(f"Oracle 2 clause 2: d(union C_A) = {lhs:g} > {rhs:g}")
    keep = crossings <= 1
    D_kept = D.select(keep)
    crossings, cross_pos, inside = crossings[keep], cross_pos[keep], inside[keep]

    fd = FinalDecomposition(G, d, d_T, A_T, certified, discarded, prov, f.copy(), np.zeros(G.m), inst, D_kept,
                            transcript)
    fd._cross = (crossings, cross_pos, inside)
    fd.boundary_flow = boundary_source_routing(fd).f
    final_part = fd.partition
    cut_final = boundary_mask(G, final_part)
    fd.certificates = {
        "cut_capacity": float(G.cap[cut_final].sum()),
        "cut_capacity_AT": float(G.cap[cutmask].sum()),
        "cut_capacity_grafting": cap_cut,
        "deleted_demand": float(d.sum() - d_T.sum()),
        "discarded_demand": float(sum(d[A].sum() for A in discarded)),
        "clause2_lhs": lhs,
        "clause2_rhs": rhs,
        "dropped_paths": int((~keep).sum()),
    }
    return fd


def _vertex_sends(fd: FinalDecomposition, amount: np.ndarray, flows: np.ndarray | None, col: int | None):
    """Route ``amount(u)`` from each certified u along its inside paths.

    Returns the mass delivered per vertex (including self-absorbed parts) and
    adds path flow into ``flows`` (vector or column ``col``).
    """
    G, D = fd.G, fd.paths
    crossings, cross_pos, inside = fd._cross
    inst = fd.instance
    local = np.minimum(inst.sources, inst.sinks)
    starts, ends = D.starts, D.ends
    fu = np.zeros(G.n)
    np.add.at(fu, starts[inside], D.weights[inside])
    avail = fu + local
    scale = np.where(avail > 0, amount / np.where(avail > 0, avail, 1), 0.0)
    delivered = np.where(avail > 0, amount * local / np.where(avail > 0, avail, 1), amount)
    pw = np.where(inside, D.weights * scale[starts], 0.0)
    np.add.at(delivered, ends, pw)
    contrib = D.assemble(np.where(D.weights > 0, pw / np.where(D.weights > 0, D.weights, 1), 0.0))
    return delivered, contrib


def _boundary_sends(fd: FinalDecomposition, amount: np.ndarray):
    """Route the new-boundary amount at u along suffixes of crossing paths entering at u."""
    G, D = fd.G, fd.paths
    crossings, cross_pos, inside = fd._cross
    entry = np.full(len(D), -1, dtype=np.int64)
    suffix_flow = np.zeros(G.m)
    w_at = np.zeros(G.n)
    sel = np.flatnonzero(crossings == 1)
    for i in sel:
        vs = D.path_vertices(i)
        entry[i] = vs[cross_pos[i]]
    np.add.at(w_at, entry[sel], D.weights[sel])
    delivered = np.where(w_at > 0, 0.0, amount)
    scale = np.where(w_at > 0, amount / np.where(w_at > 0, w_at, 1), 0.0)
    ends = D.ends
    for i in sel:
        u = entry[i]
        x = D.weights[i] * scale[u]
        if x == 0:
            continue
        es = D.path_edges(i)[cross_pos[i]:]
        sg = D.signs[D.ptr[i] + cross_pos[i]:D.ptr[i + 1]]
        np.add.at(suffix_flow, es, sg * x)
        delivered[ends[i]] += x
    return delivered, suffix_flow, scale


def boundary_source_routing(fd: FinalDecomposition) -> FlowAssignment:
    """Each certified u sends deg of the final boundary at u; receivers get at most d/4."""
    G = fd.G
    part = VertexPartition(fd.certified + fd.discarded, n=G.n)
    deg_new = boundary_degree(G, part)
    cert = fd.certified_mask
    old = np.where(cert, np.minimum(fd.instance.deg_bd, deg_new), 0.0)
    extra = np.where(cert, deg_new - old, 0.0)
    rec1, f1 = _vertex_sends(fd, old, None, None)
    rec2, f2, _ = _boundary_sends(fd, extra)
    flow = FlowAssignment(G, f1 + f2)
    return flow


def boundary_receive(fd: FinalDecomposition) -> np.ndarray:
    G = fd.G
    part = VertexPartition(fd.certified + fd.discarded, n=G.n)
    deg_new = boundary_degree(G, part)
    cert = fd.certified_mask
    old = np.where(cert, np.minimum(fd.instance.deg_bd, deg_new), 0.0)
    extra = np.where(cert, deg_new - old, 0.0)
    rec1, _ = _vertex_sends(fd, old, None, None)
    rec2, _, _ = _boundary_sends(fd, extra)
    return rec1 + rec2


def route_grafted_demands(fd: FinalDecomposition, demands, *, check: bool = True) -> MultiFlow:
    """Multicommodity routing of demands respecting (d + deg of the final boundary) per certified cluster."""
    G = fd.G
    if fd.transcript is None:
        raise ValueError("final decomposition carries no cut-matching transcript")
    cols = [np.asarray(v, dtype=np.float64) for v in (demands.values() if isinstance(demands, dict) else demands)]
    B = np.stack(cols, axis=1) if cols else np.zeros((G.n, 0))
    part = VertexPartition(fd.certified + fd.discarded, n=G.n)
    deg_new = boundary_degree(G, part)
    lab = np.full(G.n, -1, dtype=np.int64)
    for j, A in enumerate(fd.certified):
        lab[A] = j
    lim1 = fd.d + fd.instance.deg_bd
    scale_tol = 1e-9 * max(1.0, fd.d.sum())
    if check:
        for j in range(B.shape[1]):
            b = B[:, j]
            supp = np.flatnonzero(b != 0)
            if supp.size == 0:
                continue
            if np.any(lab[supp] < 0) or np.unique(lab[supp]).size > 1:
                raise ValueError(f"demand {j} is not inside one certified cluster")
            if np.any(np.abs(b) > fd.d + deg_new + scale_tol):
                raise ValueError(f"demand {j} exceeds d + deg of the boundary")
            if abs(b.sum()) > scale_tol:
                raise ValueError(f"demand {j} does not sum to zero")
    flows = np.zeros((G.m, B.shape[1]))
    resid = np.zeros_like(B)
    for j in range(B.shape[1]):
        b = B[:, j]
        b1 = np.clip(b, -lim1, lim1)
        b2 = b - b1
        pos1, neg1 = np.clip(b1, 0, None), np.clip(-b1, 0, None)
        r1p, fp = _vertex_sends(fd, pos1, None, None)
        r1n, fn = _vertex_sends(fd, neg1, None, None)
        pos2, neg2 = np.clip(b2, 0, None), np.clip(-b2, 0, None)
        r2p, gp, _ = _boundary_sends(fd, pos2)
        r2n, gn, _ = _boundary_sends(fd, neg2)
        flows[:, j] = fp - fn + gp - gn
        resid[:, j] = (r1p - r1n) + (r2p - r2n)
    mf = mix_route(fd.transcript, resid)
    return MultiFlow(G, flows + mf.flows, B)


def expander_decompose(G: CapGraph, d, config: CutMatchingConfig | None = None, *, psi: float = 1 / 64,
                       eps2: float = 1 / 16, oracle1=None, oracle2: Callable | None = None) -> FinalDecomposition:
    """Cut-matching followed by grafting."""
    config = config or CutMatchingConfig()
    P, d_T, tr = run_decomposition(G, d, config, oracle1)
    inst = build_grafting_instance(G, P, d, d_T, psi, eps2)
    oracle2 = oracle2 or ExactGraftingOracle()
    res = oracle2(G, inst)
    return finalize(P, d, d_T, res, inst, G, tr)
