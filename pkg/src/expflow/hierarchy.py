"""Level hierarchy, its laminar refinement family and the multi-level router.

Level 1 is the singleton partition.  Each further level runs an expander
decomposition on the boundary degrees of the previous one; certified
clusters form ``P_{i+1}`` on ``V_{i+1}`` and the rest of the vertices keep
the blocks they had.  The router composes the stored per-level witnesses
(mixing transcripts and boundary flows) into a flow for any demand that
respects the family's boundary capacities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cutmatching import CutMatchingConfig, ExactMatchingOracle, run_decomposition
from .graph import CapGraph, FlowAssignment, StructuralError, VertexPartition, boundary_degree
from .faircut import FairCutInput, fair_cut
from .grafting import (ExactGraftingOracle, FinalDecomposition, Oracle2Result, boundary_receive,
                       build_grafting_instance, finalize, route_grafted_demands)
from .paths import PathDecomposition, path_decompose, truncate_at_boundary
from .sherman import check_laminar, family_matrix


class HierarchyError(AssertionError):
    """A level or routing property of the hierarchy does not hold."""


class DemandError(ValueError):
    """A demand breaks a family constraint |b(C)| <= delta(C)."""

    def __init__(self, msg: str, violating: np.ndarray | None = None):
        super().__init__(msg)
        self.violating = violating


def _tol(*vals) -> float:
    return 1e-9 * max([1.0] + [float(np.abs(np.asarray(v)).max(initial=0.0)) for v in vals])


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel so blocks are numbered by their smallest vertex."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv].astype(np.int64)


def label_degree(G: CapGraph, labels: np.ndarray) -> np.ndarray:
    """Capacity at each vertex of edges whose endpoints carry different labels."""
    e = labels[G.tail] != labels[G.head]
    out = np.zeros(G.n)
    np.add.at(out, G.tail[e], G.cap[e])
    np.add.at(out, G.head[e], G.cap[e])
    return out


def side_degree(G: CapGraph, mask: np.ndarray) -> np.ndarray:
    """Capacity of edges at each vertex with exactly one endpoint in ``mask``."""
    return label_degree(G, np.asarray(mask, dtype=np.int64))


@dataclass
class HierarchyLevel:
    i: int
    V: np.ndarray  # bool mask of V_i
    P: VertexPartition
    Q: VertexPartition
    labels: np.ndarray  # block of P-bar_i per vertex
    delta: float
    deg: np.ndarray  # deg of the P-bar_i boundary
    fd: FinalDecomposition | None = None
    bpaths: PathDecomposition | None = None
    alpha: float = 1.0
    beta: float = 1.0
    stats: dict = field(default_factory=dict)

    @property
    def Pbar(self) -> VertexPartition:
        return VertexPartition.from_labels(self.labels)


def extend_partition(prev_labels: np.ndarray, V_next: np.ndarray, P_next) -> tuple[np.ndarray, VertexPartition,
                                                                                 VertexPartition]:
    """P-bar for the next level: P_next on V_next, previous blocks cut to the rest."""
    n = len(prev_labels)
    V_next = np.asarray(V_next, dtype=bool)
    blocks = [np.asarray(B, dtype=np.int64) for B in P_next]
    lab = np.full(n, -1, dtype=np.int64)
    for j, B in enumerate(blocks):
        if np.any(lab[B] >= 0):
            raise StructuralError("blocks of the next partition overlap")
        if not np.all(V_next[B]):
            raise StructuralError("next partition leaves V_next")
        lab[B] = j
    if np.any(lab[V_next] < 0):
        raise StructuralError("next partition does not cover V_next")
    rest = ~V_next
    lab[rest] = len(blocks) + np.asarray(prev_labels)[rest]
    lab = canonical_labels(lab)
    P = VertexPartition(blocks, n=n)
    Qlab = np.where(rest, lab, -1)
    return lab, P, VertexPartition.from_labels(Qlab)


@dataclass
class RefinementFamily:
    R: list[np.ndarray]  # R[k] labels of the refinement for level k + 1
    deg: list[np.ndarray]  # boundary degree of each R[k]
    sets: list[np.ndarray]
    delta: np.ndarray
    index: list[np.ndarray]  # index[k][label] -> position in ``sets``

    def matrix(self, n: int):
        return family_matrix(n, self.sets)

    def nested(self) -> list[dict]:
        """Sets as a forest: each entry lists its vertices and children."""
        order = sorted(range(len(self.sets)), key=lambda j: (-len(self.sets[j]), int(self.sets[j][0])))
        owner: dict[int, int] = {}
        nodes = {j: {"vertices": self.sets[j].tolist(), "delta": float(self.delta[j]), "children": []}
                 for j in order}
        roots = []
        for j in order:
            par = owner.get(int(self.sets[j][0]))
            (nodes[par]["children"] if par is not None else roots).append(nodes[j])
            for v in self.sets[j].tolist():
                owner[v] = j
        return roots


def build_family(G: CapGraph, levels: list[HierarchyLevel]) -> RefinementFamily:
    L = len(levels)
    R = [None] * L
    R[L - 1] = canonical_labels(levels[L - 1].labels)
    for k in range(L - 2, -1, -1):
        pair = levels[k].labels * (int(R[k + 1].max()) + 1) + R[k + 1]
        R[k] = canonical_labels(pair)
    deg = [label_degree(G, r) for r in R]
    sets, key_of, index = [], {}, []
    for r in R:
        idx = np.empty(int(r.max()) + 1, dtype=np.int64)
        order = np.argsort(r, kind="stable")
        bounds = np.searchsorted(r[order], np.arange(idx.size + 1))
        for lab in range(idx.size):
            members = np.sort(order[bounds[lab]:bounds[lab + 1]])
            key = members.tobytes()
            if key not in key_of:
                key_of[key] = len(sets)
                sets.append(members)
            idx[lab] = key_of[key]
        index.append(idx)
    if not check_laminar(G.n, sets):
        raise HierarchyError("refinement family is not laminar")
    M = family_matrix(G.n, sets)
    inc = M[:, G.tail] - M[:, G.head]
    delta = np.asarray(abs(inc) @ G.cap).ravel()
    fam = RefinementFamily(R, deg, sets, delta, index)
    _check_observations(G, levels, fam)
    return fam


def _check_observations(G: CapGraph, levels: list[HierarchyLevel], fam: RefinementFamily) -> None:
    for k in range(len(levels) - 1):
        r, r1 = fam.R[k], fam.R[k + 1]
        # every R_{>=i} block sits inside one R_{>=i+1} block
        if np.any(np.bincount(r, minlength=r.max() + 1) == 0):
            raise HierarchyError("empty refinement block")
        up = np.full(r.max() + 1, -1)
        up[r] = r1
        if np.any(up[r] != r1):
            raise HierarchyError(f"R_{k + 1} does not refine R_{k + 2}")
        diff = (r[G.tail] != r[G.head]) & (r1[G.tail] == r1[G.head])
        Pl = levels[k].labels
        if np.any(diff & (Pl[G.tail] == Pl[G.head])):
            raise HierarchyError(f"boundary difference at level {k + 1} not inside the P-bar boundary")
        out = ~levels[k + 1].V
        tol = _tol(fam.deg[k])
        if np.any(np.abs(fam.deg[k][out] - fam.deg[k + 1][out]) > tol):
            raise HierarchyError(f"refinement degrees differ off V_{k + 2}")
        Pn = levels[k + 1].labels
        V1 = levels[k + 1].V
        e = (Pn[G.tail] != Pn[G.head]) & (V1[G.tail] == V1[G.head])
        dd = np.zeros(G.n)
        np.add.at(dd, G.tail[e], G.cap[e])
        np.add.at(dd, G.head[e], G.cap[e])
        if np.any(dd[out] > levels[k].deg[out] + tol):
            raise HierarchyError(f"new boundary off V_{k + 2} exceeds the level-{k + 1} boundary")


def _paths_from_pieces(G: CapGraph, pieces) -> PathDecomposition:
    if not pieces:
        return PathDecomposition.empty(G)
    lens = np.array([len(p[1]) for p in pieces], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    verts = np.concatenate([np.asarray(p[0], dtype=np.int64) for p in pieces])
    edges = np.concatenate([np.asarray(p[1], dtype=np.int64) for p in pieces])
    signs = np.concatenate([np.asarray(p[2], dtype=np.float64) for p in pieces])
    weights = np.array([p[3] for p in pieces], dtype=np.float64)
    return PathDecomposition(G, ptr, verts, edges, signs, weights)


def boundary_path_artifact(fd: FinalDecomposition) -> PathDecomposition:
    """The boundary flow as explicit weighted paths, one bundle per sender.

    Certified u starts exactly deg(u) of the final boundary; self-absorbed
    mass appears as zero-length paths.
    """
    G, D = fd.G, fd.paths
    crossings, cross_pos, inside = fd._cross
    inst = fd.instance
    deg_new = boundary_degree(G, fd.partition)
    cert = fd.certified_mask
    old = np.where(cert, np.minimum(inst.deg_bd, deg_new), 0.0)
    extra = np.where(cert, deg_new - old, 0.0)
    local = np.minimum(inst.sources, inst.sinks)
    starts = D.starts
    pieces = []
    fu = np.zeros(G.n)
    np.add.at(fu, starts[inside], D.weights[inside])
    avail = fu + local
    for u in np.flatnonzero(old > 0):
        stay = old[u] * local[u] / avail[u] if avail[u] > 0 else old[u]
        if stay > 0:
            pieces.append(([u], [], [], stay))
    for i in np.flatnonzero(inside):
        u = starts[i]
        if old[u] > 0 and avail[u] > 0:
            w = D.weights[i] * old[u] / avail[u]
            if w > 0:
                pieces.append((D.path_vertices(i), D.path_edges(i), D.signs[D.ptr[i]:D.ptr[i + 1]], w))
    sel = np.flatnonzero(crossings == 1)
    entry = np.array([D.path_vertices(i)[cross_pos[i]] for i in sel], dtype=np.int64)
    w_at = np.zeros(G.n)
    np.add.at(w_at, entry, D.weights[sel])
    for u in np.flatnonzero((extra > 0) & (w_at == 0)):
        pieces.append(([u], [], [], extra[u]))
    for i, u in zip(sel, entry):
        if extra[u] > 0:
            c = cross_pos[i]
            pieces.append((D.path_vertices(i)[c:], D.path_edges(i)[c:], D.signs[D.ptr[i] + c:D.ptr[i + 1]],
                           D.weights[i] * extra[u] / w_at[u]))
    out = _paths_from_pieces(G, pieces)
    tol = _tol(deg_new, fd.boundary_flow)
    if np.any(np.abs(out.start_mass() - np.where(cert, deg_new, 0.0)) > tol):
        raise HierarchyError("boundary paths do not start the boundary degree")
    if np.any(np.abs(out.assemble() - fd.boundary_flow) > tol * max(1, G.n)):
        raise HierarchyError("boundary paths disagree with the stored boundary flow")
    return out



@dataclass
class GFlowGadget:
    """Augmented graph for the grafting flow: V, then t, split nodes, leaves."""

    H: CapGraph
    n: int  # |V|; t = n
    t: int
    U: np.ndarray
    plus: np.ndarray  # bool mask of V+ over V
    split_edge: np.ndarray  # G edge per split node
    leaf_of: np.ndarray  # G vertex per leaf node
    h_of_g: np.ndarray  # H edge per unsplit G edge, -1 when split
    g_of_h: np.ndarray  # G edge per H edge, -1 for technical edges
    split_h: np.ndarray  # (k, 2): H edges (tail side, head side) of each split node
    leaf_h: np.ndarray  # (leaf, u) H edge per leaf
    leaf_t: np.ndarray  # (leaf, t) H edge per leaf
    sink_h: np.ndarray  # (u, t) H edge per G vertex, -1 if absent
    family: list[np.ndarray]
    inst: object  # GraftingInstance
    delta_U: float = 0.0

    @property
    def first_split(self) -> int:
        return self.n + 1

    @property
    def first_leaf(self) -> int:
        return self.n + 1 + len(self.split_edge)


def build_gflow(G: CapGraph, inst, family_sets=None) -> GFlowGadget:
    """The grafting flow graph for a grafting instance, with its routing family."""
    n, A_T, d, d_T, psi = G.n, inst.partition, inst.d, inst.d_T, inst.psi
    plus = np.zeros(n, dtype=bool)
    blk = np.full(n, -1, dtype=np.int64)
    for i in inst.plus:
        plus[A_T.blocks[i]] = True
    for i, B in enumerate(A_T.blocks):
        blk[B] = i
    t = n
    cross = blk[G.tail] != blk[G.head]
    split = cross & (plus[G.tail] | plus[G.head])
    split_edge = np.flatnonzero(split)
    k = split_edge.size
    leaf_of = np.flatnonzero(plus & (d_T == 0) & (d > 0))
    xs = n + 1 + np.arange(k)
    ls = n + 1 + k + np.arange(leaf_of.size)
    sink_v = np.flatnonzero(((plus & (d_T == d)) | ~plus) & (d > 0))
    keep = ~split
    tails = [G.tail[keep], G.tail[split_edge], G.head[split_edge], leaf_of, ls, sink_v]
    heads = [G.head[keep], xs, xs, ls, np.full(ls.size, t), np.full(sink_v.size, t)]
    caps = [G.cap[keep] / psi, G.cap[split_edge], G.cap[split_edge], d[leaf_of], d[leaf_of] / 5, d[sink_v] / 5]
    tl, hd, cp = np.concatenate(tails), np.concatenate(heads), np.concatenate(caps)
    N = n + 1 + k + leaf_of.size
    H = CapGraph.from_arrays(N, tl, hd, cp)
    pos = np.searchsorted(H.tail * N + H.head, np.minimum(tl, hd) * N + np.maximum(tl, hd))
    sizes = np.cumsum([0] + [a.size for a in tails])
    seg = [pos[sizes[j]:sizes[j + 1]] for j in range(len(tails))]
    h_of_g = np.full(G.m, -1, dtype=np.int64)
    h_of_g[keep] = seg[0]
    g_of_h = np.full(H.m, -1, dtype=np.int64)
    g_of_h[seg[0]] = np.flatnonzero(keep)
    sink_h = np.full(n, -1, dtype=np.int64)
    sink_h[sink_v] = seg[5]
    U = np.zeros(N, dtype=bool)
    U[:n + 1] = True
    fam = []
    if family_sets is not None:
        leaf_id = np.full(n, -1, dtype=np.int64)
        leaf_id[leaf_of] = ls
        for C in family_sets:
            inC = np.zeros(n, dtype=bool)
            inC[C] = True
            both = inC[G.tail[split_edge]] & inC[G.head[split_edge]]
            lv = leaf_id[C]
            fam.append(np.concatenate([np.asarray(C, dtype=np.int64), lv[lv >= 0], xs[both]]))
        fam += [np.array([x]) for x in ls] + [np.array([x]) for x in xs]
    gad = GFlowGadget(H, n, t, U, plus, split_edge, leaf_of, h_of_g, g_of_h, np.stack([seg[1], seg[2]], axis=1)
                      if k else np.zeros((0, 2), dtype=np.int64), seg[3], seg[4], sink_h, fam, inst)
    gad.delta_U = float(H.cap[U[H.tail] != U[H.head]].sum())
    # each split edge counts twice in delta U; it is source on both sides only
    # when both endpoints are in V+, otherwise the bound relaxes to 2 Delta(V)
    mixed = bool(np.any(plus[G.tail[split_edge]] != plus[G.head[split_edge]]))
    ratio = 2.0 if mixed else 1.2
    if gad.delta_U > ratio * float(inst.sources.sum()) * (1 + 1e-9) + 1e-9:
        raise HierarchyError(f"grafting graph boundary {gad.delta_U:g} exceeds {ratio:g} x the total source")
    return gad


def gflow_route_fn(gad: GFlowGadget, hier: "Hierarchy"):
    """Router for demands on the grafting graph that respect its family.

    Split-node and leaf demand moves to a G endpoint, the V part goes
    through the hierarchy, and the leftover crosses the t edges.
    """
    H, n, t = gad.H, gad.n, gad.t
    G = hier.G
    x0, l0 = gad.first_split, gad.first_leaf
    # tail endpoint of each split edge and the H edge that reaches it
    su = G.tail[gad.split_edge]
    su_h = gad.split_h[:, 0] if len(gad.split_edge) else np.zeros(0, dtype=np.int64)

    def route(b) -> FlowAssignment:
        b = np.asarray(b, dtype=np.float64).copy()
        f = np.zeros(H.m)
        if len(su):
            bx = b[x0:l0]
            # edge (su, x) is stored with tail su; moving bx from x to su is flow -bx
            f[su_h] -= bx
            np.add.at(b, su, bx)
            b[x0:l0] = 0.0
        if len(gad.leaf_of):
            bl = b[l0:]
            f[gad.leaf_h] -= bl
            np.add.at(b, gad.leaf_of, bl)
            b[l0:] = 0.0
        bV = b[:n]
        kappa = max(1.0, hier.estimate_congestion(bV))
        if not math.isfinite(kappa) or kappa > gflow_inflation(gad.inst.psi) * (1 + 1e-9):
            raise HierarchyError(f"grafting-graph demand breaks the family bound (factor {kappa:g})")
        flow, bp = hier.route_full(bV / kappa, balanced=False)
        bp = bp * kappa
        gf = flow.f * kappa
        unsplit = gad.h_of_g >= 0
        f[gad.h_of_g[unsplit]] += gf[unsplit]
        if len(gad.split_edge):
            gs = gf[gad.split_edge]
            f[gad.split_h[:, 0]] += gs  # tail -> x
            f[gad.split_h[:, 1]] -= gs  # x -> head, stored (head, x)
        has = gad.sink_h >= 0
        f[gad.sink_h[has]] += bp[has]
        rest = np.flatnonzero(~has & (np.abs(bp) > 0))
        if rest.size:
            lid = np.full(n, -1, dtype=np.int64)
            lid[gad.leaf_of] = np.arange(len(gad.leaf_of))
            if np.any(lid[rest] < 0):
                raise HierarchyError("leftover demand at a vertex with no path to t")
            j = lid[rest]
            f[gad.leaf_h[j]] += bp[rest]  # u -> leaf, stored (u, leaf)
            f[gad.leaf_t[j]] -= bp[rest]  # leaf -> t, stored (t, leaf)
        return FlowAssignment(H, f)

    return route


def gflow_inflation(psi: float) -> float:
    """Factor by which a family-respecting grafting-graph demand can exceed
    delta_G on V after the split and leaf moves: 1/psi from scaled edges,
    1.2 from t edges, 2 from split moves, 1.2 from leaf moves."""
    return 1.0 / psi + 4.4


def gflow_quality(hier: "Hierarchy", psi: float) -> float:
    """Congestion bound for the grafting-graph router: the split and leaf
    moves, the hierarchy routing, and the leftover over the t edges (cap d/5)."""
    k = gflow_inflation(psi)
    return 2.0 + 1.2 + k * (hier.quality + 5.0)


def grafting_oracle(gad: GFlowGadget, hier: "Hierarchy", backend="exact") -> Oracle2Result:
    G, H, n, t = hier.G, gad.H, gad.n, gad.t
    inst = gad.inst
    inp = FairCutInput(H, gad.U, t, gad.family, route_fn=gflow_route_fn(gad, hier), q=gflow_quality(hier, inst.psi),
                       eps=inst.eps2 / 2)
    res = fair_cut(inp, almost_route_fn=backend)
    f = res.flow.f.copy()
    f[gad.leaf_t] = 0.0
    off = np.flatnonzero(~gad.plus & (gad.sink_h >= 0))
    f[gad.sink_h[off]] = 0.0
    A = res.A
    D = path_decompose(H, f)
    sink_owner = np.full(H.m, -1, dtype=np.int64)
    has = gad.sink_h >= 0
    sink_owner[gad.sink_h[has]] = np.flatnonzero(has)
    eligible = np.zeros(n, dtype=bool)
    for i in inst.eligible:
        eligible[inst.partition.blocks[i]] = True
    fG = np.zeros(G.m)
    start_mass = np.zeros(n)
    kept = dropped = 0
    for i in range(len(D)):
        vs, es = D.path_vertices(i), D.path_edges(i)
        sg = D.signs[D.ptr[i]:D.ptr[i + 1]]
        if vs[-1] != t or len(es) == 0:
            dropped += 1
            continue
        w = sink_owner[es[-1]]
        outside = np.flatnonzero(~A[vs])
        if w < 0 or not gad.plus[w] or not eligible[w] or outside.size == 0:
            dropped += 1
            continue
        j = int(outside[-1])
        if vs[j] > t:
            j += 1  # technical start: the G path begins where it enters A
        gv, ge, gs = vs[j:-1], es[j:-1], sg[j:-1]
        if np.any(gad.g_of_h[ge] < 0) or len(gv) == 0 or gv[-1] != w:
            raise HierarchyError("kept grafting path leaves the original graph")
        np.add.at(fG, gad.g_of_h[ge], gs * D.weights[i])
        start_mass[gv[0]] += D.weights[i]
        kept += 1
    cuts = {}
    for i in inst.eligible:
        B = inst.partition.blocks[i]
        cuts[i] = B[~A[B]]
    stats = {"kept_paths": kept, "dropped_paths": dropped, "delta_U": res.delta_U, "delta_A": res.delta_A,
             "t_received": res.t_received, "fair_cut_steps": len(res.kinds)}
    return Oracle2Result(cuts, fG, stats, sources=np.where(A[:n], 0.0, start_mass))


class HierarchyGraftingOracle:
    """Oracle 2 through a fair cut on the grafting graph, routed by the hierarchy."""

    def __init__(self, hier: "Hierarchy", backend="exact"):
        self.hier, self.backend = hier, backend

    def __call__(self, G: CapGraph, inst):
        gad = build_gflow(G, inst, self.hier.family.sets)
        return grafting_oracle(gad, self.hier, self.backend)

@dataclass
class HierarchyConfig:
    phi: float | None = None
    psi: float = 1 / 64
    eps1: float | None = None
    eps2: float = 1 / 16
    T: int | None = None
    x_max: float | None = None
    seed: int = 0
    oracles: str = "exact"  # exact | flow
    flow_backend: str = "exact"  # almost-route engine used by the flow-based oracles
    oracle_eps: float | None = None  # almost-route slack override for the matching oracle
    max_levels: int | None = None
    strict_constants: bool = False

    def __post_init__(self):
        if self.oracles not in ("exact", "flow"):
            raise ValueError("oracles must be exact or flow")
        if self.psi <= 0 or not 0 < self.eps2 <= 0.1:
            raise ValueError("need psi > 0 and 0 < eps2 <= 1/10")

    def resolved(self, n: int, W: float) -> dict:
        lg = max(1, math.ceil(math.log2(max(2.0, n * W))))
        return {
            "phi": self.phi if self.phi is not None else 1 / (16 * lg),
            "psi": self.psi,
            "eps1": self.eps1 if self.eps1 is not None else 1 / (4 * lg * lg),
            "eps2": self.eps2,
            "T": self.T,
            "x_max": self.x_max,
            "seed": self.seed,
        }


class Hierarchy:
    """Levels 1..L with the refinement family and the multi-level router."""

    def __init__(self, G: CapGraph, config: HierarchyConfig | None = None):
        self.G = G
        self.config = config or HierarchyConfig()
        self.params = self.config.resolved(G.n, G.W)
        single = np.arange(G.n, dtype=np.int64)
        deg = G.deg.astype(np.float64).copy()
        lv = HierarchyLevel(1, np.ones(G.n, dtype=bool), VertexPartition([[v] for v in range(G.n)], n=G.n),
                            VertexPartition([], n=G.n), single, float(G.cap.sum()), deg)
        self.levels: list[HierarchyLevel] = [lv]
        self._refresh()

    # -- bookkeeping -------------------------------------------------------
    def _refresh(self) -> None:
        self.family = build_family(self.G, self.levels)
        self._M = self.family.matrix(self.G.n)
        self._dV = [side_degree(self.G, lv.V) for lv in self.levels]

    @property
    def L(self) -> int:
        return len(self.levels)

    def level(self, i: int) -> HierarchyLevel:
        return self.levels[i - 1]

    @property
    def alpha(self) -> float:
        return max([1.0] + [lv.alpha for lv in self.levels[1:]])

    @property
    def beta(self) -> float:
        return max([1.0] + [lv.beta for lv in self.levels[1:]])

    @property
    def quality(self) -> float:
        return 48.0 * self.alpha * self.beta * self.L ** 2

    @property
    def complete(self) -> bool:
        return self.levels[-1].delta == 0

    # -- estimates ---------------------------------------------------------
    def family_values(self, b) -> np.ndarray:
        return np.asarray(self._M @ np.asarray(b, dtype=np.float64)).ravel()

    def estimate_congestion(self, b) -> float:
        b = np.asarray(b, dtype=np.float64)
        vals = np.abs(self.family_values(b))
        delta = self.family.delta
        tol = _tol(b)
        if np.any((delta == 0) & (vals > tol)):
            return math.inf
        pos = delta > 0
        return float(np.max(vals[pos] / delta[pos], initial=0.0))

    # -- routing -----------------------------------------------------------
    def route_between_levels(self, i: int, s) -> tuple[np.ndarray, FlowAssignment]:
        G = self.G
        s = np.asarray(s, dtype=np.float64)
        lv1 = self.level(i + 1)
        V1, dP1, dV = lv1.V, lv1.deg, self._dV[i]
        tol = _tol(s, dP1)
        if np.any(s < -tol) or np.any(s[V1] > dP1[V1] + tol) or np.any(s[~V1] > dV[~V1] + tol):
            raise HierarchyError("between-level routing: s outside its bounds")
        s = np.clip(s, 0.0, None)
        f = np.zeros(G.m)
        x = np.zeros(G.n)
        e = np.flatnonzero(V1[G.tail] != V1[G.head])
        if e.size:
            out_tail = ~V1[G.tail[e]]
            u = np.where(out_tail, G.tail[e], G.head[e])
            v = np.where(out_tail, G.head[e], G.tail[e])
            a = s[u] * G.cap[e] / np.where(dV[u] > 0, dV[u], 1.0)
            f[e] = np.where(out_tail, a, -a)
            np.add.at(x, v, a)
        send = np.where(V1, s + x, 0.0)
        D = lv1.bpaths
        base = D.start_mass()
        if np.any((send > tol) & (base <= 0)):
            raise HierarchyError("between-level routing: sender without boundary paths")
        k = np.where(base > 0, send / np.where(base > 0, base, 1.0), 0.0)
        if np.any(k > 2 + 1e-9):
            raise HierarchyError("between-level routing: bundle scaled beyond 2")
        w = k[D.starts]
        f += D.assemble(w)
        t = np.zeros(G.n)
        np.add.at(t, D.ends, D.weights * w)
        flow = FlowAssignment(G, f)
        dPi = self.level(i).deg
        if np.any(t > dPi / 2 + tol) or np.any(t[~V1] > tol):
            raise HierarchyError("between-level routing: receiver bound broken")
        if flow.congestion() > 3 * lv1.beta * (1 + 1e-9):
            raise HierarchyError(f"between-level routing: congestion {flow.congestion():g} > 3 beta")
        return t, flow

    def _rtp_free(self, i: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        G = self.G
        if i == self.L:
            return x.copy(), np.zeros(G.m)
        dRi, dRi1 = self.family.deg[i - 1], self.family.deg[i]
        xp = np.where(dRi > 0, dRi1 / np.where(dRi > 0, dRi, 1.0) * x, 0.0)
        yp, f1 = self._rtp_free(i + 1, xp)
        V1 = self.level(i + 1).V
        s = np.where(V1, yp / 2, np.minimum(self._dV[i], yp / 2))
        t, f2 = self.route_between_levels(i, s)
        y = x - xp + yp - 2 * s + 2 * t
        f = f1 + 2 * f2.f
        tol = _tol(x, y)
        if np.any(y < -tol) or np.any(y > 2 * self.level(i).deg + tol):
            raise HierarchyError(f"refinement routing at level {i}: y outside [0, 2 deg]")
        return np.clip(y, 0.0, None), f

    def _rtp_nonneg(self, i: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        G = self.G
        if not np.any(x > 0):
            return np.zeros(G.n), np.zeros(G.m)
        yp, f = self._rtp_free(i, x)
        D = path_decompose(G, f, x, yp, rel_tol=1e-7)
        Dt = truncate_at_boundary(D, self.level(i + 1).labels)
        ft = Dt.assemble()
        out = np.zeros(G.n)
        np.add.at(out, G.tail, ft)
        np.add.at(out, G.head, -ft)
        y = x - out
        tol = _tol(x, yp) * max(1, G.n)
        beta, L = self.beta, self.L
        if np.any(y < -tol):
            raise HierarchyError("refinement routing: negative leftover")
        if np.any(y > 6 * self.level(i).deg + 6 * L * beta * self.level(i + 1).deg + tol):
            raise HierarchyError("refinement routing: leftover exceeds its bound")
        if np.any(np.abs(y[~self.level(i + 1).V]) > tol):
            raise HierarchyError("refinement routing: leftover outside V_{i+1}")
        return np.clip(y, 0.0, None), ft

    def route_R_to_P(self, i: int, x) -> tuple[np.ndarray, FlowAssignment]:
        G = self.G
        x = np.asarray(x, dtype=np.float64)
        tol = _tol(x)
        if np.any(np.abs(x[~self.level(i + 1).V]) > tol):
            raise HierarchyError("refinement routing: x not supported on V_{i+1}")
        if np.any(np.abs(x) > self.family.deg[i - 1] + tol):
            raise HierarchyError("refinement routing: |x| exceeds the refinement degree")
        x = np.where(self.level(i + 1).V, x, 0.0)
        yp, fp = self._rtp_nonneg(i, np.clip(x, 0.0, None))
        yn, fn = self._rtp_nonneg(i, np.clip(-x, 0.0, None))
        y = yp - yn
        flow = FlowAssignment(G, fp - fn)
        lab = self.level(i + 1).labels
        bal = np.bincount(lab, weights=x - y, minlength=lab.max() + 1)
        if np.any(np.abs(bal) > _tol(x) * max(1, G.n)):
            raise HierarchyError("refinement routing: cluster balance broken")
        if flow.congestion() > 12 * self.L * self.beta * (1 + 1e-9):
            raise HierarchyError("refinement routing: congestion above 12 L beta")
        return y, flow

    def route_level(self, i: int, s) -> tuple[np.ndarray, FlowAssignment]:
        G = self.G
        s = np.asarray(s, dtype=np.float64)
        tol = _tol(s)
        if np.any(np.abs(s) > self.family.deg[i - 1] + tol):
            raise HierarchyError(f"level routing {i}: |s| exceeds the refinement degree")
        r1 = self.family.R[i]
        dR1 = self.family.deg[i]
        V1 = self.level(i + 1).V
        nb = int(r1.max()) + 1
        sC = np.bincount(r1, weights=s, minlength=nb)
        dC = np.bincount(r1, weights=dR1, minlength=nb)
        if np.any(np.abs(sC) > dC + tol):
            raise HierarchyError(f"level routing {i}: s(C) exceeds delta(C)")
        prop = np.where(dC[r1] > 0, sC[r1] * dR1 / np.where(dC[r1] > 0, dC[r1], 1.0), 0.0)
        t = np.where(V1, prop, s)
        if not np.any(np.abs(s - t) > tol):
            return t, FlowAssignment.zeros(G)
        y, f1 = self.route_R_to_P(i, (s - t) / 2)
        fd = self.level(i + 1).fd
        lim = fd.d + self.level(i + 1).deg
        if np.any((np.abs(y) > tol) & (lim <= 0)):
            raise HierarchyError(f"level routing {i}: leftover at a vertex with no mixing weight")
        kappa = max(1.0, float(np.max(np.where(lim > 0, np.abs(y) / np.where(lim > 0, lim, 1.0), 0.0))))
        cols = []
        for C in fd.certified:
            yc = np.zeros(G.n)
            yc[C] = y[C] - y[C].sum() / C.size
            if np.any(np.abs(yc) > tol):
                cols.append(yc / kappa)
        f2 = np.zeros(G.m)
        if cols:
            f2 = 2 * kappa * route_grafted_demands(fd, cols).total()
        flow = FlowAssignment(G, 2 * f1.f + f2)
        bound = 48 * self.L * self.alpha * self.beta
        if flow.congestion() > bound * (1 + 1e-9):
            raise HierarchyError(f"level routing {i}: congestion {flow.congestion():g} > {bound:g}")
        return t, flow

    def check_demand(self, b) -> None:
        b = np.asarray(b, dtype=np.float64)
        vals = np.abs(self.family_values(b))
        bad = np.flatnonzero(vals > self.family.delta * (1 + 1e-9) + _tol(b))
        if bad.size:
            j = int(bad[np.argmax(vals[bad] - self.family.delta[bad])])
            raise DemandError(f"|b(C)| = {vals[j]:g} exceeds delta(C) = {self.family.delta[j]:g}",
                              self.family.sets[j])

    def route_full(self, b, *, balanced: bool = True) -> tuple[FlowAssignment, np.ndarray]:
        """Route b - b' with |b'| <= deg of the top boundary; b' = 0 on a complete hierarchy.

        ``balanced=False`` admits demands with nonzero total (the excess is
        left in b'), as used by the grafting-graph router.
        """
        G = self.G
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (G.n,):
            raise ValueError("demand length does not match vertex count")
        if balanced and abs(b.sum()) > _tol(b) * max(1, G.n):
            raise DemandError("demand does not sum to zero")
        self.check_demand(b)
        f = np.zeros(G.m)
        s = b.copy()
        for i in range(1, self.L):
            s, fl = self.route_level(i, s)
            f += fl.f
        flow = FlowAssignment(G, f)
        tol = 1e-6 * max(1.0, float(np.abs(b).sum()))
        if np.any(np.abs(s) > self.levels[-1].deg + tol):
            raise HierarchyError("residual demand exceeds the top boundary degree")
        if np.any(np.abs(flow.demand() - (b - s)) > tol):
            raise HierarchyError("routed flow does not meet b - b'")
        if flow.congestion() > self.quality * (1 + 1e-9):
            raise HierarchyError(f"full routing congestion {flow.congestion():g} > quality {self.quality:g}")
        return flow, s

    # -- construction ------------------------------------------------------
    def _oracles(self):
        if self.config.oracles == "exact":
            return ExactMatchingOracle(), ExactGraftingOracle()
        from .sherman import HierarchyMatchingOracle
        return (HierarchyMatchingOracle(self, backend=self.config.flow_backend, eps=self.config.oracle_eps),
                HierarchyGraftingOracle(self, backend=self.config.flow_backend))

    def build_next_level(self) -> HierarchyLevel:
        G, p = self.G, self.params
        top = self.levels[-1]
        d = top.deg.copy()
        if d.sum() <= 0:
            raise HierarchyError("top level already has an empty boundary")
        cfg = CutMatchingConfig(phi=p["phi"], eps1=p["eps1"], T=p["T"], x_max=p["x_max"],
                                seed=p["seed"] + self.L, strict_constants=self.config.strict_constants)
        o1, o2 = self._oracles()
        P, d_T, tr = run_decomposition(G, d, cfg, o1)
        inst = build_grafting_instance(G, P, d, d_T, p["psi"], p["eps2"])
        res = o2(G, inst)
        fd = finalize(P, d, d_T, res, inst, G, tr)
        V1 = fd.certified_mask
        lab, Pn, Qn = extend_partition(top.labels, V1, fd.certified)
        deg = label_degree(G, lab)
        delta = float(deg.sum() / 2)
        i = self.L + 1
        if not delta <= top.delta / 2 + 1e-9 * max(1.0, top.delta):
            raise HierarchyError(f"halving failed at level {i}: delta {delta:g} > {top.delta:g} / 2; "
                                 "lower phi or raise T")
        lv = HierarchyLevel(i, V1, Pn, Qn, lab, delta, deg, fd)
        # property (3): every certified vertex sends its new boundary degree, receivers get <= d/4
        rec = boundary_receive(fd)
        tol = _tol(d, rec)
        if np.any(rec > d / 4 + tol):
            raise HierarchyError(f"level {i}: boundary flow delivers more than d/4")
        lv.bpaths = boundary_path_artifact(fd) if V1.any() else PathDecomposition.empty(G)
        cong = lambda f: float(np.max(np.abs(f) / G.cap, initial=0.0)) if G.m else 0.0
        lv.beta = max(1.0, cong(fd.boundary_flow))
        stacked = sum((np.abs(r.flow) for r in tr.rounds), np.zeros(G.m))
        lv.alpha = max(1.0, cong(stacked) + cong(fd.grafting_flow) + cong(fd.boundary_flow))
        lv.stats = {"rounds": tr.rounds_run, "certified": len(fd.certified), "discarded": len(fd.discarded),
                    "deleted_demand": float(d.sum() - d_T.sum()), "cut_capacity": fd.certificates["cut_capacity"],
                    "stacked_congestion": cong(stacked), "grafting_congestion": cong(fd.grafting_flow),
                    "boundary_congestion": cong(fd.boundary_flow)}
        self.levels.append(lv)
        self._refresh()
        return lv

    def build(self) -> "Hierarchy":
        """Add levels until the top boundary is empty."""
        cap_L = self.config.max_levels or (math.ceil(math.log2(max(2.0, float(self.G.deg.sum())))) + 1)
        while not self.complete:
            if self.L >= cap_L:
                raise HierarchyError(f"hierarchy did not close within {cap_L} levels")
            self.build_next_level()
        return self

    # -- reporting ---------------------------------------------------------
    def certificate(self) -> dict:
        return {"L": self.L, "alpha": self.alpha, "beta": self.beta, "quality": self.quality,
                "deltas": [lv.delta for lv in self.levels]}

    def to_json(self) -> dict:
        return {
            "levels": [{"i": lv.i, "V": np.flatnonzero(lv.V).tolist(), "blocks": lv.Pbar.canonical(),
                        "P": lv.P.canonical(), "delta": lv.delta, "alpha": lv.alpha, "beta": lv.beta,
                        "stats": lv.stats} for lv in self.levels],
            "family": self.family.nested(),
            "certificate": self.certificate(),
        }


def build_hierarchy(G: CapGraph, config: HierarchyConfig | None = None) -> tuple[Hierarchy, RefinementFamily]:
    H = Hierarchy(G, config).build()
    return H, H.family
