"""Capacitated undirected graphs, vertex weightings, flows and partitions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

REL_TOL = 1e-9


class StructuralError(ValueError):
    """Raised for malformed graphs, partitions or unknown vertex ids."""


class CapGraph:
    """Undirected capacitated graph on vertices 0..n-1.

    Edges are stored once with ``tail < head``; a signed flow value on edge
    ``e`` is positive when it moves from ``tail[e]`` to ``head[e]``.
    Parallel edges are merged by summing capacities.
    """

    def __init__(self, n: int, edges: Iterable[tuple[int, int, float]], *, real: bool = False):
        if n < 0:
            raise StructuralError("negative vertex count")
        merged: dict[tuple[int, int], float] = {}
        for u, v, c in edges:
            u, v = int(u), int(v)
            if u == v:
                raise StructuralError(f"self-loop at {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise StructuralError(f"unknown vertex in edge ({u}, {v})")
            if c <= 0:
                raise StructuralError(f"non-positive capacity on ({u}, {v})")
            if not real and float(c) != int(c):
                raise StructuralError(f"non-integer capacity {c} on ({u}, {v})")
            key = (u, v) if u < v else (v, u)
            merged[key] = merged.get(key, 0) + c
        keys = sorted(merged)
        self.n = n
        self.real = real
        self.m = len(keys)
        self.tail = np.array([k[0] for k in keys], dtype=np.int64)
        self.head = np.array([k[1] for k in keys], dtype=np.int64)
        self.cap = np.array([merged[k] for k in keys], dtype=np.float64)
        if not np.all(np.isfinite(self.cap)):
            raise StructuralError("capacity overflow")
        self.W = float(self.cap.max()) if self.m else 1.0
        self._build_adjacency()

    def _build_adjacency(self) -> None:
        n, m = self.n, self.m
        ends = np.concatenate([self.tail, self.head])
        nbrs = np.concatenate([self.head, self.tail])
        eids = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((nbrs, ends))
        self.adj_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.adj_ptr, ends + 1, 1)
        self.adj_ptr = np.cumsum(self.adj_ptr)
        self.adj_nbr = nbrs[order]
        self.adj_edge = eids[order]
        self._deg = np.zeros(n)
        np.add.at(self._deg, self.tail, self.cap)
        np.add.at(self._deg, self.head, self.cap)

    @classmethod
    def from_arrays(cls, n: int, tail, head, cap, *, real: bool = True) -> "CapGraph":
        return cls(n, zip(np.asarray(tail).tolist(), np.asarray(head).tolist(), np.asarray(cap).tolist()), real=real)

    @property
    def deg(self) -> np.ndarray:
        return self._deg

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.tail.tolist(), self.head.tolist(), self.cap.tolist()))

    def neighbors(self, v: int) -> np.ndarray:
        return self.adj_nbr[self.adj_ptr[v]:self.adj_ptr[v + 1]]

    def incident(self, v: int) -> np.ndarray:
        return self.adj_edge[self.adj_ptr[v]:self.adj_ptr[v + 1]]

    def validate(self) -> None:
        if np.any(self.tail >= self.head):
            raise StructuralError("edge orientation broken")
        if not self.real:
            if np.any(self.cap < 1) or np.any(self.cap != np.round(self.cap)):
                raise StructuralError("capacities must be integers >= 1")
        count = np.zeros(self.n, dtype=np.int64)
        np.add.at(count, self.tail, 1)
        np.add.at(count, self.head, 1)
        if not np.array_equal(np.diff(self.adj_ptr), count):
            raise StructuralError("adjacency index inconsistent with edges")
        for v in range(self.n):
            for e, w in zip(self.incident(v), self.neighbors(v)):
                if {int(self.tail[e]), int(self.head[e])} != {v, int(w)}:
                    raise StructuralError(f"adjacency entry ({v}, {w}) does not match edge {e}")

    def edge_mask_subgraph(self, keep: np.ndarray, scale: float = 1.0) -> "CapGraph":
        keep = np.asarray(keep, dtype=bool)
        return CapGraph.from_arrays(self.n, self.tail[keep], self.head[keep], self.cap[keep] * scale,
                                    real=self.real or scale != 1.0)

    def components(self) -> np.ndarray:
        """Connected-component label per vertex."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        a = coo_matrix((np.ones(self.m), (self.tail, self.head)), shape=(self.n, self.n))
        return connected_components(a, directed=False)[1]

    def __repr__(self) -> str:
        return f"CapGraph(n={self.n}, m={self.m}, W={self.W:g})"


@dataclass
class FlowAssignment:
    """One signed flow value per undirected edge of ``graph``."""

    graph: CapGraph
    f: np.ndarray

    @classmethod
    def zeros(cls, graph: CapGraph) -> "FlowAssignment":
        return cls(graph, np.zeros(graph.m))

    def congestion(self) -> float:
        if self.graph.m == 0:
            return 0.0
        return float(np.max(np.abs(self.f) / self.graph.cap))

    def excess(self) -> np.ndarray:
        """Net inflow per vertex."""
        return net_flow_vector(self.graph, self.f)

    def net_flow(self, v: int) -> float:
        return net_flow(self.graph, self, v)

    def demand(self) -> np.ndarray:
        """The demand routed: net outflow per vertex."""
        return -self.excess()

    def __add__(self, other: "FlowAssignment") -> "FlowAssignment":
        return FlowAssignment(self.graph, self.f + other.f)

    def scaled(self, k: float) -> "FlowAssignment":
        return FlowAssignment(self.graph, self.f * k)


class VertexPartition:
    """Disjoint blocks covering a ground set."""

    def __init__(self, blocks: Iterable[Iterable[int]], n: int | None = None):
        self.blocks: list[np.ndarray] = [np.array(sorted(set(int(v) for v in b)), dtype=np.int64) for b in blocks]
        self.blocks = [b for b in self.blocks if b.size]
        if n is None:
            n = 1 + max((int(b[-1]) for b in self.blocks), default=-1)
        self.n = n
        self.block_of = np.full(n, -1, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            if b.size and (b[0] < 0 or b[-1] >= n):
                raise StructuralError("unknown vertex id in partition")
            if np.any(self.block_of[b] >= 0):
                raise StructuralError("partition blocks overlap")
            self.block_of[b] = i

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "VertexPartition":
        labels = np.asarray(labels)
        groups: dict[int, list[int]] = {}
        for v, lab in enumerate(labels.tolist()):
            if lab >= 0:
                groups.setdefault(lab, []).append(v)
        blocks = sorted(groups.values(), key=lambda b: b[0])
        return cls(blocks, n=len(labels))

    @property
    def ground(self) -> np.ndarray:
        return np.flatnonzero(self.block_of >= 0)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def canonical(self) -> list[tuple[int, ...]]:
        return sorted(tuple(b.tolist()) for b in self.blocks)

    def __repr__(self) -> str:
        return f"VertexPartition({self.canonical()})"


def _labels_for(G: CapGraph, P) -> tuple[np.ndarray, bool]:
    if isinstance(P, VertexPartition):
        if P.n > G.n:
            raise StructuralError("partition refers to vertices outside the graph")
        lab = np.full(G.n, -1, dtype=np.int64)
        lab[: P.n] = P.block_of
        return lab, False
    S = np.asarray(list(P) if not isinstance(P, np.ndarray) else P, dtype=np.int64)
    if S.size and (S.min() < 0 or S.max() >= G.n):
        raise StructuralError("unknown vertex id in set")
    lab = np.full(G.n, -1, dtype=np.int64)
    lab[S] = 0
    return lab, True


def boundary_mask(G: CapGraph, P, single: bool | None = None) -> np.ndarray:
    lab, is_set = _labels_for(G, P)
    if single is None:
        single = is_set
    lt, lh = lab[G.tail], lab[G.head]
    inside = (lt >= 0) & (lh >= 0) & (lt != lh)
    if single:
        inside |= (lt >= 0) != (lh >= 0)
    return inside


def boundary(G: CapGraph, P, single: bool | None = None) -> tuple[np.ndarray, float]:
    """Return (edge ids of the boundary, total boundary capacity).

    ``P`` may be a VertexPartition or a plain vertex set; a plain set is
    treated with single-cut semantics (edges leaving the set).
    """
    mask = boundary_mask(G, P, single)
    ids = np.flatnonzero(mask)
    return ids, float(G.cap[ids].sum())


def cut_value(G: CapGraph, S) -> float:
    return boundary(G, S, single=True)[1]


def induced_degree(G: CapGraph, H, v: int | None = None):
    """Capacity of the edges in H (edge ids or boolean mask) incident to v.

    With ``v=None`` the whole degree vector is returned.
    """
    H = np.asarray(H)
    if H.dtype == bool:
        ids = np.flatnonzero(H)
    else:
        ids = H.astype(np.int64)
    deg = np.zeros(G.n)
    np.add.at(deg, G.tail[ids], G.cap[ids])
    np.add.at(deg, G.head[ids], G.cap[ids])
    return deg if v is None else float(deg[v])


def boundary_degree(G: CapGraph, P) -> np.ndarray:
    return induced_degree(G, boundary_mask(G, P))


def conductance(G: CapGraph, d, S, with_flag: bool = False):
    """delta(S) / min(d(S), d(V minus S)); +inf when the denominator is zero."""
    d = np.asarray(d, dtype=np.float64)
    S = np.asarray(sorted(set(int(v) for v in S)), dtype=np.int64)
    if S.size == 0 or S.size == G.n:
        raise StructuralError("conductance needs a nonempty proper subset")
    mask = np.zeros(G.n, dtype=bool)
    mask[S] = True
    dS = float(d[mask].sum())
    dR = float(d[~mask].sum())
    denom = min(dS, dR)
    delta = cut_value(G, S)
    if denom <= 0:
        return (math.inf, True) if with_flag else math.inf
    val = delta / denom
    return (val, False) if with_flag else val


def net_flow_vector(G: CapGraph, f: np.ndarray) -> np.ndarray:
    ex = np.zeros(G.n)
    np.add.at(ex, G.head, f)
    np.add.at(ex, G.tail, -f)
    return ex


def net_flow(G: CapGraph, flow: FlowAssignment | np.ndarray, v: int) -> float:
    """Signed excess (inflow minus outflow) at v, in O(deg v)."""
    f = flow.f if isinstance(flow, FlowAssignment) else np.asarray(flow)
    ids = G.incident(v)
    signs = np.where(G.head[ids] == v, 1.0, -1.0)
    return float(np.dot(signs, f[ids]))


def scale_graph(G: CapGraph, factor) -> CapGraph:
    """Multiply every capacity by ``factor`` (rational or float > 0)."""
    if isinstance(factor, Fraction):
        fac = factor.numerator / factor.denominator
    else:
        fac = float(factor)
    if not fac > 0:
        raise StructuralError("scale factor must be positive")
    caps = G.cap * fac
    if not np.all(np.isfinite(caps)):
        raise OverflowError("scaled capacities overflow")
    return CapGraph.from_arrays(G.n, G.tail, G.head, caps, real=True)


def flow_from_paths(G: CapGraph, paths) -> np.ndarray:
    f = np.zeros(G.m)
    for p in paths:
        if len(p.edges):
            np.add.at(f, p.edges, p.signs * p.weight)
    return f


# -- fixture generators ------------------------------------------------------

def complete_graph(n: int, c: int = 1) -> CapGraph:
    return CapGraph(n, [(u, v, c) for u in range(n) for v in range(u + 1, n)])


def path_graph(n: int, caps: Sequence[int] | None = None) -> CapGraph:
    caps = caps or [1] * (n - 1)
    return CapGraph(n, [(i, i + 1, caps[i]) for i in range(n - 1)])


def cycle_graph(n: int) -> CapGraph:
    return CapGraph(n, [(i, (i + 1) % n, 1) for i in range(n)])


def barbell(k: int, bridge: int = 1, c: int = 1) -> CapGraph:
    """Two k-cliques joined by one bridge edge (k-1, k)."""
    edges = [(u, v, c) for u in range(k) for v in range(u + 1, k)]
    edges += [(k + u, k + v, c) for u in range(k) for v in range(u + 1, k)]
    edges.append((k - 1, k, bridge))
    return CapGraph(2 * k, edges)


def sbm(n: int, p_in: float, p_out: float, seed: int, W: int = 1) -> CapGraph:
    """Two-block stochastic block graph, resampled until connected."""
    rng = np.random.default_rng(seed)
    half = n // 2
    while True:
        edges = []
        for u in range(n):
            for v in range(u + 1, n):
                p = p_in if (u < half) == (v < half) else p_out
                if rng.random() < p:
                    edges.append((u, v, int(rng.integers(1, W + 1))))
        G = CapGraph(n, edges)
        if n <= 1 or np.unique(G.components()).size == 1:
            return G


def random_connected(n: int, seed: int, W: int = 1, extra: float = 1.0) -> CapGraph:
    """Random spanning tree plus about ``extra * n`` random edges."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((int(perm[i]), int(perm[j]), int(rng.integers(1, W + 1))))
    for _ in range(int(extra * n)):
        u, v = rng.choice(n, size=2, replace=False) if n > 1 else (0, 0)
        if u != v:
            edges.append((int(u), int(v), int(rng.integers(1, W + 1))))
    G = CapGraph(n, edges)
    if G.m and G.W > W:
        # merged parallel edges may exceed W; clip back into range
        G = CapGraph.from_arrays(n, G.tail, G.head, np.minimum(G.cap, W), real=False)
    return G
