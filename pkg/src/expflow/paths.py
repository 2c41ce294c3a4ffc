"""Weighted path decompositions of flows, plus rescale and truncate steps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .graph import CapGraph, FlowAssignment, StructuralError


class DecompositionError(RuntimeError):
    pass


@dataclass
class PathDecomposition:
    """Paths stored flat: path i uses ``edges[ptr[i]:ptr[i+1]]`` and visits
    ``verts[ptr[i] + i : ptr[i+1] + i + 1]``."""

    graph: CapGraph
    ptr: np.ndarray
    verts: np.ndarray
    edges: np.ndarray
    signs: np.ndarray
    weights: np.ndarray
    cycles_removed: int = 0

    @classmethod
    def empty(cls, graph: CapGraph) -> "PathDecomposition":
        z = np.zeros(0, dtype=np.int64)
        return cls(graph, np.zeros(1, dtype=np.int64), z, z, np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.weights)

    def path_vertices(self, i: int) -> np.ndarray:
        return self.verts[self.ptr[i] + i:self.ptr[i + 1] + i + 1]

    def path_edges(self, i: int) -> np.ndarray:
        return self.edges[self.ptr[i]:self.ptr[i + 1]]

    @property
    def paths(self) -> list[tuple[list[int], float]]:
        return [(self.path_vertices(i).tolist(), float(self.weights[i])) for i in range(len(self))]

    @property
    def starts(self) -> np.ndarray:
        return self.verts[self.ptr[:-1] + np.arange(len(self))]

    @property
    def ends(self) -> np.ndarray:
        return self.verts[self.ptr[1:] + np.arange(len(self))]

    def edge_path_index(self) -> np.ndarray:
        """Path id for each entry of ``edges``."""
        return np.repeat(np.arange(len(self)), np.diff(self.ptr))

    def assemble(self, scale: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if scale is None else self.weights * scale
        f = np.zeros(self.graph.m)
        if len(self.edges):
            np.add.at(f, self.edges, self.signs * w[self.edge_path_index()])
        return f

    def start_mass(self) -> np.ndarray:
        out = np.zeros(self.graph.n)
        np.add.at(out, self.starts, self.weights)
        return out

    def end_mass(self) -> np.ndarray:
        out = np.zeros(self.graph.n)
        np.add.at(out, self.ends, self.weights)
        return out

    def select(self, keep: np.ndarray, weights: np.ndarray | None = None) -> "PathDecomposition":
        """Sub-decomposition of the paths where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        lens = np.diff(self.ptr)
        idx = np.flatnonzero(keep)
        emask = np.repeat(keep, lens)
        vmask = np.repeat(keep, lens + 1)
        ptr = np.concatenate([[0], np.cumsum(lens[idx])]).astype(np.int64)
        w = self.weights[idx] if weights is None else np.asarray(weights)[idx]
        return PathDecomposition(self.graph, ptr, self.verts[vmask], self.edges[emask], self.signs[emask], w)


def _tol(f: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.max(np.abs(f)))) if f.size else 1e-12


def path_decompose(G: CapGraph, f, sources=None, sinks=None, *, rel_tol: float = 1e-9) -> PathDecomposition:
    """Cancel cycles of ``f`` and split the rest into source-to-sink paths.

    ``sources``/``sinks`` bound the positive and negative parts of the
    routed demand; a vertex carrying neither must conserve flow.
    """
    fv = f.f if isinstance(f, FlowAssignment) else np.asarray(f, dtype=np.float64)
    if fv.shape != (G.m,):
        raise StructuralError("flow length does not match edge count")
    out = np.zeros(G.n)
    np.add.at(out, G.tail, fv)
    np.add.at(out, G.head, -fv)
    scale = max(1.0, float(np.abs(fv).max()) if fv.size else 1.0)
    slack = rel_tol * scale * max(1, G.n)
    if sources is not None or sinks is not None:
        src = np.zeros(G.n) if sources is None else np.asarray(sources, dtype=np.float64)
        snk = np.zeros(G.n) if sinks is None else np.asarray(sinks, dtype=np.float64)
        bad = np.flatnonzero((out > src + slack) | (-out > snk + slack))
        if bad.size:
            raise DecompositionError(f"flow not conserved at vertex {int(bad[0])} (net out {out[bad[0]]:.3g})")
    ptr, verts, edges, signs, weights, ncyc = kernels.decompose(
        G.n, G.tail, G.head, G.adj_ptr, G.adj_edge, fv, _tol(fv))
    return PathDecomposition(G, ptr, verts, edges, signs, weights, int(ncyc))


def rescale_paths(D: PathDecomposition, per_terminal_scale, *, by: str = "start", K: float = np.inf) -> FlowAssignment:
    """Flow obtained by scaling every path by the factor of its terminal.

    ``per_terminal_scale`` is a mapping from terminal to factor or a dense
    vector; in mapping form paths of unlisted terminals are dropped.
    """
    term = D.starts if by == "start" else D.ends
    if isinstance(per_terminal_scale, Mapping):
        present = set(term.tolist())
        vec = np.zeros(D.graph.n)
        for v, s in per_terminal_scale.items():
            if int(v) not in present:
                raise StructuralError(f"terminal {v} not present in decomposition")
            vec[int(v)] = s
    else:
        vec = np.asarray(per_terminal_scale, dtype=np.float64)
    if np.any(vec < 0) or np.any(vec > K):
        raise ValueError("scale outside [0, K]")
    return FlowAssignment(D.graph, D.assemble(vec[term]))


def truncate_at_boundary(D: PathDecomposition, cluster_map) -> PathDecomposition:
    """Keep each path's maximal prefix inside the cluster of its start."""
    lab = np.asarray(cluster_map)
    lens = np.diff(D.ptr)
    new_lens = np.empty_like(lens)
    for i in range(len(D)):
        vs = D.path_vertices(i)
        inside = lab[vs] == lab[vs[0]]
        k = int(np.argmin(inside)) if not inside.all() else len(vs)
        new_lens[i] = k - 1
    vmask = np.zeros(len(D.verts), dtype=bool)
    emask = np.zeros(len(D.edges), dtype=bool)
    for i in range(len(D)):
        vmask[D.ptr[i] + i:D.ptr[i] + i + new_lens[i] + 1] = True
        emask[D.ptr[i]:D.ptr[i] + new_lens[i]] = True
    ptr = np.concatenate([[0], np.cumsum(new_lens)]).astype(np.int64)
    return PathDecomposition(D.graph, ptr, D.verts[vmask], D.edges[emask], D.signs[emask], D.weights.copy())


@dataclass
class RoutingTranscript:
    """Ordered record of decompose/rescale/truncate steps."""

    steps: list[tuple[str, object]] = field(default_factory=list)

    def decompose(self, G: CapGraph, f, sources=None, sinks=None) -> PathDecomposition:
        fv = f.f if isinstance(f, FlowAssignment) else np.asarray(f, dtype=np.float64)
        self.steps.append(("decompose", (fv.copy(), sources, sinks)))
        return path_decompose(G, fv, sources, sinks)

    def rescale(self, D: PathDecomposition, scale, by: str = "start") -> FlowAssignment:
        self.steps.append(("rescale", (scale, by)))
        return rescale_paths(D, scale, by=by)

    def truncate(self, D: PathDecomposition, cluster_map) -> PathDecomposition:
        self.steps.append(("truncate", np.asarray(cluster_map).copy()))
        return truncate_at_boundary(D, cluster_map)

    def replay(self, G: CapGraph) -> FlowAssignment | PathDecomposition | None:
        cur = None
        for op, arg in self.steps:
            if op == "decompose":
                fv, src, snk = arg
                cur = path_decompose(G, fv, src, snk)
            elif op == "truncate":
                cur = truncate_at_boundary(cur, arg)
            else:
                scale, by = arg
                cur = rescale_paths(cur, scale, by=by)
        return cur
