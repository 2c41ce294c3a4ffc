"""DIMACS-like problem files and deterministic JSON reports.

Lines: ``c`` comments, one header ``p gr n m``, edges ``a u v cap``
(1-based), optional vertex weights ``w v d`` and demands ``b v val``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import CapGraph, StructuralError

FORMAT = 1


class InputError(ValueError):
    """Malformed or inconsistent problem file."""


@dataclass
class Problem:
    graph: CapGraph
    d: np.ndarray | None = None
    b: np.ndarray | None = None


def _num(tok: str, lineno: int) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise InputError(f"line {lineno}: not a number: {tok!r}") from None
    if not math.isfinite(x):
        raise InputError(f"line {lineno}: non-finite value {tok!r}")
    return x


def _vertex(tok: str, n: int, lineno: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise InputError(f"line {lineno}: bad vertex id {tok!r}") from None
    if not 1 <= v <= n:
        raise InputError(f"line {lineno}: vertex {v} outside 1..{n}")
    return v - 1


def parse_problem(text: str) -> Problem:
    n = m = None
    edges: list[tuple[int, int, float]] = []
    w: dict[int, float] = {}
    b: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0] == "c":
            continue
        kind = tok[0]
        if kind == "p":
            if n is not None:
                raise InputError(f"line {lineno}: second header")
            if len(tok) != 4 or tok[1] != "gr":
                raise InputError(f"line {lineno}: header must read 'p gr n m'")
            try:
                n, m = int(tok[2]), int(tok[3])
            except ValueError:
                raise InputError(f"line {lineno}: header counts must be integers") from None
            if n < 1 or m < 0:
                raise InputError(f"line {lineno}: need n >= 1 and m >= 0")
            continue
        if n is None:
            raise InputError(f"line {lineno}: data before the 'p gr' header")
        if kind == "a" and len(tok) == 4:
            u, v = _vertex(tok[1], n, lineno), _vertex(tok[2], n, lineno)
            c = _num(tok[3], lineno)
            if u == v:
                raise InputError(f"line {lineno}: self-loop")
            if c <= 0:
                raise InputError(f"line {lineno}: capacity must be positive")
            edges.append((u, v, c))
        elif kind == "w" and len(tok) == 3:
            v, x = _vertex(tok[1], n, lineno), _num(tok[2], lineno)
            if x < 0:
                raise InputError(f"line {lineno}: negative vertex weight")
            w[v] = x
        elif kind == "b" and len(tok) == 3:
            v = _vertex(tok[1], n, lineno)
            b[v] = b.get(v, 0.0) + _num(tok[2], lineno)
        else:
            raise InputError(f"line {lineno}: unrecognised line {raw.strip()!r}")
    if n is None:
        raise InputError("missing 'p gr n m' header")
    if len(edges) != m:
        raise InputError(f"header announces {m} edges, found {len(edges)}")
    real = any(float(c) != int(c) for _, _, c in edges)
    try:
        G = CapGraph(n, edges, real=real)
    except StructuralError as e:
        raise InputError(str(e)) from None
    d = None
    if w:
        d = G.deg.copy()
        for v, x in w.items():
            d[v] = x
    bv = None
    if b:
        bv = np.zeros(n)
        for v, x in b.items():
            bv[v] = x
    return Problem(G, d, bv)


def read_problem(path: str | Path) -> Problem:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    return parse_problem(text)


def write_problem(G: CapGraph, d=None, b=None) -> str:
    lines = [f"p gr {G.n} {G.m}"]
    for u, v, c in G.edges():
        lines.append(f"a {u + 1} {v + 1} {_fmt(c)}")
    if d is not None:
        lines += [f"w {v + 1} {_fmt(x)}" for v, x in enumerate(np.asarray(d).tolist())]
    if b is not None:
        lines += [f"b {v + 1} {_fmt(x)}" for v, x in enumerate(np.asarray(b).tolist()) if x]
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return str(int(x)) if float(x) == int(x) else repr(float(x))


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return round(x, 12) if x != int(x) or abs(x) > 2 ** 53 else x
    return obj


def dumps(report: dict) -> str:
    body = {"format": FORMAT, **report}
    return json.dumps(_plain(body), sort_keys=True, indent=2) + "\n"
