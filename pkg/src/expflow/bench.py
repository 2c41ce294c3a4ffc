"""Compiled versus pure kernels on random graphs."""
from __future__ import annotations

import time

import numpy as np

from . import _kernels_py, kernels
from .graph import random_connected


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(sizes=(50, 200, 800), seed: int = 0, repeat: int = 3) -> list[dict]:
    impls = {"python": _kernels_py}
    if kernels.BACKEND == "cython":
        impls["cython"] = kernels._impl
    rows = []
    for n in sizes:
        G = random_connected(n, seed, W=8, extra=2.0)
        s, t = 0, n - 1
        row = {"n": n, "m": G.m}
        for name, mod in impls.items():
            args = (G.n, G.tail, G.head, G.cap, G.cap, s, t, 1e-11)
            row[f"max_flow_{name}_s"] = _time(lambda: mod.max_flow(*args), repeat)
            _, f, _ = mod.max_flow(*args)
            row[f"decompose_{name}_s"] = _time(
                lambda: mod.decompose(G.n, G.tail, G.head, G.adj_ptr, G.adj_edge, f, 1e-12), repeat)
        if "cython" in impls:
            row["max_flow_speedup"] = row["max_flow_python_s"] / max(row["max_flow_cython_s"], 1e-12)
            row["decompose_speedup"] = row["decompose_python_s"] / max(row["decompose_cython_s"], 1e-12)
        rows.append(row)
    return rows
