from __future__ import annotations

import numpy as np
import pytest

from expflow import _kernels_py, kernels
from expflow.graph import random_connected

compiled = pytest.mark.skipif(kernels.BACKEND != "cython", reason="extension not built")


@compiled
@pytest.mark.parametrize("seed", range(10))
def test_max_flow_backends_agree(seed):
    G = random_connected(30, seed, W=8, extra=2.0)
    args = (G.n, G.tail, G.head, G.cap, G.cap, 0, G.n - 1, 1e-11)
    v1, f1, r1 = kernels._impl.max_flow(*args)
    v2, f2, r2 = _kernels_py.max_flow(*args)
    assert v1 == pytest.approx(v2)
    assert np.array_equal(np.asarray(r1, dtype=bool), np.asarray(r2, dtype=bool))


@compiled
@pytest.mark.parametrize("seed", range(10))
def test_decompose_backends_agree(seed):
    G = random_connected(25, seed, W=4)
    _, f, _ = _kernels_py.max_flow(G.n, G.tail, G.head, G.cap, G.cap, 0, G.n - 1, 1e-11)
    a = kernels._impl.decompose(G.n, G.tail, G.head, G.adj_ptr, G.adj_edge, f, 1e-12)
    b = _kernels_py.decompose(G.n, G.tail, G.head, G.adj_ptr, G.adj_edge, f, 1e-12)
    for x, y in zip(a, b):
        assert np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def test_pure_flag_selects_fallback(monkeypatch):
    import importlib

    monkeypatch.setenv("EXPFLOW_PURE", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("EXPFLOW_PURE")
        importlib.reload(kernels)
