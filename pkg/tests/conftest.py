from __future__ import annotations

import numpy as np
import pytest

from expflow.graph import CapGraph


def k8_with_triangle() -> CapGraph:
    """K8 with a triangle hanging off vertex 0 through one edge."""
    edges = [(u, v, 1) for u in range(8) for v in range(u + 1, 8)]
    edges += [(0, 8, 1), (8, 9, 1), (9, 10, 1), (8, 10, 1)]
    return CapGraph(11, edges)


@pytest.fixture
def k8tri() -> CapGraph:
    return k8_with_triangle()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
