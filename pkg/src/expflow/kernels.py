"""Kernel selection: compiled extension when importable, else pure Python.

Set ``EXPFLOW_PURE=1`` to force the pure-Python kernels.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("EXPFLOW_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

max_flow = _impl.max_flow
decompose = _impl.decompose
