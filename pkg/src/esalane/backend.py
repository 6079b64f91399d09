"""Kernel backend selection.

The hot convolution kernels come in two interchangeable implementations:
numba-compiled loops (default when numba imports) and a pure-numpy fallback.
Set ESALANE_BACKEND=numpy|numba|auto before import to pick one explicitly;
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

try:
    from . import _kernels_numba
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    _kernels_numba = None


def _select(requested: str):
    if requested == "numpy":
        return _kernels_numpy
    if requested == "numba":
        if _kernels_numba is None:
            raise RuntimeError("ESALANE_BACKEND=numba but numba is not importable")
        return _kernels_numba
    if requested == "auto":
        return _kernels_numba if _kernels_numba is not None else _kernels_numpy
    raise RuntimeError(f"unknown ESALANE_BACKEND {requested!r} (use auto|numba|numpy)")


_active = _select(os.environ.get("ESALANE_BACKEND", "auto").strip().lower())

NAME = _active.NAME
conv2d_forward = _active.conv2d_forward
conv2d_backward_input = _active.conv2d_backward_input
conv2d_backward_weight = _active.conv2d_backward_weight
