"""Leapfrog sweep kernels with a compiled backend and a numpy fallback.

A step writes interior node ``j`` of level ``n+1`` as

    Y[n+1, j] = cl[n, j] Y[n, j-1] + cd[n, j] Y[n, j] + cu[n, j] Y[n, j+1] + cb[n, j] Y[n-1, j]

for ``n >= 1``; levels 0 and 1 and both boundary columns are inputs.
``transpose`` is the exact reverse-mode sweep of ``forward``: starting from
a cotangent ``L`` on every node, it accumulates into ``L`` the cotangent of
each input (levels 0 and 1, and the boundary columns).
"""

from __future__ import annotations

import numpy as np

from . import _leapfrog_py

try:
    from . import _leapfrog as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _impl(arr: np.ndarray, backend: str | None):
    backend = backend or BACKEND
    if backend == "cython" and _compiled is not None and arr.ndim == 2:
        return _compiled
    if backend not in ("cython", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return _leapfrog_py


def forward(cl, cd, cu, cb, Y: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Fill levels ``2..N`` of ``Y`` in place and return it."""
    _impl(Y, backend).forward(cl, cd, cu, cb, Y)
    return Y


def transpose(cl, cd, cu, cb, L: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Back-propagate the cotangent ``L`` in place and return it."""
    _impl(L, backend).transpose(cl, cd, cu, cb, L)
    return L
