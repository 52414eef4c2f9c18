"""Numpy leapfrog sweeps, used when the compiled extension is unavailable.

Both functions accept an optional trailing batch axis on ``Y``/``L``, which
the compiled kernels do not; batched callers always land here.
"""

from __future__ import annotations

import numpy as np


def _b(c: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return c if Y.ndim == 2 else c[..., None]


def forward(cl, cd, cu, cb, Y) -> None:
    cl, cd, cu, cb = (_b(np.asarray(c), Y) for c in (cl, cd, cu, cb))
    for n in range(1, Y.shape[0] - 1):
        Y[n + 1, 1:-1] = cl[n, 1:-1] * Y[n, :-2] + cd[n, 1:-1] * Y[n, 1:-1] + cu[n, 1:-1] * Y[n, 2:] + cb[n, 1:-1] * Y[n - 1, 1:-1]


def transpose(cl, cd, cu, cb, L) -> None:
    cl, cd, cu, cb = (_b(np.asarray(c), L) for c in (cl, cd, cu, cb))
    for n in range(L.shape[0] - 2, 0, -1):
        mu = L[n + 1, 1:-1]
        L[n, :-2] += cl[n, 1:-1] * mu
        L[n, 1:-1] += cd[n, 1:-1] * mu
        L[n, 2:] += cu[n, 1:-1] * mu
        L[n - 1, 1:-1] += cb[n, 1:-1] * mu
