from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_carleman import leapfrog

BACKENDS = ["numpy"] + (["cython"] if leapfrog.BACKEND == "cython" else [])


def random_coeffs(rng, N, J):
    return tuple(rng.uniform(-1, 1, (N + 1, J + 1)) * s for s in (0.4, 0.8, 0.4, 1.0))


def input_mask(N, J):
    m = np.zeros((N + 1, J + 1), dtype=bool)
    m[:2] = True
    m[:, [0, J]] = True
    return m


def test_unknown_backend_is_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        leapfrog.forward(*random_coeffs(rng, 4, 4), np.zeros((5, 5)), backend="fortran")


def test_backends_agree():
    rng = np.random.default_rng(1)
    c = random_coeffs(rng, 40, 30)
    Y = rng.standard_normal((41, 31))
    outs = {b: leapfrog.forward(*c, Y.copy(), backend=b) for b in BACKENDS}
    tr = {b: leapfrog.transpose(*c, Y.copy(), backend=b) for b in BACKENDS}
    for b in BACKENDS:
        assert np.abs(outs[b] - outs["numpy"]).max() < 1e-12
        assert np.abs(tr[b] - tr["numpy"]).max() < 1e-12


def test_forward_leaves_inputs_untouched_and_follows_the_stencil():
    rng = np.random.default_rng(2)
    cl, cd, cu, cb = random_coeffs(rng, 6, 5)
    Y = rng.standard_normal((7, 6))
    out = leapfrog.forward(cl, cd, cu, cb, Y.copy(), backend="numpy")
    mask = input_mask(6, 5)
    assert np.array_equal(out[mask], Y[mask])
    n, j = 3, 2
    want = cl[n, j] * out[n, j - 1] + cd[n, j] * out[n, j] + cu[n, j] * out[n, j + 1] + cb[n, j] * out[n - 1, j]
    assert out[n + 1, j] == pytest.approx(want)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), N=st.integers(2, 12), J=st.integers(2, 10), backend=st.sampled_from(BACKENDS))
def test_transpose_is_the_adjoint_of_forward(seed, N, J, backend):
    rng = np.random.default_rng(seed)
    c = random_coeffs(rng, N, J)
    mask = input_mask(N, J)
    Y = np.where(mask, rng.standard_normal((N + 1, J + 1)), 0.0)
    L = rng.standard_normal((N + 1, J + 1))
    lhs = np.sum(leapfrog.forward(*c, Y.copy(), backend=backend) * L)
    rhs = np.sum(Y * np.where(mask, leapfrog.transpose(*c, L.copy(), backend=backend), 0.0))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_batched_input_matches_slices():
    rng = np.random.default_rng(3)
    c = random_coeffs(rng, 10, 8)
    # the batch axis trails, so each column block is an independent trajectory
    Y = rng.standard_normal((11, 9, 3))
    batch = leapfrog.forward(*c, Y.copy())
    back = leapfrog.transpose(*c, Y.copy())
    for k in range(3):
        assert np.abs(batch[..., k] - leapfrog.forward(*c, Y[..., k].copy())).max() < 1e-12
        assert np.abs(back[..., k] - leapfrog.transpose(*c, Y[..., k].copy())).max() < 1e-12
