from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_carleman.pseudoconvexity import (
    PcParams,
    RegimeError,
    barred_frames,
    eta_fbar_hbar,
    fd_fbar_hessian,
    fields_at_points,
    gbar_plus,
    hessian_relation_residual,
    p_map,
    pbar_map,
    pi_tensor,
    pseudoconvexity_check,
    pseudoconvexity_margins,
    random_tangent,
    shifted_gauss_residuals,
)
from lorentz_carleman.pipeline import points_in_domain

from .conftest import model_setup


class TR:
    def __init__(self, t, r):
        self.t, self.r = t, r


def test_shift_values_at_a_known_point():
    eta, fbar, hbar = eta_fbar_hbar(PcParams(0.05, 1.0), TR(0.5, 1.0))
    assert eta == pytest.approx(0.9875)
    assert fbar == pytest.approx(0.1875 / 0.9875)
    assert hbar == pytest.approx(0.5 / 0.9875 - 0.0125)


def test_shift_is_trivial_on_t_zero_and_eps_zero():
    eta, fbar, _ = eta_fbar_hbar(PcParams(0.05, 1.0), TR(0.0, 0.8))
    assert eta == 1.0 and fbar == pytest.approx(0.16)
    eta, fbar, hbar = eta_fbar_hbar(PcParams(0.0, 1.0), TR(0.7, 0.8))
    assert eta == 1.0 and fbar == pytest.approx(0.25 * (0.64 - 0.49)) and hbar == 0.5


def test_params_validation_and_regime():
    with pytest.raises(ValueError):
        PcParams(eps0=0.2)
    with pytest.raises(ValueError):
        PcParams(r0=0.0)
    with pytest.raises(RegimeError):
        eta_fbar_hbar(PcParams(0.1, 0.1), TR(2.0, 3.0))


@pytest.fixture(scope="module")
def mink_fields():
    m, p, B = model_setup("minkowski", 2)
    pts = points_in_domain(m, p, B, 1.0, 40, seed=11)
    return fields_at_points(m, p, B, PcParams(0.05, 1.0), pts)


@pytest.fixture(scope="module")
def warped_fields(warped2):
    m, p, B = warped2
    pts = points_in_domain(m, p, B, 1.0, 40, seed=12)
    return m, p, B, pts, fields_at_points(m, p, B, PcParams(0.05, 1.0), pts)


def test_tangency_maps_are_identity_without_shift():
    m, p, B = model_setup("minkowski", 2)
    fl = fields_at_points(m, p, B, PcParams(0.0, 1.0), points_in_domain(m, p, B, 1.0, 5, seed=1))
    X = np.zeros((5, 3))
    X[:, 1:] = np.random.default_rng(0).standard_normal((5, 2))
    assert p_map(fl, X) == pytest.approx(X)
    assert pbar_map(fl, X) == pytest.approx(X)


def test_tangency_maps_invert_each_other(warped_fields):
    *_, fl = warped_fields
    X = np.zeros((len(fl.r), 3))
    X[:, 1:] = np.random.default_rng(1).standard_normal((len(fl.r), 2))
    assert np.abs(pbar_map(fl, p_map(fl, X)) - X).max() < 1e-12
    with pytest.raises(ValueError):
        p_map(fl, np.eye(3)[[0] * len(fl.r)])


def test_barred_frame_is_orthonormal_for_gbar_plus(warped_fields):
    *_, fl = warped_fields
    bf = barred_frames(fl)
    want = np.zeros_like(bf.gbar_plus)
    want[:, 0, 0], want[:, 1, 1] = fl.kappa, 1.0
    assert np.abs(bf.gbar_plus - want).max() < 1e-10
    # the barred tangent vectors annihilate d fbar
    assert np.abs(np.einsum("pai,pa->pi", bf.vectors[:, :, 1:], fl.dfbar)).max() < 1e-12


def test_minkowski_margin_has_closed_form(mink_fields):
    exact, rand = pseudoconvexity_margins(mink_fields)
    want = mink_fields.params.eps0 / 8 * mink_fields.r**2
    assert np.abs(exact - want).max() < 1e-12
    assert np.all(rand >= exact - 1e-13)


def test_pi_vanishes_without_shift_on_minkowski():
    m, p, B = model_setup("minkowski", 2)
    fl = fields_at_points(m, p, B, PcParams(0.0, 1.0), points_in_domain(m, p, B, 1.0, 8, seed=2))
    assert np.abs(pi_tensor(fl).components[:, 1:, 1:]).max() < 1e-12


def test_shifted_gauss_corrections_are_second_order_in_t(mink_fields):
    e1, e2 = shifted_gauss_residuals(mink_fields)
    et2 = mink_fields.params.eps * mink_fields.t**2
    assert np.all(np.abs(e1) <= 100 * et2 + 1e-12)
    assert np.all(np.abs(e2) <= 100 * et2 + 1e-12)


def test_hessian_relation_with_assembled_and_differenced_hessian(warped_fields):
    m, p, B, pts, fl = warped_fields
    X = random_tangent(fl, 2, seed=5)
    assert hessian_relation_residual(fl, X[:, 0], X[:, 1]).max() < 1e-12
    H = np.einsum("pka,pkl,plb->pab", fl.frame, fd_fbar_hessian(m, p, B, fl.params, pts), fl.frame)
    assert hessian_relation_residual(fl, X[:, 0], X[:, 1], ddfbar=H).max() < 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_tangent_vectors_are_unit_and_tangent(warped_fields, seed):
    *_, fl = warped_fields
    X = random_tangent(fl, 3, seed=seed)
    assert np.abs(np.einsum("pca,pa->pc", X, fl.dfbar)).max() < 1e-12
    norms = np.stack([gbar_plus(fl, X[:, c], X[:, c]) for c in range(3)], axis=1)
    assert np.abs(norms - 1).max() < 1e-10


def test_margin_sign_tracks_curvature():
    m, p, B = model_setup("warped", 2, 0.01)
    small, _ = pseudoconvexity_check(PcParams(0.05, 1.0), m, p, B, n_omega0=6, n_dirs=8, n_radii=5)
    assert small >= 0
    m, p, B = model_setup("warped", 2, 0.5)
    big, _ = pseudoconvexity_check(PcParams(0.05, 1.0), m, p, B, n_omega0=6, n_dirs=8, n_radii=5)
    assert big < 0
