from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_carleman.geodesics import (
    ConvergenceError,
    exp_map,
    frame_gram,
    initial_frame,
    integrate_geodesic,
    log_map,
    omega_grid,
    orthonormal_basis,
    parallel_transport,
)
from lorentz_carleman.metrics import Minkowski, Warped


def _norm(model, x, v):
    return np.einsum("...a,...ab,...b->...", v, model.metric(x), v)


def test_minkowski_geodesic_is_a_straight_line():
    path = integrate_geodesic(Minkowski(3), np.zeros(4), [0, 1, 0, 0], 2.0)
    assert np.allclose(path.x, np.outer(path.s, [0, 1, 0, 0]), atol=1e-12)
    assert path.x[0] == pytest.approx(np.zeros(4))


def test_null_geodesic_stays_null():
    path = integrate_geodesic(Minkowski(1), np.zeros(2), [1.0, 1.0], 3.0)
    assert np.abs(_norm(Minkowski(1), path.x, path.v)).max() == 0


def test_warped_norm_drift_below_tolerance():
    m = Warped(2, delta=0.05)
    path = integrate_geodesic(m, [0.1, 0.2, 0.3], [0.4, 1.0, -0.5], 2.0, tol=1e-10)
    drift = np.abs(_norm(m, path.x, path.v) - _norm(m, path.x[0], path.v[0]))
    assert drift.max() < 1e-9 * (1 + path.s[-1])
    # half-tolerance rerun agrees: the integrator's own error estimate is honest
    fine = integrate_geodesic(m, [0.1, 0.2, 0.3], [0.4, 1.0, -0.5], 2.0, tol=1e-12)
    assert np.abs(fine.x - path.x).max() < 1e-8


def test_geodesic_leaving_the_chart_is_truncated():
    m = Warped(1, delta=0.05)
    path = integrate_geodesic(m, [0.0, 0.0], [0.0, 10.0], 10.0)
    assert path.truncated and path.s[-1] < 10.0


def test_exp_map_examples():
    p = np.array([0.3, 0.2])
    assert exp_map(Minkowski(1), p, [0.5, -0.1]) == pytest.approx(p + [0.5, -0.1])
    m = Warped(1, delta=0.05)
    assert exp_map(m, p, np.zeros(2)) == pytest.approx(p, abs=1e-14)


def test_warped_exp_map_matches_dense_reintegration():
    m = Warped(2, delta=0.05)
    p = np.array([0.3, 0.2, 0.1])
    B = orthonormal_basis(m, p)
    v = B @ np.array([0.0, 0.3 * np.cos(0.4), 0.3 * np.sin(0.4)])
    ref = integrate_geodesic(m, p, v, 1.0, tol=1e-13, n_samples=2).x[-1]
    assert np.abs(exp_map(m, p, v) - ref).max() < 1e-10


def test_log_map_trivial_cases():
    p = np.array([0.1, 0.4])
    q = np.array([0.6, 0.9])
    assert log_map(Minkowski(1), p, q) == pytest.approx(q - p)
    assert log_map(Warped(1, delta=0.05), p, p) == pytest.approx(np.zeros(2), abs=1e-14)


def test_warped_log_map_round_trip():
    m = Warped(2, delta=0.05)
    p = np.array([0.3, 0.2, 0.1])
    q = p + np.array([[0.2, 0.4, 0.1], [-0.1, -0.3, 0.35], [0.3, 0.1, 0.35]])
    assert np.abs(exp_map(m, p, log_map(m, p, q)) - q).max() < 1e-9


def test_log_map_reports_stalled_newton():
    m = Warped(1, delta=0.05)
    with pytest.raises(ConvergenceError) as info:
        log_map(m, [0.0, 0.0], [0.5, 1.5], max_iter=0, tol=1e-30)
    assert info.value.residual > 0


@settings(max_examples=20, deadline=None)
@given(v=st.tuples(st.floats(-0.5, 0.5), st.floats(-0.6, 0.6)))
def test_log_inverts_exp_on_warped(v):
    m = Warped(1, delta=0.05)
    p = np.array([0.2, 0.1])
    assert np.abs(log_map(m, p, exp_map(m, p, np.array(v))) - v).max() < 1e-8


def test_parallel_transport_preserves_inner_products():
    m = Warped(2, delta=0.05)
    x0 = np.array([0.1, 0.2, 0.3])
    path = integrate_geodesic(m, x0, [0.2, 1.0, 0.3], 1.5, n_samples=20)
    w1 = parallel_transport(m, path, [1.0, 0.0, 0.2])
    w2 = parallel_transport(m, path, [0.0, 0.3, 1.0])
    g = m.metric(path.x)
    for a, b in ((w1, w1), (w1, w2), (w1, path.v)):
        ip = np.einsum("pa,pab,pb->p", a, g, b)
        assert np.ptp(ip) < 1e-9


def test_parallel_transport_on_minkowski_is_constant():
    path = integrate_geodesic(Minkowski(2), np.zeros(3), [0.5, 1.0, 0.0], 1.0, n_samples=9)
    w = parallel_transport(Minkowski(2), path, [0.1, 0.2, 0.3])
    assert np.abs(w - [0.1, 0.2, 0.3]).max() < 1e-13


@pytest.mark.parametrize("model", [Minkowski(3), Warped(2, delta=0.1)], ids=repr)
def test_orthonormal_basis_diagonalises_metric(model):
    p = np.linspace(0.1, 0.4, model.dim)
    B = orthonormal_basis(model, p)
    assert np.allclose(B.T @ model.metric(p) @ B, np.diag([-1.0] + [1.0] * model.n), atol=1e-13)


def test_initial_frame_has_the_stated_gram_matrix():
    m = Warped(2, delta=0.05)
    p = np.array([0.3, 0.2, 0.1])
    om = omega_grid(2, 4, 5)
    F = initial_frame(orthonormal_basis(m, p), om)[..., :-1]
    gram = np.einsum("pia,ij,pjb->pab", F, m.metric(p), F)
    assert np.abs(gram - frame_gram(om[:, 0], 3)).max() < 1e-13


def test_initial_frame_rejects_null_directions():
    with pytest.raises(ValueError):
        initial_frame(np.eye(2), np.array([[1.0, 1.0]]))
