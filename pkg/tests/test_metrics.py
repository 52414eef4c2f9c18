from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_carleman.metrics import (
    CATALOG,
    Conformal,
    DomainError,
    Minkowski,
    Warped,
    curvature_budget,
    make_model,
    riemann_symmetry_residual,
    second_bianchi_residual,
)

coords = st.floats(-1.5, 1.5, allow_nan=False)


def _sympy_riemann(model, x):
    """All-lower Riemann tensor from the symbolic metric, MTW sign."""
    X, g = model.symbolic()
    d = len(X)
    gi = g.inv()
    gam = [[[sum(gi[l, m] * (sp.diff(g[m, a], X[b]) + sp.diff(g[m, b], X[a]) - sp.diff(g[a, b], X[m])) / 2
                  for m in range(d)) for b in range(d)] for a in range(d)] for l in range(d)]
    sub = dict(zip(X, x))
    R = np.zeros((d,) * 4)
    for r in range(d):
        for s in range(d):
            for m in range(d):
                for n in range(d):
                    e = sp.diff(gam[r][n][s], X[m]) - sp.diff(gam[r][m][s], X[n])
                    e += sum(gam[r][m][l] * gam[l][n][s] - gam[r][n][l] * gam[l][m][s] for l in range(d))
                    R[r, s, m, n] = float(e.subs(sub))
    gx = np.array(g.subs(sub), dtype=float)
    return np.einsum("ar,rbcd->abcd", gx, R)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_make_model_builds_each_catalog_entry(name):
    m = make_model(name, 2, 0.05)
    assert m.dim == 3
    assert m.signature_ok(np.zeros((1, 3))).all()


def test_unknown_model_and_bad_dimension_are_rejected():
    with pytest.raises(ValueError):
        make_model("schwarzschild", 1)
    with pytest.raises(ValueError):
        Minkowski(4)
    with pytest.raises(ValueError):
        Warped(1, delta=-0.1)


def test_minkowski_has_no_curvature():
    m = Minkowski(2)
    x = np.random.default_rng(0).uniform(-1, 1, (5, 3))
    assert np.abs(m.christoffel(x)).max() == 0
    assert np.abs(m.riemann(x)).max() == 0


def test_warped_closed_form_riemann_matches_differenced_christoffels():
    m = Warped(1, delta=0.05)
    x = np.random.default_rng(1).uniform(-1, 1, (6, 2))
    assert np.abs(m.analytic_riemann(x) - m.riemann_fd(x)).max() < 1e-9


def test_warped_1p1_riemann_sign_convention():
    # MTW sign: R_txtx = -a a_tt, positive where sin t sin x > 0
    m = Warped(1, delta=0.05)
    x = np.array([[0.7, 0.9]])
    a = 1 + 0.05 * np.sin(0.7) * np.sin(0.9)
    assert m.riemann(x)[0, 0, 1, 0, 1] == pytest.approx(a * 0.05 * np.sin(0.7) * np.sin(0.9), rel=1e-12)


@pytest.mark.parametrize("model", [Warped(2, delta=0.05), Conformal(2, delta=0.05)], ids=repr)
def test_differenced_riemann_matches_symbolic_oracle(model):
    x = np.array([0.4, -0.3, 0.6])
    R_sym = _sympy_riemann(model, x)
    assert np.abs(model.riemann(x[None])[0] - R_sym).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(t=coords, x=coords, y=coords)
def test_riemann_algebraic_symmetries_hold_pointwise(t, x, y):
    m = Warped(2, delta=0.08)
    R = m.riemann(np.array([[t, x, y]]))
    assert riemann_symmetry_residual(R) < 1e-10


def test_second_bianchi_identity():
    m = Conformal(2, delta=0.1)
    x = np.random.default_rng(2).uniform(-0.5, 0.5, (3, 3))
    assert second_bianchi_residual(m.nabla_riemann(x)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(t=coords, x=coords)
def test_metric_is_symmetric_and_lorentzian(t, x):
    for m in (Warped(1, delta=0.1), Conformal(1, delta=0.1)):
        g = m.metric(np.array([t, x]))
        assert np.allclose(g, g.T)
        assert m.signature_ok(np.array([[t, x]])).all()


def test_degenerate_warp_raises_domain_error():
    m = Warped(1, delta=2.0)
    with pytest.raises(DomainError):
        m.check_domain(np.array([[np.pi / 2, -np.pi / 2]]))


def test_curvature_budget_vanishes_on_minkowski_and_scales_with_delta():
    p = np.array([0.3, 0.2, 0.1])
    assert curvature_budget(Minkowski(2), p).sup_R == 0
    b1 = curvature_budget(Warped(2, delta=0.01), p)
    b2 = curvature_budget(Warped(2, delta=0.02), p)
    assert b1.complete and b2.complete
    assert b2.sup_R / b1.sup_R == pytest.approx(2.0, rel=0.05)
