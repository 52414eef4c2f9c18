from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_carleman.carleman import (
    B_lower_bound_check,
    CarlemanParams,
    ContractError,
    OutOfDomainError,
    SymbolicWeight,
    boundary_layer_decay,
    conjugation_at,
    convergence_order,
    integrated_carleman,
    phi_suite,
    slab_geometry,
    weight_function,
)
from lorentz_carleman.metrics import Minkowski, Warped
from lorentz_carleman.pipeline import ORDER_FLOOR, pointwise_identity_run


def vertex_margin(params: CarlemanParams) -> float:
    a, b, eps = params.a, params.b, params.eps
    return 0.5 * a * (a * (b - 4 * eps) - (b - 2 * eps))


@pytest.mark.parametrize(
    "kwargs",
    [dict(a=0.5), dict(a=4, r0=0), dict(a=4, eps0=0.08), dict(a=4, b0=0.3, eps0=0.05), dict(a=3, n=2)],
)
def test_params_reject_out_of_range(kwargs):
    with pytest.raises(ValueError):
        CarlemanParams(**kwargs)


def test_scaled_parameters():
    P = CarlemanParams(a=4, b0=0.2, eps0=0.04, r0=2.0, n=2)
    assert (P.b, P.eps, P.c_n) == (pytest.approx(0.05), pytest.approx(0.01), 0.25)
    assert P.pc.eps == pytest.approx(0.01)


@settings(max_examples=60, deadline=None)
@given(fbar=st.floats(1e-3, 5.0), a=st.sampled_from([1.0, 4.0, 16.0]))
def test_weight_squares_to_zeta(fbar, a):
    F, Fp, Fpp, Fppp, zeta = weight_function(CarlemanParams(a=a), fbar)
    assert np.exp(-2 * F) == pytest.approx(zeta, rel=1e-10)
    h = 1e-5 * fbar
    Fh = [weight_function(CarlemanParams(a=a), fbar + s * h)[0] for s in (-1, 1)]
    assert (Fh[1] - Fh[0]) / (2 * h) == pytest.approx(Fp, rel=1e-6)
    assert Fppp == pytest.approx(-2 * Fpp / fbar)


def test_weight_vanishes_on_the_cone_and_rejects_outside():
    zeta = weight_function(CarlemanParams(a=4), [1e-2, 1e-4, 1e-8])[-1]
    assert np.all(np.diff(zeta) < 0) and zeta[-1] < 1e-60
    with pytest.raises(OutOfDomainError):
        weight_function(CarlemanParams(a=4), [0.1, 0.0])


def test_frame_and_symbolic_routes_agree_on_minkowski():
    P = CarlemanParams(a=4)
    pts = np.array([[0.1, 0.5], [-0.2, 0.7], [0.0, 0.3]])
    cb = conjugation_at(P, Minkowski(1), np.zeros(2), pts)
    sw = SymbolicWeight(P, Minkowski(1), np.zeros(2))
    assert np.abs(cb.B - sw("B", pts)).max() < 1e-9 * np.abs(cb.B).max()
    assert np.abs(cb.A - sw("A", pts)).max() < 1e-9 * np.abs(cb.A).max()


def test_vertex_margin_closed_form_and_failing_set():
    m = Minkowski(1)
    x = 1e-4
    for a in (1, 2, 4, 16):
        P = CarlemanParams(a=a)
        B = SymbolicWeight(P, m, np.zeros(2))("B", np.array([[0.0, x]]))[0]
        got = B - 0.5 * a * a * P.b - a * a * P.eps
        assert got == pytest.approx(vertex_margin(P), abs=1e-5)
    # defaults b0 = 0.25, eps0 = 0.05: the bound fails exactly where the vertex margin is negative
    fails = {a for a in (1, 2, 4, 16) if B_lower_bound_check(CarlemanParams(a=a), m, np.zeros(2), n_omega0=4, n_dirs=2, n_radii=4)[0] < 0}
    assert fails == {a for a in (1, 2, 4, 16) if vertex_margin(CarlemanParams(a=a)) < 0} == {1, 2}


def test_pointwise_identity_is_second_order_on_1p1():
    for model, p in ((Minkowski(1), [0.0, 0.0]), (Warped(1, delta=0.05), [0.3, 0.2])):
        res, order = pointwise_identity_run(model, p, CarlemanParams(a=4))
        assert order >= ORDER_FLOOR and res[-1] < 1e-4


def test_pointwise_identity_order_in_2p1():
    _, order = pointwise_identity_run(Minkowski(2), [0.0, 0.0, 0.0], CarlemanParams(a=16, n=2))
    assert order >= ORDER_FLOOR


def test_convergence_order_fit():
    hs = np.array([1e-1, 1e-2, 1e-3])
    assert convergence_order(hs, 3 * hs**2) == pytest.approx(2.0)


@pytest.fixture(scope="module")
def flat_slab():
    return slab_geometry(Minkowski(1), [0.0, 0.0], n_x=32, n_t=64)


def test_integrated_estimate_on_flat_slab(flat_slab):
    P = CarlemanParams(a=4, r0=2.5)
    for name, phi in phi_suite((1.0, 2.0)).items():
        est = integrated_carleman(P, flat_slab, phi)
        if name == "zero":
            assert est.lhs == est.rhs == 0.0
        else:
            assert est.margin > 0 and est.lhs > 0
        assert est.gamma_plus_fraction == pytest.approx(2 / 3)


def test_integrated_estimate_contracts(flat_slab):
    with pytest.raises(ContractError):
        integrated_carleman(CarlemanParams(a=4, r0=1.0), flat_slab, phi_suite((1.0, 2.0))["poly"])
    with pytest.raises(ContractError):
        integrated_carleman(CarlemanParams(a=4, r0=2.5), flat_slab, lambda t, x: sp.Integer(1) + x)
    with pytest.raises(ContractError):
        slab_geometry(Minkowski(1), [0.0, 1.5])
    with pytest.raises(ContractError):
        slab_geometry(Minkowski(2), [0.0, 0.0, 0.0])


def test_boundary_layer_decays_at_predicted_rate():
    layer = boundary_layer_decay(CarlemanParams(a=4, r0=2.5), phi_suite((1.0, 2.0))["poly"])
    assert layer.expected == 6.5
    assert layer.envelope_exponent == pytest.approx(6.5, abs=0.1)
    assert layer.flux_exponent >= layer.expected - 0.1
