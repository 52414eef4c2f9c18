from __future__ import annotations

import numpy as np
import pytest

from lorentz_carleman.wave_control import (
    ConfigError,
    WaveConfig,
    adjoint_solve,
    build_problem,
    bump,
    cfl_steps,
    energy,
    forward_solve,
    gamma_is_open_cover,
    hum_control,
    observability_probe,
    refine_control,
    terminal_map_transpose,
)
from lorentz_carleman.carleman import ContractError
from lorentz_carleman.metrics import Minkowski, Warped


@pytest.fixture(scope="module")
def flat():
    return build_problem(WaveConfig())


def gaussian(x):
    return np.exp(-(((x - 1.4) / 0.08) ** 2))


def test_zero_data_stays_zero(flat):
    tr = forward_solve(flat)
    assert not tr.y.any()


@pytest.mark.parametrize("nx,tol", [(128, 5e-3), (256, 1.2e-3), (512, 3e-4)])
def test_travelling_wave_matches_dalembert(nx, tol):
    prob = build_problem(WaveConfig(nx=nx, nt=2 * nx, span=(-2, -1.75)))
    x = prob.x
    slope = -2 * (x - 1.4) / 0.08**2 * gaussian(x)
    tr = forward_solve(prob, y0=gaussian(x), y1=-slope)
    assert np.abs(tr.y[-1] - gaussian(x - (prob.t[-1] - prob.t[0]))).max() < tol


def test_travelling_wave_converges_at_second_order():
    errs = []
    for nx in (128, 256, 512):
        prob = build_problem(WaveConfig(nx=nx, nt=2 * nx, span=(-2, -1.75)))
        x = prob.x
        tr = forward_solve(prob, y0=gaussian(x), y1=2 * (x - 1.4) / 0.08**2 * gaussian(x))
        errs.append(np.abs(tr.y[-1] - gaussian(x - 0.25)).max())
    assert np.log2(errs[0] / errs[1]) > 1.9 and np.log2(errs[1] / errs[2]) > 1.9


def test_standing_mode_normal_traces():
    errs = []
    for nx in (128, 256, 512):
        prob = build_problem(WaveConfig(nx=nx, nt=2 * nx, span=(-2, 0)))
        ad = adjoint_solve(prob, np.sin(np.pi * (prob.x - 1)), np.zeros_like(prob.x))
        exact = -np.pi * np.cos(np.pi * (prob.t - prob.t[0]))
        errs.append(np.abs(ad.trace - exact).max())
    assert errs[0] < 1e-3
    assert np.log2(errs[0] / errs[2]) / 2 > 1.9


def test_flat_energy_is_conserved(flat):
    tr = forward_solve(flat, y0=bump(flat.x), y1=np.zeros_like(flat.x))
    E = energy(flat, tr.y)
    assert np.ptp(E) / E[0] < 1e-10


def test_cfl_is_enforced_and_auto_steps_respect_it():
    assert cfl_steps(Minkowski(1), (1, 2), (-2, 2), 128) == 256
    steps = cfl_steps(Warped(1, delta=0.05), (1, 2), (-2, 2), 128)
    assert steps > 256 and steps % 2 == 0
    build_problem(WaveConfig(model="warped", delta=0.05, nt=None))
    with pytest.raises(ConfigError, match="CFL"):
        build_problem(WaveConfig(nt=200))
    with pytest.raises(ConfigError, match="CFL"):
        build_problem(WaveConfig(model="warped", delta=0.05, nt=256))


@pytest.mark.parametrize(
    "cfg", [WaveConfig(r0=2.0), WaveConfig(n=2), WaveConfig(U=(2, 1)), WaveConfig(span=(1, 0)), WaveConfig(centre=1.0)]
)
def test_invalid_configurations(cfg):
    with pytest.raises(ConfigError):
        build_problem(cfg)


def test_observation_region_on_flat_exterior(flat):
    left, right = flat.gamma_plus
    assert not left.any()
    inside = np.abs(flat.t) < 2 - 1e-9
    interior_nodes = np.ones_like(inside)
    interior_nodes[[0, -1]] = False
    assert np.array_equal(right[interior_nodes], inside[interior_nodes])
    assert np.array_equal(flat.gamma, flat.gamma_plus)


def test_interior_centre_gets_an_open_cover():
    prob = build_problem(WaveConfig(centre=1.5, span=(-0.6, 0.6)))
    assert prob.interior and len(prob.centres) == 2
    assert gamma_is_open_cover(prob)
    assert prob.gamma.sum() > prob.gamma_plus.sum()


def test_green_identity_and_gramian(flat):
    rng = np.random.default_rng(0)
    F = rng.standard_normal((2, flat.N + 1))
    F[~flat.gamma] = 0.0
    lev = rng.standard_normal((2, flat.J + 1))
    lev[:, [0, -1]] = 0.0
    w = rng.standard_normal(2 * flat.M)
    lhs = w @ forward_solve(flat, F, levels=lev).terminal
    dF, dl = terminal_map_transpose(flat, w)
    assert lhs == pytest.approx(np.sum(dF * F) + np.sum(dl * lev[:, 1:-1]), rel=1e-9)


def test_control_off_the_region_is_refused(flat):
    F = np.zeros((2, flat.N + 1))
    F[0, 10] = 1.0
    with pytest.raises(ContractError):
        forward_solve(flat, F)


def test_free_evolution_target_needs_no_iterations(flat):
    y0 = bump(flat.x)
    free = forward_solve(flat, y0=y0, y1=np.zeros_like(y0))
    z1 = (free.y[-1] - free.y[-2]) / flat.dt
    res = hum_control(flat, free.y[-1], z1, y0=y0, y1=np.zeros_like(y0))
    assert res.iterations == 0 and res.error < 1e-12


def test_hum_reaches_bump_and_refines(flat):
    res = hum_control(flat, bump(flat.x), tol=1e-2)
    assert res.converged and res.error <= 1e-2
    assert np.all(res.F[~flat.gamma] == 0)
    fine = build_problem(WaveConfig(nx=256, nt=512))
    reached = forward_solve(fine, refine_control(fine, flat, res.F)).y[-1]
    assert np.abs(reached - bump(fine.x)).max() < 0.1


def test_observability_quotients(flat):
    none = np.zeros_like(flat.gamma)
    zero = observability_probe(flat, mask=none)
    assert zero.sampled == zero.filtered_exact == 0.0
    full = np.ones_like(flat.gamma)
    full[:, [0, -1]] = False
    ob = observability_probe(flat, mask=full, n_samples=16, power_iters=100)
    assert ob.sampled >= 1e-3 and ob.filtered_exact >= 1e-3
    assert ob.full_exact <= ob.filtered_exact
