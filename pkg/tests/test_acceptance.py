"""One test per acceptance criterion, each printing a PASS/FAIL line.

The sweeps use the full sizes from the criteria, so this module dominates the
suite's runtime (a few minutes).
"""

from __future__ import annotations

import numpy as np
import pytest

from lorentz_carleman.carleman import (
    B_lower_bound_check,
    CarlemanParams,
    boundary_layer_decay,
    integrated_carleman,
    phi_suite,
    slab_geometry,
)
from lorentz_carleman.hyperquadric import grad_f_check, q_fd_oracle, section2_bounds_report
from lorentz_carleman.metrics import make_model
from lorentz_carleman.pipeline import (
    ORDER_FLOOR,
    Stage,
    duality_rows,
    frame_algebra,
    points_in_domain,
    pointwise_identity_run,
    vertex_limit,
)
from lorentz_carleman.pseudoconvexity import (
    PcParams,
    fd_fbar_hessian,
    fields_at_points,
    hessian_relation_residual,
    p_map,
    pbar_map,
    pseudoconvexity_check,
    random_tangent,
)
from lorentz_carleman.wave_control import (
    WaveConfig,
    build_problem,
    bump,
    forward_solve,
    gamma_is_open_cover,
    hum_control,
    observability_probe,
    refine_control,
)

from .conftest import model_setup

CURVED = ("warped", "conformal")


def test_criterion_01_gauss_lemma(verdict):
    worst = {}
    for name in ("minkowski",) + CURVED:
        m, p, B = model_setup(name, 2, 0.05)
        pts = points_in_domain(m, p, B, 1.0, 500, seed=1)
        vec, norm = grad_f_check(m, p, B, pts)
        worst[name] = max(vec.max(), norm.max())
    ok = worst["minkowski"] < 1e-9 and all(worst[k] < 1e-5 for k in CURVED)
    verdict(1, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    assert ok


def test_criterion_02_frame_algebra(verdict):
    worst = 0.0
    for name in ("minkowski",) + CURVED:
        fa = frame_algebra(*model_setup(name, 2, 0.05), n_omega0=16, n_dirs=32, n_radii=20)
        worst = max(worst, fa["gram"], fa["split"], fa["t_over_r"])
    verdict(2, worst < 1e-7, f"max residual {worst:.2e} over 16x32x20 per model")
    assert worst < 1e-7


def test_criterion_03_transport_matches_differencing(verdict):
    m, p, B = model_setup("warped", 2, 0.05)
    qf, grad_t, b = q_fd_oracle(m, p, B, points_in_domain(m, p, B, 1.0, 100, seed=2))
    gq = np.abs(qf.full - b.q[:, 0]).max()
    gt = np.abs(grad_t - b.tau[:, 0]).max()
    ok = max(gq, gt) < 1e-5
    verdict(3, ok, f"q gap {gq:.2e}, grad t gap {gt:.2e}")
    assert ok


def test_criterion_04_vertex_limit(verdict):
    gaps = {name: vertex_limit(*model_setup(name, 2, 0.05), r=1e-3)[0] for name in CURVED}
    ok = max(gaps.values()) < 0.05
    verdict(4, ok, " ".join(f"{k}={v:.2%}" for k, v in gaps.items()))
    assert ok


def test_criterion_05_section_envelopes(verdict):
    deltas = (0.01, 0.02, 0.05)
    reports = {}
    for d in deltas:
        m, p, B = model_setup("warped", 2, d)
        reports[d] = {r.check: r for r in section2_bounds_report(m, p, B, n_omega0=16, n_dirs=32, n_radii=10)}
    fitted = max(r.fitted or 0.0 for rows in reports.values() for r in rows.values())
    held = all(r.passed for rows in reports.values() for r in rows.values() if not r.advisory)
    spread = 0.0
    for name, row in reports[deltas[0]].items():
        if name.endswith("_exact"):
            continue
        per_delta = np.array([reports[d][name].measured / d for d in deltas])
        spread = max(spread, per_delta.max() / per_delta.min() - 1)
    ok = held and fitted <= 100 and spread <= 0.2
    verdict(5, ok, f"largest fitted constant {fitted:.3f}, sup/delta spread {spread:.1%}")
    assert ok


def test_criterion_06_tangency_maps_and_hessian(verdict):
    m, p, B = model_setup("warped", 2, 0.05)
    par = PcParams(0.05, 1.0)
    pts = points_in_domain(m, p, B, 1.0, 200, seed=3)
    fl = fields_at_points(m, p, B, par, pts)
    X = random_tangent(fl, 5, seed=4)
    # the differenced Hessian is an independent route to the same relation
    H_fd = np.einsum("pka,pkl,plb->pab", fl.frame, fd_fbar_hessian(m, p, B, par, pts), fl.frame)
    inv = hess = hess_fd = 0.0
    for j in range(5):
        inv = max(inv, np.abs(p_map(fl, pbar_map(fl, X[:, j])) - X[:, j]).max())
        Y = X[:, (j + 1) % 5]
        hess = max(hess, hessian_relation_residual(fl, X[:, j], Y).max())
        hess_fd = max(hess_fd, hessian_relation_residual(fl, X[:, j], Y, ddfbar=H_fd).max())
    ok = max(inv, hess, hess_fd) < 1e-6
    verdict(6, ok, f"1000 samples: inverse {inv:.1e}, Hessian {hess:.1e} (differenced {hess_fd:.1e})")
    assert ok


def test_criterion_07_pseudoconvexity(verdict):
    par = PcParams(0.05, 1.0)
    small, _ = pseudoconvexity_check(par, *model_setup("warped", 2, 0.01), n_omega0=16, n_dirs=32, n_radii=10)
    flips = {d: pseudoconvexity_check(par, *model_setup("warped", 2, d), n_omega0=8, n_dirs=16, n_radii=6)[0]
             for d in (0.2, 0.5)}
    first_flip = min((d for d, v in flips.items() if v < 0), default=None)
    ok = small >= 0 and first_flip is not None
    verdict(7, ok, f"margin {small:.2e} at delta=0.01; sign flips at delta={first_flip} ({flips[0.2]:.3g})")
    assert ok


def _b_margins():
    out = {}
    for name, n, d in (("minkowski", 1, 0.0), ("warped", 1, 0.01), ("minkowski", 2, 0.0), ("warped", 2, 0.01)):
        m, p, B = model_setup(name, n, d)
        sweep = dict(n_omega0=16, n_dirs=2, n_radii=10) if n == 1 else dict(n_omega0=8, n_dirs=16, n_radii=6)
        for a in (n * n, 4 * n * n, 16 * n * n):
            P = CarlemanParams(a=a, n=n)
            out[name, n, a] = (B_lower_bound_check(P, m, p, B, **sweep)[0], P)
    return out


@pytest.fixture(scope="module")
def b_margins():
    return _b_margins()


@pytest.mark.xfail(strict=True, reason="the bound fails near the vertex for a = n^2 = 1 in 1+1 (see the next test)")
def test_criterion_08_B_lower_bound(verdict, b_margins):
    bad = [f"{k[0]} n={k[1]} a={k[2]:g}: {v[0]:.3g}" for k, v in b_margins.items() if v[0] < 0]
    ok = not bad
    verdict(8, ok, "all margins >= 0" if ok else "negative at " + "; ".join(bad))
    assert ok


def test_criterion_08_failures_match_vertex_prediction(b_margins):
    def vertex(P):
        return 0.5 * P.a * (P.a * (P.b - 4 * P.eps) - (P.b - 2 * P.eps))

    failing = {k for k, (m, _) in b_margins.items() if m < 0}
    predicted = {k for k, (_, P) in b_margins.items() if vertex(P) < 0}
    assert failing == predicted == {("minkowski", 1, 1), ("warped", 1, 1)}


def test_criterion_09_pointwise_identity(verdict):
    runs = {}
    for name, d in (("minkowski", 0.0), ("warped", 0.05)):
        m, p, _ = model_setup(name, 1, d)
        runs[name] = pointwise_identity_run(m, p, CarlemanParams(a=4))
    ok = all(order >= ORDER_FLOOR and res[-1] < 1e-4 for res, order in runs.values())
    verdict(9, ok, " ".join(f"{k}: order {o:.3f} final {r[-1]:.1e}" for k, (r, o) in runs.items()))
    assert ok


def test_criterion_10_integrated_estimate(verdict):
    suite = phi_suite((1.0, 2.0))
    worst = np.inf
    nonzero = np.inf
    count = 0
    for name, d in (("minkowski", 0.0), ("warped", 0.01)):
        model = make_model(name, 1, d)
        for grid in ((64, 128), (128, 256)):
            geom = slab_geometry(model, [0.0, 0.0], n_x=grid[0], n_t=grid[1])
            for a in (4.0, 16.0):
                P = CarlemanParams(a=a, r0=2.5)
                for key, phi in suite.items():
                    margin = integrated_carleman(P, geom, phi).margin
                    worst = min(worst, margin)
                    if key != "zero":
                        nonzero = min(nonzero, margin)
                    count += 1
    ok = worst >= 0
    verdict(10, ok, f"smallest RHS-LHS {nonzero:.3g} over {count} cases (zero test function gives 0)")
    assert ok


def test_criterion_11_boundary_layer(verdict):
    layer = boundary_layer_decay(CarlemanParams(a=4, r0=2.5), phi_suite((1.0, 2.0))["poly"], deltas=(1e-2, 1e-3))
    rel = abs(layer.envelope_exponent / layer.expected - 1)
    ok = rel <= 0.1
    verdict(11, ok, f"exponent {layer.envelope_exponent:.3f} vs {layer.expected} ({rel:.1%})")
    assert ok


def test_criterion_12_duality(verdict):
    worst = {}
    for cfg in (WaveConfig(), WaveConfig(model="warped", delta=0.05, nt=None)):
        st = Stage()
        duality_rows(st, build_problem(cfg), seed=5)
        for r in st.rows:
            worst[r.check] = max(worst.get(r.check, -np.inf), r.measured) if r.check != "gramian_rayleigh" else min(
                worst.get(r.check, np.inf), r.measured)
    ok = worst["green_identity"] < 1e-8 and worst["gramian_symmetry"] < 1e-9 and worst["gramian_rayleigh"] >= -1e-10
    verdict(12, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    assert ok


def test_criterion_13_hum_exterior(verdict):
    reference = build_problem(WaveConfig(nx=512, nt=1024))
    errors, against_ref, iters = [], [], []
    for nx in (128, 256):
        prob = build_problem(WaveConfig(nx=nx, nt=2 * nx))
        res = hum_control(prob, bump(prob.x), tol=1e-2, max_iter=200)
        errors.append(res.error)
        iters.append(res.iterations)
        reached = forward_solve(reference, refine_control(reference, prob, res.F)).y[-1]
        target = bump(reference.x)
        against_ref.append(np.linalg.norm(reached - target) / np.linalg.norm(target))
    ok = errors[0] < 1e-2 and iters[0] <= 200 and errors[1] < errors[0] and against_ref[1] < against_ref[0]
    verdict(13, ok, f"errors {errors[0]:.2e} -> {errors[1]:.2e} in {iters} iterations; "
                    f"on the 512x1024 grid {against_ref[0]:.2e} -> {against_ref[1]:.2e}")
    assert ok


def test_criterion_14_hum_interior(verdict):
    prob = build_problem(WaveConfig(centre=1.5, span=(-0.6, 0.6)))
    cover = gamma_is_open_cover(prob)
    res = hum_control(prob, bump(prob.x), tol=2e-2)
    ok = cover and res.error < 2e-2
    verdict(14, ok, f"open cover {cover}, terminal error {res.error:.2e} after {res.iterations} iterations")
    assert ok


def test_criterion_15_observability_degrades(verdict):
    spans = (1.9, 1.5, 1.0)
    q = [observability_probe(build_problem(WaveConfig(span=(-2.0, -2.0 + T)))).sampled for T in spans]
    ok = all(a > b for a, b in zip(q, q[1:]))
    verdict(15, ok, " ".join(f"T={T}: {v:.3g}" for T, v in zip(spans, q)))
    assert ok
