"""Closed-form Lorentzian metrics and their curvature.

Chart points are arrays whose last axis holds ``(t, x^1, ..., x^n)``.  Every
routine accepts a single point or an arbitrary batch of points.

Index conventions: ``christoffel(x)[..., l, a, b]`` is the connection
coefficient with upper index ``l``; ``riemann(x)[..., a, b, c, d]`` has all
indices down and follows the convention in which a round sphere has
``R_{1212} > 0``; ``nabla_riemann(x)[..., m, a, b, c, d]`` carries the
differentiation index first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

FD_STEP = 1e-3


class DomainError(ValueError):
    """Raised when a chart point lies outside the region where the metric is valid."""


class MetricModel:
    """Base class for the catalog.  Subclasses provide ``metric`` and ``metric_derivatives``."""

    name = "abstract"

    def __init__(self, n: int, **params: float) -> None:
        if n not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {n}")
        self.n = n
        self.dim = n + 1
        self.params = {k: float(v) for k, v in params.items()}

    def __repr__(self) -> str:
        kv = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{type(self).__name__}(n={self.n}{', ' if kv else ''}{kv})"

    # -- to be provided by subclasses ---------------------------------------
    def metric(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def metric_derivatives(self, x: np.ndarray) -> np.ndarray:
        """Return ``dg[..., m, a, b] = d_m g_ab``."""
        raise NotImplementedError

    def symbolic(self) -> tuple[tuple[sp.Symbol, ...], sp.Matrix]:
        """Chart symbols and the metric as a sympy matrix."""
        raise NotImplementedError

    chart_radius = 50.0

    def domain_margin(self, x: np.ndarray) -> np.ndarray:
        """Positive inside the chart, crossing zero at its edge."""
        return self.chart_radius - np.linalg.norm(x, axis=-1)

    def check_domain(self, x: np.ndarray) -> None:
        """Raise :class:`DomainError` if any point is outside the chart."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or np.any(self.domain_margin(x) <= 0):
            raise DomainError("chart point outside the model's domain")

    def analytic_riemann(self, x: np.ndarray) -> np.ndarray | None:
        """Closed-form Riemann tensor if the model has one, else ``None``."""
        return None

    # -- derived geometry ---------------------------------------------------
    def _as_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points with last axis {self.dim}, got shape {x.shape}")
        return x

    def inverse_metric(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.metric(x))

    def christoffel(self, x: np.ndarray) -> np.ndarray:
        x = self._as_points(x)
        g_inv = self.inverse_metric(x)
        dg = self.metric_derivatives(x)
        # lowered symbol Gamma_{m a b} = (d_a g_mb + d_b g_ma - d_m g_ab) / 2
        low = 0.5 * (
            np.swapaxes(dg, -3, -2)
            + np.moveaxis(dg, -3, -1)
            - dg
        )
        return np.einsum("...lm,...mab->...lab", g_inv, low)

    def _shifted(self, x: np.ndarray, h: float) -> np.ndarray:
        """Stencil points ``x + k h e_m`` for ``k in (-2, -1, 1, 2)``; shape (..., 4, d, d)."""
        offsets = np.array([-2.0, -1.0, 1.0, 2.0])[:, None, None] * h * np.eye(self.dim)[None]
        return x[..., None, None, :] + offsets

    def _fd_derivative(self, fn, x: np.ndarray, h: float) -> np.ndarray:
        """Fourth-order central difference of ``fn`` along every chart axis (derivative index first)."""
        vals = fn(self._shifted(x, h))
        weights = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
        return np.tensordot(weights, np.moveaxis(vals, x.ndim - 1, 0), axes=(0, 0))

    def christoffel_derivatives(self, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
        """``dG[..., m, l, a, b] = d_m Gamma^l_ab`` by fourth-order central differences."""
        x = self._as_points(x)
        return self._fd_derivative(self.christoffel, x, h)

    def riemann(self, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
        x = self._as_points(x)
        exact = self.analytic_riemann(x)
        if exact is not None:
            return exact
        return self.riemann_fd(x, h)

    def riemann_fd(self, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
        """Riemann tensor from differenced Christoffel symbols, ignoring any closed form."""
        x = self._as_points(x)
        gam = self.christoffel(x)
        dgam = self.christoffel_derivatives(x, h)
        up = (
            np.einsum("...mrns->...rsmn", dgam)
            - np.einsum("...nrms->...rsmn", dgam)
            + np.einsum("...rml,...lns->...rsmn", gam, gam)
            - np.einsum("...rnl,...lms->...rsmn", gam, gam)
        )
        return np.einsum("...ar,...rbcd->...abcd", self.metric(x), up)

    def nabla_riemann(self, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
        x = self._as_points(x)
        riem = self.riemann(x, h)
        d_riem = self._fd_derivative(lambda y: self.riemann(y, h), x, h)
        gam = self.christoffel(x)
        return (
            d_riem
            - np.einsum("...kma,...kbcd->...mabcd", gam, riem)
            - np.einsum("...kmb,...akcd->...mabcd", gam, riem)
            - np.einsum("...kmc,...abkd->...mabcd", gam, riem)
            - np.einsum("...kmd,...abck->...mabcd", gam, riem)
        )

    def signature_ok(self, x: np.ndarray) -> np.ndarray:
        eig = np.linalg.eigvalsh(self.metric(x))
        return (eig[..., 0] < 0) & np.all(eig[..., 1:] > 0, axis=-1)


class Minkowski(MetricModel):
    """Flat spacetime, ``g = diag(-1, 1, ..., 1)``."""

    name = "minkowski"

    def __init__(self, n: int = 3) -> None:
        super().__init__(n)

    def metric(self, x):
        x = self._as_points(x)
        eta = np.diag([-1.0] + [1.0] * self.n)
        return np.broadcast_to(eta, x.shape[:-1] + eta.shape).copy()

    def metric_derivatives(self, x):
        x = self._as_points(x)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def christoffel(self, x):
        x = self._as_points(x)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def analytic_riemann(self, x):
        return np.zeros(x.shape[:-1] + (self.dim,) * 4)

    def nabla_riemann(self, x, h=FD_STEP):
        x = self._as_points(x)
        return np.zeros(x.shape[:-1] + (self.dim,) * 5)

    def symbolic(self):
        coords = sp.symbols(f"t x1:{self.n + 1}", real=True)
        return coords, sp.diag(-1, *([1] * self.n))


class Warped(MetricModel):
    """``g = -dt^2 + a^2 sum_i (dx^i)^2`` with ``a = 1 + delta sin(k t) sin(k x^1)``.

    The warp depends on ``t`` and the first spatial coordinate only, so in
    2+1 and 3+1 the curvature is genuinely anisotropic.
    """

    name = "warped"

    def __init__(self, n: int = 1, delta: float = 0.05, k: float = 1.0) -> None:
        if delta < 0:
            raise ValueError("delta must be non-negative")
        super().__init__(n, delta=delta, k=k)

    def warp(self, x):
        d, k = self.params["delta"], self.params["k"]
        t, x1 = x[..., 0], x[..., 1]
        a = 1.0 + d * np.sin(k * t) * np.sin(k * x1)
        a_t = d * k * np.cos(k * t) * np.sin(k * x1)
        a_x = d * k * np.sin(k * t) * np.cos(k * x1)
        return a, a_t, a_x

    def domain_margin(self, x):
        a, _, _ = self.warp(np.asarray(x, dtype=float))
        return np.minimum(a - 1e-8, super().domain_margin(x))

    def check_domain(self, x):
        x = self._as_points(x)
        a, _, _ = self.warp(x)
        if np.any(a <= 1e-8):
            raise DomainError("warp factor vanishes: metric degenerate at some chart point")
        super().check_domain(x)

    def metric(self, x):
        x = self._as_points(x)
        a, _, _ = self.warp(x)
        g = np.zeros(x.shape[:-1] + (self.dim, self.dim))
        g[..., 0, 0] = -1.0
        for i in range(1, self.dim):
            g[..., i, i] = a * a
        return g

    def metric_derivatives(self, x):
        x = self._as_points(x)
        a, a_t, a_x = self.warp(x)
        dg = np.zeros(x.shape[:-1] + (self.dim,) * 3)
        for i in range(1, self.dim):
            dg[..., 0, i, i] = 2 * a * a_t
            dg[..., 1, i, i] = 2 * a * a_x
        return dg

    def analytic_riemann(self, x):
        if self.n != 1:
            return None
        d, k = self.params["delta"], self.params["k"]
        a, _, _ = self.warp(x)
        a_tt = -d * k * k * np.sin(k * x[..., 0]) * np.sin(k * x[..., 1])
        val = -a * a_tt  # R_txtx
        R = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        R[..., 0, 1, 0, 1] = val
        R[..., 1, 0, 1, 0] = val
        R[..., 0, 1, 1, 0] = -val
        R[..., 1, 0, 0, 1] = -val
        return R

    def symbolic(self):
        coords = sp.symbols(f"t x1:{self.n + 1}", real=True)
        d, k = sp.nsimplify(self.params["delta"]), sp.nsimplify(self.params["k"])
        a = 1 + d * sp.sin(k * coords[0]) * sp.sin(k * coords[1])
        return coords, sp.diag(-1, *([a**2] * self.n))


class Conformal(MetricModel):
    """``g = (1 + delta exp(-|x|^2 - t^2)) * Minkowski``: a localised conformal bump."""

    name = "conformal"

    def __init__(self, n: int = 1, delta: float = 0.05) -> None:
        if delta < 0:
            raise ValueError("delta must be non-negative")
        super().__init__(n, delta=delta)

    def factor(self, x):
        bump = np.exp(-np.sum(x * x, axis=-1))
        return 1.0 + self.params["delta"] * bump, bump

    def metric(self, x):
        x = self._as_points(x)
        om, _ = self.factor(x)
        eta = np.diag([-1.0] + [1.0] * self.n)
        return om[..., None, None] * eta

    def metric_derivatives(self, x):
        x = self._as_points(x)
        _, bump = self.factor(x)
        d_om = -2.0 * self.params["delta"] * bump[..., None] * x  # (..., m)
        eta = np.diag([-1.0] + [1.0] * self.n)
        return d_om[..., :, None, None] * eta

    def symbolic(self):
        coords = sp.symbols(f"t x1:{self.n + 1}", real=True)
        d = sp.nsimplify(self.params["delta"])
        om = 1 + d * sp.exp(-sum(c**2 for c in coords))
        return coords, sp.diag(-om, *([om] * self.n))


CATALOG = {"minkowski": Minkowski, "warped": Warped, "conformal": Conformal}


def make_model(name: str, n: int, delta: float = 0.0, k: float = 1.0) -> MetricModel:
    """Build a catalog model from its name and knobs (unused knobs are ignored)."""
    if name == "minkowski":
        return Minkowski(n)
    if name == "warped":
        return Warped(n, delta=delta, k=k)
    if name == "conformal":
        return Conformal(n, delta=delta)
    raise ValueError(f"unknown model {name!r}; choose from {sorted(CATALOG)}")


def metric_at(model: MetricModel, x) -> np.ndarray:
    x = model._as_points(x)
    model.check_domain(x)
    return model.metric(x)


def christoffel_at(model: MetricModel, x) -> np.ndarray:
    x = model._as_points(x)
    model.check_domain(x)
    g = model.metric(x)
    cond = np.linalg.cond(g)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise np.linalg.LinAlgError(f"metric nearly singular (condition number {np.max(cond):.3g})")
    return model.christoffel(x)


def riemann_at(model: MetricModel, x) -> np.ndarray:
    x = model._as_points(x)
    model.check_domain(x)
    return model.riemann(x)


def nabla_riemann_at(model: MetricModel, x) -> np.ndarray:
    x = model._as_points(x)
    model.check_domain(x)
    return model.nabla_riemann(x)


def riemann_symmetry_residual(R: np.ndarray) -> float:
    """Largest violation of the algebraic Riemann symmetries and the first Bianchi identity."""
    res = [
        R + np.swapaxes(R, -4, -3),
        R + np.swapaxes(R, -2, -1),
        R - np.moveaxis(R, (-4, -3), (-2, -1)),
        R + np.einsum("...abcd->...acdb", R) + np.einsum("...abcd->...adbc", R),
    ]
    return float(max(np.max(np.abs(r)) for r in res))


def second_bianchi_residual(dR: np.ndarray) -> float:
    """max |nabla_e R_abcd + nabla_c R_abde + nabla_d R_abec|."""
    cyc = (
        dR
        + np.einsum("...cabde->...eabcd", dR)
        + np.einsum("...dabec->...eabcd", dR)
    )
    return float(np.max(np.abs(cyc)))


@dataclass
class CurvatureBudget:
    """Frame-contracted curvature sizes over a sampled region around a centre."""

    C0_est: float
    C1_est: float
    sup_R: float
    sup_dR: float
    r0: float
    eps0: float
    c_dagger: float
    n_samples: int
    region: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def passed(self) -> bool:
        return (
            self.complete
            and self.sup_R < self.eps0 * self.c_dagger / self.r0**2
            and self.sup_dR < self.c_dagger / self.r0**3
        )


def curvature_budget(
    model: MetricModel,
    p,
    r0: float = 1.0,
    eps0: float = 0.05,
    c_dagger: float = 1.0 / 16.0,
    n_omega0: int = 8,
    n_dirs: int = 8,
    n_radii: int = 6,
    omega0_max: float = 0.9,
) -> CurvatureBudget:
    """Sup of ``|R(E_rho, X, Y, Z)|`` and ``|nabla_Z R(E_rho, X, E_rho, Y)|`` over frame points.

    ``X, Y, Z`` range over ``{E_rho, E_0, E_A}``; samples lie on radial
    geodesics with ``|omega^0| <= omega0_max`` and ``0 < r < r0``.
    """
    from .geodesics import initial_frame, omega_grid, orthonormal_basis
    from .transport import radial_frames

    p = np.asarray(p, dtype=float)
    basis = orthonormal_basis(model, p)
    omegas = omega_grid(model.n, n_omega0, n_dirs, omega0_max)
    radii = np.linspace(r0 / n_radii, r0 * (1 - 1e-3), n_radii)
    if len(omegas) == 0 or n_radii < 1:
        raise ValueError("curvature budget: sampling produced no points")
    complete = True
    try:
        fr = radial_frames(model, p, basis, omegas, radii)
        x = fr.x.reshape(-1, model.dim)
        vecs = fr.zero_frame().reshape(-1, model.dim, model.dim)  # E_rho, E_0, E_A as rows
    except (RuntimeError, DomainError):
        # geodesics break down inside the region; fall back to the centre frames
        complete = False
        F0 = initial_frame(basis, omegas)
        x = np.broadcast_to(p, (len(omegas), model.dim)).copy()
        vecs = np.swapaxes(np.concatenate([F0[..., :1], F0[..., -1:], F0[..., 2:-1]], axis=-1), -1, -2)
    R = model.riemann(x)
    dR = model.nabla_riemann(x)
    e_rho = vecs[:, 0]
    Rc = np.einsum("pabcd,pa,pxb,pyc,pzd->pxyz", R, e_rho, vecs, vecs, vecs)
    dRc = np.einsum("pmabcd,pzm,pa,pxb,pc,pyd->pxyz", dR, vecs, e_rho, vecs, e_rho, vecs)
    sup_R = float(np.max(np.abs(Rc)))
    sup_dR = float(np.max(np.abs(dRc)))
    n = model.n
    return CurvatureBudget(
        C0_est=sup_R * n * r0**2,
        C1_est=sup_dR * n * r0**3,
        sup_R=sup_R,
        sup_dR=sup_dR,
        r0=r0,
        eps0=eps0,
        c_dagger=c_dagger,
        n_samples=int(x.shape[0]),
        region={"omega0_max": omega0_max, "r_max": float(radii[-1])},
        complete=complete,
    )
