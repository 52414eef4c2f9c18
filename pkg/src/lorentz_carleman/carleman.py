"""Carleman weight, conjugated-operator coefficients, and the two sides of the estimate.

Two routes are kept apart on purpose.  :func:`conjugation_bundle` assembles
every coefficient algebraically from transported frame data (no
differencing), while :class:`SymbolicWeight` builds the same objects in
chart coordinates with sympy, from their definitions, for the pointwise
identity and as an independent check of ``B``.  The quadrature side works in
1+1 only, where ``U`` is a slab between two timelike lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .geodesics import log_map, orthonormal_basis
from .hyperquadric import GRAD_STEP, chart_derivatives, t_of_nu
from .metrics import MetricModel
from .pseudoconvexity import PcFields, PcParams, fields_at_points, sample_fields


class OutOfDomainError(ValueError):
    """A sample sits outside ``D`` (``fbar <= 0``) where the weight is undefined."""


class ContractError(ValueError):
    """Inputs violate the stated preconditions of the estimate."""


@dataclass(frozen=True)
class CarlemanParams:
    """Weight parameters; ``b`` and ``eps`` are the scaled versions of ``b0`` and ``eps0``."""

    a: float
    b0: float = 0.25
    eps0: float = 0.05
    r0: float = 1.0
    n: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("spatial dimension must be at least 1")
        if self.a < self.n**2:
            raise ValueError(f"a = {self.a} is below n^2 = {self.n ** 2}")
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if not (0.0 <= self.eps0 <= self.b0 / 4 <= 1 / 16):
            raise ValueError(f"need 0 <= eps0 <= b0/4 <= 1/16, got eps0={self.eps0}, b0={self.b0}")

    @property
    def b(self) -> float:
        return self.b0 / self.r0**2

    @property
    def eps(self) -> float:
        return self.eps0 / self.r0**2

    @property
    def pc(self) -> PcParams:
        return PcParams(eps0=self.eps0, r0=self.r0)

    @property
    def c_n(self) -> float:
        return (self.n - 1) / 4


def weight_function(params: CarlemanParams, fbar):
    """``(F, F', F'', F''', zeta)`` as functions of ``fbar``."""
    fbar = np.asarray(fbar, dtype=float)
    if np.any(fbar <= 0):
        raise OutOfDomainError("fbar must be positive")
    a, b = params.a, params.b
    F = -a * (np.log(fbar) + b * fbar)
    Fp = -a / fbar - a * b
    Fpp = a / fbar**2
    Fppp = -2 * a / fbar**3
    zeta = (fbar * np.exp(b * fbar)) ** (2 * a)
    return F, Fp, Fpp, Fppp, zeta


@dataclass
class ConjugationBundle:
    """Coefficients of the conjugated wave operator at a batch of points.

    Vectors are frame components in the ``(E_rho, E_theta, E_A...)`` frame of
    the underlying :class:`PcFields`.  ``Ehat_rho`` is stored as the pair
    ``(vector, zeroth-order coefficient)`` since it acts as
    ``Ebar_rho psi + c f^{-1} (Ebar_rho f) psi``.
    """

    params: CarlemanParams
    fields: PcFields
    F: np.ndarray
    Fp: np.ndarray
    Fpp: np.ndarray
    Fppp: np.ndarray
    zeta: np.ndarray
    S: np.ndarray
    box_fbar: np.ndarray
    w: np.ndarray
    grad_sq: np.ndarray
    hess_SS: np.ndarray
    dhbar: np.ndarray
    A: np.ndarray
    B: np.ndarray
    c_n: float
    Ehat_rho: tuple[np.ndarray, np.ndarray] = field(repr=False)

    def S_w(self, dpsi: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """``S psi + w psi`` from frame components of ``d psi``."""
        return np.einsum("pa,pa->p", self.S, dpsi) + self.w * psi


def conjugation_bundle(params: CarlemanParams, fields: PcFields) -> ConjugationBundle:
    """Assemble the weight and the ``A``/``B`` coefficients from algebraic frame data."""
    fb = fields.fbar
    if np.any(fb <= 0):
        raise OutOfDomainError("conjugation data requested outside D")
    F, Fp, Fpp, Fppp, zeta = weight_function(params, fb)
    S = fields.raise_(fields.dfbar)
    grad_sq = np.einsum("pa,pa->p", fields.dfbar, S)
    hess_SS = np.einsum("pa,pab,pb->p", S, fields.ddfbar, S)
    box = np.einsum("pab,pab->p", fields.Ginv, fields.ddfbar)
    hb = fields.hbar
    w = 0.5 * box - hb
    eps = params.eps
    # grad r^2 = 2 t grad t + 4 grad f, since r^2 = t^2 + 4 f
    dr2 = 2 * fields.t[:, None] * fields.tau + 4 * fields.df
    dhbar = -0.5 * fields.deta / fields.eta[:, None] ** 2 - 0.25 * eps * dr2
    S_dh = np.einsum("pa,pa->p", S, dhbar)
    A = (Fp**2 + Fpp) * grad_sq + 2 * hb * Fp
    B = (
        (Fp**2 + Fpp) * hess_SS
        + 0.5 * (2 * Fp * Fpp + Fppp) * grad_sq**2
        + hb * Fpp * grad_sq
        + Fp * S_dh
        + hb * A
    )
    Ebar_rho = (2.0 / fields.r)[:, None] * S
    ehat_coef = params.c_n * np.einsum("pa,pa->p", fields.dfbar, Ebar_rho) / fb
    return ConjugationBundle(
        params=params, fields=fields, F=F, Fp=Fp, Fpp=Fpp, Fppp=Fppp, zeta=zeta, S=S,
        box_fbar=box, w=w, grad_sq=grad_sq, hess_SS=hess_SS, dhbar=dhbar, A=A, B=B,
        c_n=params.c_n, Ehat_rho=(Ebar_rho, ehat_coef),
    )


def conjugation_at(params: CarlemanParams, model: MetricModel, p, points, basis=None) -> ConjugationBundle:
    """Convenience wrapper: transport to chart ``points`` and assemble the bundle."""
    if basis is None:
        basis = orthonormal_basis(model, p)
    return conjugation_bundle(params, fields_at_points(model, p, basis, params.pc, points))


def B_floor(params: CarlemanParams, fields: PcFields) -> np.ndarray:
    """The predicted lower bound ``a^2 b / 2 + a^2 eps r^2 / (4 fbar)``."""
    a = params.a
    return 0.5 * a * a * params.b + 0.25 * a * a * params.eps * fields.r**2 / fields.fbar


def B_lower_bound_check(params: CarlemanParams, model: MetricModel, p, basis=None, fields: PcFields | None = None, **sampling):
    """Minimum of ``B`` minus its predicted floor over a radial sweep of ``D``.

    Returns ``(min_margin, margins)``.  The sweep is the same as for the
    pseudoconvexity check; pass ``fields`` to reuse one.
    """
    if fields is None:
        if basis is None:
            basis = orthonormal_basis(model, p)
        fields = sample_fields(model, p, basis, params.pc, **sampling)
    cb = conjugation_bundle(params, fields)
    margins = cb.B - B_floor(params, fields)
    return float(margins.min()), margins


# -- chart-coordinate symbolic route -------------------------------------------

class SymbolicWeight:
    """Weight data in chart coordinates, built from definitions with sympy.

    ``fbar`` here is the chart quadric ``(|x - p|^2 - (t - p_t)^2) / (4 eta)``.
    On Minkowski space with the centre's standard basis this is the true
    shifted hyperquadric; on other metrics it is a smooth surrogate, which is
    all the pointwise identity needs (it holds for any smooth positive
    weight argument).
    """

    def __init__(self, params: CarlemanParams, model: MetricModel, p) -> None:
        self.params, self.model = params, model
        self.p = np.asarray(p, dtype=float)
        coords, g = model.symbolic()
        self.coords = coords
        d = len(coords)
        self.d = d
        a, b, eps = sp.nsimplify(params.a), sp.nsimplify(params.b), sp.nsimplify(params.eps)
        pc = [sp.nsimplify(float(c)) for c in self.p]
        tt = coords[0] - pc[0]
        r2 = sum((coords[i] - pc[i]) ** 2 for i in range(1, d))
        f = (r2 - tt**2) / 4
        eta = 1 - eps * tt**2
        fbar = f / eta
        hbar = 1 / (2 * eta) - eps * r2 / 4
        F = -a * (sp.log(fbar) + b * fbar)
        Fp = -a / fbar - a * b
        Fpp = a / fbar**2

        ginv = g.inv()
        sqrtg = sp.sqrt(-g.det())
        gam = [[[sum(ginv[k, l] * (sp.diff(g[l, j], coords[i]) + sp.diff(g[l, i], coords[j]) - sp.diff(g[i, j], coords[l]))
                     for l in range(d)) / 2 for j in range(d)] for i in range(d)] for k in range(d)]

        def grad(e):
            return [sp.diff(e, c) for c in coords]

        def dot(u, v):
            return sum(ginv[i, j] * u[i] * v[j] for i in range(d) for j in range(d))

        def box(e):
            de = grad(e)
            return sum(sp.diff(sqrtg * sum(ginv[i, j] * de[j] for j in range(d)), coords[i]) for i in range(d)) / sqrtg

        dfb = grad(fbar)
        hess = [[sp.diff(fbar, coords[i], coords[j]) - sum(gam[k][i][j] * dfb[k] for k in range(d)) for j in range(d)] for i in range(d)]
        w = box(fbar) / 2 - hbar
        grad_sq = dot(dfb, dfb)
        A = (Fp**2 + Fpp) * grad_sq + 2 * hbar * Fp
        half_dA = dot(dfb, grad(A)) / 2
        exprs = {
            "f": [f], "fbar": [fbar], "hbar": [hbar], "eF": [sp.exp(F)], "Fp": [Fp],
            "dfbar": dfb, "w": [w], "dw": grad(w), "A": [A], "half_dA": [half_dA],
            "B": [half_dA + hbar * A], "box_w": [box(w)],
            "pi": [hess[i][j] - hbar * g[i, j] for i in range(d) for j in range(d)],
            "ginv": [ginv[i, j] for i in range(d) for j in range(d)],
            "sqrtg": [sqrtg],
            "gamma": [gam[k][i][j] for k in range(d) for i in range(d) for j in range(d)],
        }
        self._shapes = {"dfbar": (d,), "dw": (d,), "pi": (d, d), "ginv": (d, d), "gamma": (d, d, d)}
        self._fns = {k: sp.lambdify(coords, v, modules="numpy", cse=True) for k, v in exprs.items()}

    def __call__(self, name: str, y: np.ndarray) -> np.ndarray:
        """Evaluate ``name`` at points ``y`` of shape ``(..., d)``; dtype follows ``y``."""
        y = np.asarray(y)
        vals = self._fns[name](*np.moveaxis(y, -1, 0))
        out = np.stack([np.broadcast_to(np.asarray(v, dtype=y.dtype), y.shape[:-1]) for v in vals], axis=-1)
        shape = self._shapes.get(name)
        return out[..., 0] if shape is None else out.reshape(y.shape[:-1] + shape)


@dataclass
class IdentityResidual:
    lhs: float
    rhs: float
    h: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def pointwise_identity_residual(weight: SymbolicWeight, psi, x, h: float, dtype=np.longdouble) -> IdentityResidual:
    """Both sides of the pointwise conjugation identity with ``psi`` differenced at step ``h``.

    The weight data come exact from ``weight``; only ``psi``, ``e^F psi`` and
    the current ``P`` are differenced, all with second-order central
    stencils, so the gap between the sides is ``O(h^2)``.  Extended precision
    keeps cancellation in the nested stencils below the truncation error.
    """
    x = np.asarray(x, dtype=dtype)
    d = weight.d
    hh = dtype(h)
    E = np.eye(d, dtype=dtype) * hh
    if weight("fbar", x) <= 0:
        raise OutOfDomainError("identity point is outside D")

    def dpsi(y):
        return np.stack([(psi(y + E[i]) - psi(y - E[i])) / (2 * hh) for i in range(d)], axis=-1)

    def s_w(y, dps):
        S = np.einsum("...ab,...b->...a", weight("ginv", y), weight("dfbar", y))
        return np.einsum("...a,...a->...", S, dps) + weight("w", y) * psi(y)

    def current(y):
        dps = dpsi(y)
        ginv = weight("ginv", y)
        norm = np.einsum("...a,...ab,...b->...", dps, ginv, dps)
        dfb = weight("dfbar", y)
        ps = psi(y)
        P = s_w(y, dps)[..., None] * dps - 0.5 * dfb * norm[..., None] + 0.5 * (weight("A", y)[..., None] * dfb - weight("dw", y)) * ps[..., None] ** 2
        return weight("sqrtg", y)[..., None] * np.einsum("...ab,...b->...a", ginv, P)

    div = sum((current(x + E[i])[i] - current(x - E[i])[i]) / (2 * hh) for i in range(d)) / weight("sqrtg", x)

    def u(y):
        return weight("eF", y) * psi(y)

    u0 = u(x)
    du = np.array([(u(x + E[i]) - u(x - E[i])) / (2 * hh) for i in range(d)])
    ddu = np.empty((d, d), dtype=dtype)
    for i in range(d):
        ddu[i, i] = (u(x + E[i]) - 2 * u0 + u(x - E[i])) / hh**2
        for j in range(i + 1, d):
            ddu[i, j] = ddu[j, i] = (u(x + E[i] + E[j]) - u(x + E[i] - E[j]) - u(x - E[i] + E[j]) + u(x - E[i] - E[j])) / (4 * hh * hh)
    box_u = np.einsum("ab,ab->", weight("ginv", x), ddu - np.einsum("kab,k->ab", weight("gamma", x), du))
    L_psi = box_u / weight("eF", x)

    dps = dpsi(x)
    Sw = s_w(x, dps)
    up = weight("ginv", x) @ dps
    ps = psi(x)
    lhs = -L_psi * Sw + div
    rhs = (
        up @ weight("pi", x) @ up
        - 2 * weight("Fp", x) * Sw**2
        + (weight("half_dA", x) + weight("A", x) * weight("hbar", x) - 0.5 * weight("box_w", x)) * ps**2
    )
    return IdentityResidual(float(lhs), float(rhs), float(h))


def convergence_order(hs, residuals) -> float:
    """Least-squares slope of ``log residual`` against ``log h``."""
    lh, lr = np.log(np.asarray(hs, dtype=float)), np.log(np.asarray(residuals, dtype=float))
    return float(np.polyfit(lh, lr, 1)[0])


# -- 1+1 quadrature ------------------------------------------------------------

def phi_suite(U: tuple[float, float]) -> dict:
    """Sympy builders ``(t, x) -> expr`` for the fixed test-function suite on the slab ``U``.

    Every member carries the cutoff ``(x - x_lo)(x_hi - x)`` so it vanishes on
    both timelike sides of ``U``.
    """
    lo, hi = (sp.nsimplify(u) for u in U)
    mid, L = (lo + hi) / 2, hi - lo

    def cut(x):
        return (x - lo) * (hi - x)

    suite = {
        "zero": lambda t, x: sp.Integer(0),
        "poly": lambda t, x: cut(x) * (1 + (x - mid) / L + t**2 / 4),
        "gauss": lambda t, x: cut(x) * sp.exp(-((x - mid) ** 2 + t**2 / 4) / (2 * (L / 4) ** 2)),
    }
    for k in (3, 8, 16):
        suite[f"osc{k}"] = (lambda k: lambda t, x: cut(x) * sp.sin(k * sp.pi * (x - lo) / L + t) * sp.exp(-t**2 / 2))(k)
    return suite


def _compile_test(model: MetricModel, builder):
    coords, g = model.symbolic()
    if len(coords) != 2:
        raise ContractError("quadrature is implemented for 1+1 models only")
    phi = builder(*coords)
    ginv, sqrtg = g.inv(), sp.sqrt(-g.det())
    dphi = [sp.diff(phi, c) for c in coords]
    box = sum(sp.diff(sqrtg * sum(ginv[i, j] * dphi[j] for j in range(2)), coords[i]) for i in range(2)) / sqrtg
    fn = sp.lambdify(coords, [phi, dphi[0], dphi[1], box], modules="numpy", cse=True)

    def ev(pts):
        vals = fn(pts[:, 0], pts[:, 1])
        return [np.broadcast_to(np.asarray(v, dtype=float), pts.shape[:1]).copy() for v in vals]

    return ev


@dataclass
class SlabGeometry:
    """Log-map data on a midpoint grid of ``U x (-T, T)`` and on the two sides of ``U``."""

    model: MetricModel
    p: np.ndarray
    U: tuple[float, float]
    pts: np.ndarray
    dvol: np.ndarray
    t: np.ndarray
    r: np.ndarray
    E_rho: np.ndarray
    E_theta: np.ndarray
    sqrtg: np.ndarray
    side_pts: np.ndarray
    side_sign: np.ndarray
    side_ds: np.ndarray
    side_t: np.ndarray
    side_f: np.ndarray
    side_df: np.ndarray
    side_dt: np.ndarray
    side_normal: np.ndarray
    shape: tuple[int, int]

    @property
    def f(self) -> np.ndarray:
        return 0.25 * (self.r**2 - self.t**2)

    @property
    def kappa(self) -> np.ndarray:
        return 1.0 - (self.t / self.r) ** 2


def _normal_polar(model: MetricModel, p, basis, pts):
    v, v_end = log_map(model, p, pts, return_velocity=True)
    nu = np.linalg.solve(basis, v.T).T
    t = nu[:, 0]
    r = np.abs(nu[:, 1])
    return t, r, v_end


def _timelike_partner(model: MetricModel, pts, E):
    """The future vector orthogonal to ``E`` with squared length ``-g(E, E)``."""
    g = model.metric(pts)
    gE = np.einsum("pab,pb->pa", g, E)
    N = np.stack([np.ones(len(pts)), -gE[:, 0] / gE[:, 1]], axis=1)
    nn = np.einsum("pa,pab,pb->p", N, g, N)
    kap = np.einsum("pa,pa->p", E, gE)
    return N * np.sqrt(kap / -nn)[:, None]


def slab_geometry(model: MetricModel, p, U=(1.0, 2.0), n_x: int = 128, n_t: int = 256, n_side: int | None = None) -> SlabGeometry:
    """Quadrature geometry on ``U`` for a 1+1 model and centre ``p`` left of ``U``.

    Cells are midpoints of a uniform ``n_x x n_t`` grid; only cells with
    ``f > 0`` are kept.  The weight vanishes to order ``2a`` on the null
    cone, so plain masking loses nothing measurable at the cone.
    """
    if model.n != 1:
        raise ContractError("slab quadrature is implemented for 1+1 models only")
    p = np.asarray(p, dtype=float)
    lo, hi = U
    if not lo < hi:
        raise ContractError("empty slab")
    if lo <= p[1]:
        raise ContractError("the centre must lie to the left of U")
    basis = orthonormal_basis(model, p)
    T = 1.15 * (hi - p[1])
    xs = lo + (np.arange(n_x) + 0.5) * (hi - lo) / n_x
    ts = p[0] - T + (np.arange(n_t) + 0.5) * 2 * T / n_t
    X, Tm = np.meshgrid(xs, ts, indexing="ij")
    pts = np.stack([Tm.ravel(), X.ravel()], axis=1)
    # cheap flat-space prefilter well outside the curved cone, then the exact test
    pts = pts[np.abs(pts[:, 0] - p[0]) < 1.05 * (pts[:, 1] - p[1]) + 0.05]
    t, r, v_end = _normal_polar(model, p, basis, pts)
    keep = r * r - t * t > 0
    pts, t, r, v_end = pts[keep], t[keep], r[keep], v_end[keep]
    if len(pts) == 0:
        raise ContractError("U does not meet D")
    E_rho = v_end / r[:, None]
    E_theta = _timelike_partner(model, pts, E_rho)
    sqrtg = np.sqrt(-np.linalg.det(model.metric(pts)))
    dvol = sqrtg * (hi - lo) / n_x * 2 * T / n_t

    n_side = n_side or 2 * n_t
    ts_side = p[0] - T + (np.arange(n_side) + 0.5) * 2 * T / n_side
    side = []
    for xv, sign in ((lo, -1.0), (hi, 1.0)):
        sp_ = np.stack([ts_side, np.full(n_side, xv)], axis=1)
        sp_ = sp_[np.abs(sp_[:, 0] - p[0]) < 1.05 * (xv - p[1]) + 0.05]
        st, sr, sv = _normal_polar(model, p, basis, sp_)
        k = sr * sr - st * st > 0
        side.append((sp_[k], np.full(k.sum(), sign), st[k], sr[k], sv[k]))
    side_pts = np.concatenate([s[0] for s in side])
    side_sign = np.concatenate([s[1] for s in side])
    side_t = np.concatenate([s[2] for s in side])
    side_r = np.concatenate([s[3] for s in side])
    side_v = np.concatenate([s[4] for s in side])
    g_side = model.metric(side_pts)
    side_df = 0.5 * np.einsum("pab,pb->pa", g_side, side_v)
    side_dt = chart_derivatives(model, p, basis, side_pts, GRAD_STEP, funcs={"t": t_of_nu})["dt"]
    ginv = np.linalg.inv(g_side)
    # outward unit normal: raise +-dx and normalise
    cov = np.zeros_like(side_pts)
    cov[:, 1] = side_sign
    N = np.einsum("pab,pb->pa", ginv, cov)
    N /= np.sqrt(np.einsum("pa,pa->p", N, cov))[:, None]
    side_ds = np.sqrt(np.abs(g_side[:, 0, 0])) * 2 * T / n_side
    return SlabGeometry(
        model=model, p=p, U=(lo, hi), pts=pts, dvol=dvol, t=t, r=r, E_rho=E_rho, E_theta=E_theta, sqrtg=sqrtg,
        side_pts=side_pts, side_sign=side_sign, side_ds=side_ds, side_t=side_t,
        side_f=0.25 * (side_r**2 - side_t**2), side_df=side_df, side_dt=side_dt, side_normal=N, shape=(n_x, n_t),
    )


@dataclass
class IntegratedEstimate:
    lhs_grad: float
    lhs_zero: float
    rhs_bulk: float
    rhs_boundary: float
    variant_grad: float
    gamma_plus_fraction: float

    @property
    def lhs(self) -> float:
        return self.lhs_grad + self.lhs_zero

    @property
    def rhs(self) -> float:
        return self.rhs_bulk + self.rhs_boundary

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def variant_constant(self) -> float:
        """Largest ``C'`` for which the ``E_0`` form of the estimate holds on this sample."""
        if self.variant_grad == 0:
            return math.inf
        return (self.rhs - self.lhs_zero) / self.variant_grad


def boundary_term(params: CarlemanParams, geom: SlabGeometry, phi_vals) -> tuple[np.ndarray, np.ndarray]:
    """Integrand samples ``zeta N(fbar) |N phi|^2`` on the sides of ``U`` and the sign of ``N(fbar)``.

    ``phi_vals`` are ``(phi, d_t phi, d_x phi)`` at ``geom.side_pts``.
    """
    _, dphi_t, dphi_x = phi_vals[:3]
    N = geom.side_normal
    if not np.all(np.isfinite(N)):
        raise ContractError("degenerate boundary normal")
    eps = params.eps
    t = geom.side_t
    eta = 1 - eps * t * t
    f = geom.side_f
    deta = -2 * eps * t[:, None] * geom.side_dt
    dfbar = geom.side_df / eta[:, None] - (f / eta**2)[:, None] * deta
    N_fbar = np.einsum("pa,pa->p", N, dfbar)
    N_phi = N[:, 0] * dphi_t + N[:, 1] * dphi_x
    *_, zeta = weight_function(params, f / eta)
    return zeta * N_fbar * N_phi**2, np.sign(N_fbar)


def integrated_carleman(params: CarlemanParams, geom: SlabGeometry, phi, trace_tol: float = 1e-10) -> IntegratedEstimate:
    """Both sides of the integrated estimate for one test function on a prepared slab.

    ``phi`` is a sympy builder ``(t, x) -> expr``.  Boundary integrals carry
    the factor one half from the estimate.
    """
    if params.n != 1:
        raise ContractError("quadrature is implemented for n = 1")
    ev = _compile_test(geom.model, phi)
    side_vals = ev(geom.side_pts)
    scale = max(1.0, float(np.max(np.abs(ev(geom.pts)[0]), initial=0.0)))
    if np.max(np.abs(side_vals[0]), initial=0.0) > trace_tol * scale:
        raise ContractError("test function does not vanish on the sides of U")
    r_max = max(geom.r.max(), np.sqrt(4 * geom.side_f + geom.side_t**2).max())
    if r_max >= params.r0:
        raise ContractError(f"U meets r >= r0 (max r = {r_max:.3f}, r0 = {params.r0})")
    val, d_t, d_x, box = ev(geom.pts)
    eps = params.eps
    eta = 1 - eps * geom.t**2
    f = geom.f
    *_, zeta = weight_function(params, f / eta)
    Er = geom.E_rho[:, 0] * d_t + geom.E_rho[:, 1] * d_x
    Eth = geom.E_theta[:, 0] * d_t + geom.E_theta[:, 1] * d_x
    kap = geom.kappa
    omega0 = geom.t / geom.r
    E0 = (Eth - omega0 * Er) / kap
    rho2 = kap * geom.r**2
    dv = geom.dvol
    lhs_grad = eps / 64 * np.sum(zeta * geom.r**2 * (Er**2 + Eth**2) / kap * dv)
    lhs_zero = params.a**2 * params.b / 8 * np.sum(zeta * val**2 * dv)
    rhs_bulk = np.sum(zeta * f * box**2 * dv) / (4 * params.a)
    integrand, sign = boundary_term(params, geom, side_vals)
    rhs_boundary = 0.5 * np.sum(integrand * geom.side_ds)
    variant = eps * np.sum(zeta * rho2 * (Er**2 + E0**2) * dv)
    plus = np.sum((sign > 0) * geom.side_ds) / np.sum(geom.side_ds)
    return IntegratedEstimate(float(lhs_grad), float(lhs_zero), float(rhs_bulk), float(rhs_boundary), float(variant), float(plus))


# -- null-cone boundary layer ----------------------------------------------------

@dataclass
class LayerDecay:
    deltas: tuple[float, ...]
    envelope: np.ndarray
    flux: np.ndarray
    expected: float

    @staticmethod
    def _exponent(deltas, vals) -> float:
        return float(np.log(abs(vals[0]) / abs(vals[-1])) / np.log(deltas[0] / deltas[-1]))

    @property
    def envelope_exponent(self) -> float:
        return self._exponent(self.deltas, self.envelope)

    @property
    def flux_exponent(self) -> float:
        return self._exponent(self.deltas, self.flux)


def boundary_layer_decay(params: CarlemanParams, phi, U=(1.0, 2.0), deltas=(1e-2, 1e-3), n_quad: int = 400) -> LayerDecay:
    """Surface integrals over ``{f = delta}`` inside the slab ``U`` (flat 1+1, centre at the origin).

    Two quantities per level: the envelope ``delta^{-1} int r0 e^a f^{2a}
    [(E_rho phi)^2 + (E_theta phi)^2 + a^2 f^{-1} phi^2]`` that bounds the
    current, and the current itself, ``delta^{-1} int P(grad f)`` with
    ``psi = e^{-F} phi``.  Both should vanish as ``delta -> 0``; the envelope
    at the rate ``2a - 3/2``.
    """
    if params.n != 1:
        raise ContractError("the layer computation is flat 1+1 only")
    t, x = sp.symbols("t x", real=True)
    a, b, eps = sp.nsimplify(params.a), sp.nsimplify(params.b), sp.nsimplify(params.eps)
    ph = phi(t, x)
    f = (x**2 - t**2) / 4
    eta = 1 - eps * t**2
    fbar = f / eta
    hbar = 1 / (2 * eta) - eps * x**2 / 4
    F = -a * (sp.log(fbar) + b * fbar)
    Fp, Fpp = -a / fbar - a * b, a / fbar**2
    psi = sp.exp(-F) * ph

    def up(e):
        return sp.Matrix([-sp.diff(e, t), sp.diff(e, x)])

    def low(e):
        return sp.Matrix([sp.diff(e, t), sp.diff(e, x)])

    def dot(u, v):
        return -u[0] * v[0] + u[1] * v[1]

    dfb = low(fbar)
    w = (-sp.diff(fbar, t, 2) + sp.diff(fbar, x, 2)) / 2 - hbar
    A = (Fp**2 + Fpp) * dot(dfb, dfb) + 2 * hbar * Fp
    dpsi = low(psi)
    Sw = dot(dfb, dpsi) + w * psi
    P = Sw * dpsi - dfb * dot(dpsi, dpsi) / 2 + (A * dfb - low(w)) * psi**2 / 2
    flux = (up(f).T * P)[0]
    Er = (t / x) * sp.diff(ph, t) + sp.diff(ph, x)
    Eth = sp.diff(ph, t) + (t / x) * sp.diff(ph, x)
    env = params.r0 * sp.exp(a) * f ** (2 * a) * (Er**2 + Eth**2 + a**2 * ph**2 / f)
    fn = sp.lambdify((t, x), [flux, env], modules="numpy", cse=True)

    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    lo, hi = U
    xs = lo + (nodes + 1) * (hi - lo) / 2
    wq = weights * (hi - lo) / 2
    env_vals, flux_vals = [], []
    for delta in deltas:
        tot_f = tot_e = 0.0
        ds = np.sqrt(4 * delta) / np.sqrt(xs**2 - 4 * delta)
        for branch in (1.0, -1.0):
            ts = branch * np.sqrt(xs**2 - 4 * delta)
            fl, en = (np.broadcast_to(v, xs.shape) for v in fn(ts, xs))
            tot_f += np.sum(fl * ds * wq)
            tot_e += np.sum(en * ds * wq)
        flux_vals.append(tot_f / delta)
        env_vals.append(tot_e / delta)
    return LayerDecay(tuple(deltas), np.array(env_vals), np.array(flux_vals), 2 * params.a - 1.5)
