"""The shifted hyperquadric ``fbar = f / eta`` with ``eta = 1 - eps t^2``, and its pseudoconvexity.

Everything here works in frame components with respect to the parallel
frame ``(E_rho, E_theta, E_A...)`` delivered by :mod:`.transport`; the frame
Gram matrix is ``G = diag(kappa, -kappa, 1, ...)`` with ``kappa = rho^2/r^2``.
In that frame ``grad f`` has the single lower component ``(r/2) kappa`` in
the ``rho`` slot, which is what keeps the algebra short.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geodesics import omega_grid
from .hyperquadric import HESS_STEP, chart_derivatives, covariant_hessian, f_of_nu, t_of_nu
from .metrics import MetricModel
from .report import CheckRow
from .transport import RadialBundle, frames_at_points, radial_frames


class RegimeError(ValueError):
    """``eta`` is not positive, so ``fbar`` is undefined."""


@dataclass(frozen=True)
class PcParams:
    eps0: float = 0.05
    r0: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps0 <= 0.1:
            raise ValueError(f"eps0 must lie in [0, 0.1], got {self.eps0}")
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")

    @property
    def eps(self) -> float:
        return self.eps0 / self.r0**2


def eta_fbar_hbar(params: PcParams, fp):
    """``(eta, fbar, hbar)`` at anything carrying ``t`` and ``r`` (a frame point or a bundle)."""
    t = np.asarray(fp.t, dtype=float)
    r = np.asarray(fp.r, dtype=float)
    eps = params.eps
    eta = 1.0 - eps * t * t
    if np.any(eta <= 0):
        raise RegimeError("eps t^2 >= 1 somewhere: eta is not positive")
    f = 0.25 * (r * r - t * t)
    return eta, f / eta, 0.5 / eta - 0.25 * eps * r * r


def _squeeze(b: RadialBundle) -> RadialBundle:
    return b.flat() if b.s.shape[1] != 1 else b


@dataclass
class PcFields:
    """Pointwise frame data for ``fbar``; arrays carry a leading point axis."""

    params: PcParams
    r: np.ndarray
    t: np.ndarray
    kappa: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    frame: np.ndarray
    x: np.ndarray
    q: np.ndarray
    tau: np.ndarray
    S: np.ndarray
    eta: np.ndarray
    f: np.ndarray
    fbar: np.ndarray
    hbar: np.ndarray
    df: np.ndarray
    ddf: np.ndarray
    deta: np.ndarray
    ddeta: np.ndarray
    dfbar: np.ndarray
    ddfbar: np.ndarray

    @property
    def d(self) -> int:
        return self.G.shape[-1]

    @property
    def pi(self) -> np.ndarray:
        return self.ddfbar - self.hbar[:, None, None] * self.G

    def inner(self, X, Y) -> np.ndarray:
        return np.einsum("pa,pab,pb->p", X, self.G, Y)

    def raise_(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("pab,pb->pa", self.Ginv, w)

    def to_chart(self, X: np.ndarray) -> np.ndarray:
        return np.einsum("pka,pa->pk", self.frame, X)


@dataclass
class _RT:
    t: np.ndarray
    r: np.ndarray


def pc_fields(params: PcParams, bundle: RadialBundle) -> PcFields:
    """Assemble ``fbar`` and its first two derivatives from transported ``q``, ``grad t``, ``grad^2 t^2``."""
    if bundle.level != "full":
        raise ValueError("pseudoconvexity data needs a bundle transported at level 'full'")
    b = _squeeze(bundle)
    r, t = b.r[:, 0], b.t[:, 0]
    eta, fbar, hbar = eta_fbar_hbar(params, _RT(t, r))
    f = 0.25 * (r * r - t * t)
    kappa = 1.0 - b.omega0**2
    G = b.gram
    d = G.shape[-1]
    eps = params.eps
    q, tau, S = b.q[:, 0], b.tau[:, 0], b.S[:, 0]
    df = np.zeros((len(r), d))
    df[:, 0] = 0.5 * r * kappa
    ddf = q + 0.5 * G
    deta = -2.0 * eps * t[:, None] * tau
    ddeta = -eps * S
    ei, ei2, ei3 = 1 / eta, 1 / eta**2, 1 / eta**3
    dfbar = ei[:, None] * df - (f * ei2)[:, None] * deta
    outer = df[:, :, None] * deta[:, None, :]
    ddfbar = (
        ei[:, None, None] * ddf
        - ei2[:, None, None] * (outer + np.swapaxes(outer, 1, 2))
        + (2 * f * ei3)[:, None, None] * deta[:, :, None] * deta[:, None, :]
        - (f * ei2)[:, None, None] * ddeta
    )
    return PcFields(
        params=params, r=r, t=t, kappa=kappa, G=G, Ginv=np.linalg.inv(G), frame=b.frame[:, 0], x=b.x[:, 0],
        q=q, tau=tau, S=S, eta=eta, f=f, fbar=fbar, hbar=hbar, df=df, ddf=ddf,
        deta=deta, ddeta=ddeta, dfbar=dfbar, ddfbar=ddfbar,
    )


# -- tangency maps and barred frames ----------------------------------------

def p_map(fields: PcFields, X: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Send ``f``-tangent vectors (frame components) to ``fbar``-tangent ones."""
    X = np.atleast_2d(X)
    scale = 1.0 + np.abs(X).max(axis=1) * (1.0 + fields.r)
    if np.any(np.abs(np.einsum("pa,pa->p", X, fields.df)) > tol * scale):
        raise ValueError("p_map: input is not tangent to the level sets of f")
    Xeta = np.einsum("pa,pa->p", X, fields.deta)
    out = X.copy()
    out[:, 0] += 0.5 * fields.r * Xeta
    return out


def pbar_map(fields: PcFields, Xb: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`p_map`, from ``fbar``-tangent to ``f``-tangent vectors."""
    Xb = np.atleast_2d(Xb)
    scale = 1.0 + np.abs(Xb).max(axis=1) * (1.0 + fields.r)
    if np.any(np.abs(np.einsum("pa,pa->p", Xb, fields.dfbar)) > tol * scale):
        raise ValueError("pbar_map: input is not tangent to the level sets of fbar")
    Xeta = np.einsum("pa,pa->p", Xb, fields.deta)
    out = Xb.copy()
    out[:, 0] -= 0.5 * fields.r * Xeta / fields.eta
    return out


@dataclass
class BarredFrame:
    """Barred frame as frame-component columns ``[Ebar_rho, Ebar_theta, Ebar_A...]``, plus ``gbar_plus``."""

    vectors: np.ndarray
    gbar_plus: np.ndarray

    @property
    def Ebar_rho(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def Ebar_theta(self) -> np.ndarray:
        return self.vectors[..., 1]

    @property
    def Ebar_A(self) -> np.ndarray:
        return self.vectors[..., 2:]


def barred_frames(fields: PcFields) -> BarredFrame:
    d = fields.d
    N = len(fields.r)
    E = np.zeros((N, d, d))
    E[:, :, 0] = (2.0 / fields.r)[:, None] * fields.raise_(fields.dfbar)
    for a in range(1, d):
        X = np.zeros((N, d))
        X[:, a] = 1.0
        E[:, :, a] = p_map(fields, X)
    gp = np.zeros((N, d - 1, d - 1))
    for i in range(1, d):
        for j in range(1, d):
            gp[:, i - 1, j - 1] = gplus(fields, pbar_map(fields, E[:, :, i]), pbar_map(fields, E[:, :, j]))
    return BarredFrame(vectors=E, gbar_plus=gp)


def gplus(fields: PcFields, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``g + (2/kappa) E_theta^flat (x) E_theta^flat`` on ``f``-tangent vectors."""
    Et = np.zeros_like(X)
    Et[:, 1] = 1.0
    return fields.inner(X, Y) + (2.0 / fields.kappa) * fields.inner(Et, X) * fields.inner(Et, Y)


def gbar_plus(fields: PcFields, Xb: np.ndarray, Yb: np.ndarray) -> np.ndarray:
    return gplus(fields, pbar_map(fields, Xb), pbar_map(fields, Yb))


@dataclass
class PiTensor:
    components: np.ndarray
    hbar: np.ndarray


def pi_tensor(fields: PcFields, frame: BarredFrame | None = None) -> PiTensor:
    """``pi = grad^2 fbar - hbar g`` contracted on the barred frame."""
    frame = barred_frames(fields) if frame is None else frame
    E = frame.vectors
    return PiTensor(components=np.einsum("pai,pab,pbj->pij", E, fields.pi, E), hbar=fields.hbar)


def hessian_relation_residual(fields: PcFields, Xb: np.ndarray, Yb: np.ndarray, ddfbar: np.ndarray | None = None) -> np.ndarray:
    """Gap between the shifted Hessian on ``fbar``-tangent pairs and ``q`` on their ``pbar`` images.

    ``ddfbar`` (frame components) overrides the assembled Hessian, e.g. with
    a differenced one.
    """
    H = fields.ddfbar if ddfbar is None else ddfbar
    ei = 1.0 / fields.eta
    lhs_t = H - 0.5 * ei[:, None, None] * fields.G + (ei * fields.fbar)[:, None, None] * fields.ddeta
    lhs = np.einsum("pa,pab,pb->p", Xb, lhs_t, Yb)
    rhs = ei * np.einsum("pa,pab,pb->p", pbar_map(fields, Xb), fields.q, pbar_map(fields, Yb))
    return np.abs(lhs - rhs)


def random_tangent(fields: PcFields, count: int, seed: int = 0) -> np.ndarray:
    """``count`` random ``fbar``-tangent vectors per point, unit in ``gbar_plus``; shape (N, count, d)."""
    rng = np.random.default_rng(seed)
    N, d = len(fields.r), fields.d
    coef = rng.standard_normal((N, count, d - 1))
    norm = np.sqrt(fields.kappa[:, None] * coef[..., 0] ** 2 + np.sum(coef[..., 1:] ** 2, axis=-1))
    coef /= norm[..., None]
    E = barred_frames(fields).vectors[:, :, 1:]
    return np.einsum("pai,pci->pca", E, coef)


def fd_fbar_hessian(model: MetricModel, p, basis, params: PcParams, points, h: float | None = None) -> np.ndarray:
    """Chart covariant Hessian of ``fbar`` by differencing ``fbar`` composed with ``log_p``."""
    h = HESS_STEP * params.r0 if h is None else h
    eps = params.eps
    der = chart_derivatives(
        model, p, basis, points, h, order=2,
        funcs={"fbar": lambda nu: f_of_nu(nu) / (1.0 - eps * t_of_nu(nu) ** 2)},
    )
    return covariant_hessian(model, np.atleast_2d(points), der["dfbar"], der["ddfbar"])


# -- checks -----------------------------------------------------------------

def pseudoconvexity_margins(fields: PcFields, n_random: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-point margin ``min pi(X,X) - (eps0/8)(r/r0)^2`` over ``gbar_plus``-unit tangent ``X``.

    The first array is the exact minimum from a generalised eigenproblem, the
    second the minimum over ``n_random`` random directions (never smaller).
    """
    frame = barred_frames(fields)
    P = pi_tensor(fields, frame).components[:, 1:, 1:]
    scale = np.ones((len(fields.r), fields.d - 1))
    scale[:, 0] = fields.kappa
    s = 1.0 / np.sqrt(scale)
    Pn = P * s[:, :, None] * s[:, None, :]
    lam = np.linalg.eigvalsh(0.5 * (Pn + np.swapaxes(Pn, 1, 2)))[:, 0]
    bound = fields.params.eps0 / 8.0 * fields.r**2 / fields.params.r0**2
    X = random_tangent(fields, n_random, seed)
    vals = np.einsum("pca,pab,pcb->pc", X, fields.pi, X)
    return lam - bound, vals.min(axis=1) - bound


def shifted_gauss_residuals(fields: PcFields) -> tuple[np.ndarray, np.ndarray]:
    """Relative corrections in the shifted Gauss identities for ``|grad fbar|^2`` and ``grad^2 fbar(grad fbar, grad fbar)``."""
    eta, fb, et2 = fields.eta, fields.fbar, fields.params.eps * fields.t**2
    up = fields.raise_(fields.dfbar)
    e1 = eta**2 * np.einsum("pa,pa->p", up, fields.dfbar) / fb - 1.0 - et2
    e2 = 2 * eta**4 * np.einsum("pa,pab,pb->p", up, fields.ddfbar, up) / fb - 1.0 - 5 * et2 - 2 * et2**2
    return e1, e2


def sample_fields(model: MetricModel, p, basis, params: PcParams, n_omega0=16, n_dirs=32, n_radii=10, omega0_max=0.9):
    """Transport to the standard sweep and assemble :class:`PcFields` on every sample."""
    omegas = omega_grid(model.n, n_omega0, n_dirs, omega0_max)
    if len(omegas) == 0 or n_radii < 1:
        raise ValueError("degenerate sampling")
    radii = np.linspace(params.r0 / n_radii, params.r0 * (1 - 1e-3), n_radii)
    b = radial_frames(model, p, basis, omegas, radii, level="full", r0=params.r0)
    return pc_fields(params, b)


def fields_at_points(model: MetricModel, p, basis, params: PcParams, points) -> PcFields:
    return pc_fields(params, frames_at_points(model, p, basis, points, level="full", r0=params.r0))


def pseudoconvexity_check(params: PcParams, model: MetricModel, p, basis, fields: PcFields | None = None, **sampling):
    """Smallest pseudoconvexity margin over the sweep; returns ``(min_margin, per_point_margins)``."""
    fields = sample_fields(model, p, basis, params, **sampling) if fields is None else fields
    exact, rand = pseudoconvexity_margins(fields)
    m = np.minimum(exact, rand)
    return float(m.min()), m


ROUNDOFF = 1e-12


def _fit(measured, envelope) -> float:
    # residuals at roundoff level carry no information about the constant
    ok = (envelope > 0) & (np.abs(measured) > ROUNDOFF)
    return float(np.max(np.abs(measured[ok]) / envelope[ok])) if ok.any() else 0.0


def eta_derivative_report(params: PcParams, fields: PcFields, C0: float, C1: float, n: int) -> list[CheckRow]:
    """Fitted constants for the ``eta`` derivative envelopes in both frames, plus the exact radial identities."""
    eps, r0 = params.eps, params.r0
    r, t, kappa, eta = fields.r, np.abs(fields.t), fields.kappa, fields.eta
    de, dde = fields.deta, fields.ddeta
    rows = []

    def fitted(name, measured, env):
        c = _fit(measured, env)
        rows.append(CheckRow(check=name, reference="eta derivative bounds", measured=float(np.max(np.abs(measured))),
                             bound=10.0, fitted=c, passed=c <= 10.0))

    def exact(name, measured, tol=1e-9):
        m = float(np.max(np.abs(measured)))
        rows.append(CheckRow(check=name, reference="radial identity for eta", measured=m, bound=tol, passed=m <= tol))

    C0 = max(C0, 1e-300)
    C01 = C0 + max(C1, 0.0)
    a1 = C0 / n * r**2 / r0**2
    a2 = C01 / n * r**2 / r0**2
    exact("d_eta_rho_exact", de[:, 0] + 2 * eps * fields.t**2 / r)
    exact("dd_eta_rhorho_exact", dde[:, 0, 0] + 2 * eps * fields.t**2 / r**2)
    fitted("d_eta_theta", de[:, 1] + 2 * eps * fields.t, kappa * a1 * eps * t)
    fitted("dd_eta_thetatheta", dde[:, 1, 1] + 2 * eps, kappa * a2 * eps)
    fitted("dd_eta_rhotheta", dde[:, 0, 1] + (fields.t / r) * 2 * eps, (t / r) * kappa * a1 * eps)
    E = barred_frames(fields).vectors
    dbar = np.einsum("pa,pai->pi", de, E)
    ddbar = np.einsum("pai,pab,pbj->pij", E, dde, E)
    fitted("d_eta_bar_theta", dbar[:, 1] + eta * 2 * eps * fields.t, kappa * a1 * eps * t)
    fitted("dd_eta_bar_thetatheta", ddbar[:, 1, 1] + eta**2 * 2 * eps, kappa * a2 * eps)
    if fields.d > 2:
        fitted("d_eta_A", np.abs(de[:, 2:]).max(axis=1), a1 * eps * t)
        fitted("dd_eta_AB", np.abs(dde[:, 2:, 2:]).max(axis=(1, 2)), a2 * eps / kappa)
        fitted("dd_eta_thetaA", np.abs(dde[:, 1, 2:]).max(axis=1), a2 * eps)
        fitted("dd_eta_rhoA", np.abs(dde[:, 0, 2:]).max(axis=1), (t / r) * a1 * eps)
        fitted("d_eta_bar_A", np.abs(dbar[:, 2:]).max(axis=1), a1 * eps * t)
        fitted("dd_eta_bar_AB", np.abs(ddbar[:, 2:, 2:]).max(axis=(1, 2)), a2 * eps / kappa)
        fitted("dd_eta_bar_thetaA", np.abs(ddbar[:, 1, 2:]).max(axis=1), a2 * eps)
    return rows
