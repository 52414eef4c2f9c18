"""Transport of the radial frame and of derivatives of ``f`` and ``t`` along radial geodesics.

Along ``gamma_omega`` (unit-``r`` affine parameter ``s``, so ``s = r``) the
frame ``[E_rho, E_theta, E_A...]`` is parallel, hence every tensor written in
frame components obeys an ODE with a plain ``d/ds``.  With ``Z = grad f =
(s/2) E_rho`` the identities integrated here are

* ``d(s q)/ds = -2 q G^-1 q - (s^2/2) R(rho, a, rho, b)``,
* ``d tau/ds = -(2/s) q G^-1 tau`` for ``tau = grad t``,
* ``d(s^2 K)/ds`` for ``K = grad^3 f`` (derivative slot first),
* ``dS/ds`` for ``S = grad^2 t^2``,

where ``q = grad^2 f - g/2`` and ``G`` is the constant Gram matrix of the
frame.  The singular factors ``1/s`` are absorbed by integrating ``Q = s q``
and ``W = s^2 K``, both of which vanish at the vertex to third order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .geodesics import MAX_BATCH, frame_gram, initial_frame, log_map
from .metrics import MetricModel

LEVELS = ("frame", "q", "t", "full")
VERTEX_FRACTION = 1e-6


@dataclass
class RadialBundle:
    """Transported data on a batch of radial geodesics, sampled at ``s[b, i]``.

    ``frame[b, i]`` holds chart components of ``E_rho, E_theta, E_A...`` as
    columns, ``e0`` the separately transported ``E_0``.  Tensor fields are
    frame components in the order ``(rho, theta, A...)``.
    """

    omegas: np.ndarray
    s: np.ndarray
    x: np.ndarray
    frame: np.ndarray
    e0: np.ndarray
    gram: np.ndarray
    level: str
    q: np.ndarray | None = None
    tau: np.ndarray | None = None
    S: np.ndarray | None = None
    K: np.ndarray | None = None

    @property
    def omega0(self) -> np.ndarray:
        return self.omegas[:, 0]

    @property
    def t(self) -> np.ndarray:
        return self.omega0[:, None] * self.s

    @property
    def r(self) -> np.ndarray:
        return self.s

    @property
    def f(self) -> np.ndarray:
        return 0.25 * (self.r**2 - self.t**2)

    def zero_frame(self) -> np.ndarray:
        """Rows ``E_rho, E_0, E_A...`` (the frame used for curvature budgets)."""
        cols = [self.frame[..., 0], self.e0] + [self.frame[..., a] for a in range(2, self.frame.shape[-1])]
        return np.stack(cols, axis=-2)

    def flat(self) -> "RadialBundle":
        """Same data with the (geodesic, sample) axes merged into one geodesic axis of length-1 samples."""
        B, m = self.s.shape

        def merge(a):
            return None if a is None else a.reshape((B * m, 1) + a.shape[2:])

        return RadialBundle(
            omegas=np.repeat(self.omegas, m, axis=0),
            s=self.s.reshape(B * m, 1),
            x=merge(self.x),
            frame=merge(self.frame),
            e0=merge(self.e0),
            gram=np.repeat(self.gram, m, axis=0),
            level=self.level,
            q=merge(self.q),
            tau=merge(self.tau),
            S=merge(self.S),
            K=merge(self.K),
        )


def _frame_components(T: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Contract every slot of a covariant tensor with the frame columns."""
    out = T
    rank = T.ndim - 1
    for k in range(rank):
        out = np.moveaxis(np.einsum("p...a,pab->p...b", np.moveaxis(out, 1 + k, -1), F), -1, 1 + k)
    return out


class _Layout:
    def __init__(self, d: int, level: str) -> None:
        self.d = d
        self.level = level
        sizes = [("x", (d,)), ("F", (d, d + 1))]
        if LEVELS.index(level) >= 1:
            sizes.append(("Q", (d, d)))
        if LEVELS.index(level) >= 2:
            sizes.append(("tau", (d,)))
        if LEVELS.index(level) >= 3:
            sizes += [("W", (d, d, d)), ("S", (d, d))]
        self.slices = {}
        start = 0
        for name, shape in sizes:
            size = int(np.prod(shape))
            self.slices[name] = (slice(start, start + size), shape)
            start += size
        self.width = start

    def unpack(self, y: np.ndarray) -> dict:
        y = y.reshape(y.shape[0], self.width) if y.ndim == 2 else y.reshape(-1, self.width)
        return {k: y[:, sl].reshape((y.shape[0],) + shape) for k, (sl, shape) in self.slices.items()}

    def pack(self, parts: dict) -> np.ndarray:
        B = parts["x"].shape[0]
        out = np.empty((B, self.width))
        for k, (sl, _shape) in self.slices.items():
            out[:, sl] = parts[k].reshape(B, -1)
        return out

    def atol(self, B: int) -> np.ndarray:
        tol = np.full(self.width, 1e-14)
        if "Q" in self.slices:
            tol[self.slices["Q"][0]] = 1e-16  # s q vanishes to third order at the vertex
        if "W" in self.slices:
            # components that vanish identically only carry curvature round-off
            tol[self.slices["W"][0]] = 1e-12
            tol[self.slices["S"][0]] = 1e-12
        return np.tile(tol, B)


def _rhs_factory(model: MetricModel, lay: _Layout, lengths: np.ndarray, omega0: np.ndarray, G: np.ndarray):
    d = lay.d
    Ginv = np.linalg.inv(G)
    lvl = LEVELS.index(lay.level)

    def rhs(sigma, y):
        P = lay.unpack(y)
        x, F = P["x"], P["F"]
        v = F[:, :, 0]
        s = lengths * sigma
        s_inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        gam = model.christoffel(x)
        out = {"x": v, "F": -np.einsum("pkab,pa,pbc->pkc", gam, v, F)}
        if lvl >= 1:
            Fr = F[:, :, :d]
            Rf = _frame_components(model.riemann(x), Fr)
            Q = P["Q"]
            q = Q * s_inv[:, None, None]
            qG = q @ Ginv
            out["Q"] = -2.0 * qG @ q - 0.5 * s[:, None, None] ** 2 * Rf[:, 0, :, 0, :]
        if lvl >= 2:
            tau = P["tau"]
            out["tau"] = -2.0 * s_inv[:, None] * np.einsum("pam,pm->pa", qG, tau)
        if lvl >= 3:
            W, S = P["W"], P["S"]
            K = W * (s_inv**2)[:, None, None, None]
            dRf = _frame_components(model.nabla_riemann(x), Fr)
            Gq = Ginv @ q
            H = qG + 0.5 * np.eye(d)
            s1 = s[:, None, None, None]
            bracket = (
                -np.einsum("pnm,pmab->pnab", qG, K)
                - np.einsum("pam,pnmb->pnab", qG, K)
                - np.einsum("pbm,pnam->pnab", qG, K)
                + 0.25 * s1**2 * dRf[:, :, 0, :, :, 0]
                + 0.5 * s1 * (
                    np.einsum("psan,psb->pnab", Rf[..., 0], Gq)
                    + np.einsum("psbn,psa->pnab", Rf[..., 0], Gq)
                    + np.einsum("psab,pns->pnab", Rf[..., 0], H)
                    + np.einsum("pabs,pns->pnab", Rf[:, 0], H)
                )
            )
            out["W"] = 2.0 * s1 * bracket
            tau_up = np.einsum("pmn,pn->pm", Ginv, P["tau"])
            w0 = omega0[:, None, None]
            out["S"] = (
                -2.0 * s_inv[:, None, None] * (qG @ S + S @ Ginv @ q)
                - 4.0 * w0 * s_inv[:, None, None] ** 2 * np.einsum("pbam,pm->pab", W, tau_up)
                + 2.0 * w0 * s[:, None, None] * np.einsum("plab,pl->pab", Rf[..., 0], tau_up)
            )
        return (lay.pack(out) * lengths[:, None]).ravel()

    return rhs


def _vertex_values(model: MetricModel, lay: _Layout, p: np.ndarray, F0: np.ndarray, omega0: np.ndarray, s: np.ndarray) -> dict:
    """Leading-order Taylor data at distance ``s`` from the vertex."""
    d = lay.d
    B = len(omega0)
    vals = {"x": p[None] + s[:, None] * F0[:, :, 0], "F": F0.copy()}
    lvl = LEVELS.index(lay.level)
    if lvl >= 1:
        Rf = _frame_components(np.broadcast_to(model.riemann(p[None]), (B,) + (d,) * 4), F0[:, :, :d])
        vals["Q"] = -(s**3 / 6.0)[:, None, None] * Rf[:, 0, :, 0, :]
    tau0 = np.zeros((B, d))
    tau0[:, 0] = omega0
    tau0[:, 1] = 1.0
    if lvl >= 2:
        vals["tau"] = tau0
    if lvl >= 3:
        vals["S"] = 2.0 * tau0[:, :, None] * tau0[:, None, :]
        vals["W"] = (s**3 / 6.0)[:, None, None, None] * (
            Rf[..., 0] + np.einsum("pabn->pnab", Rf[:, 0])
        )
    return vals


def transport(
    model: MetricModel,
    p,
    basis: np.ndarray,
    omegas: np.ndarray,
    lengths: np.ndarray,
    sigmas: np.ndarray,
    level: str = "frame",
    rtol: float | None = None,
    r0: float = 1.0,
) -> RadialBundle:
    """Integrate the radial frame (and optionally ``q``, ``grad t``, ``K``, ``S``).

    Geodesic ``b`` is followed to ``s = lengths[b] * sigma`` for every entry of
    the increasing array ``sigmas`` in ``[0, 1]``.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    if rtol is None:
        # the third-derivative source carries finite-difference noise of the
        # curvature derivative; a tighter tolerance only chases that noise
        rtol = 1e-8 if level == "full" else 1e-11
    p = np.asarray(p, dtype=float)
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (len(omegas),)).copy()
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    d = model.dim
    lay = _Layout(d, level)
    F0 = initial_frame(basis, omegas)
    omega0 = omegas[:, 0]
    G = frame_gram(omega0, d)
    B, m = len(omegas), len(sigmas)
    result = np.empty((B, m, lay.width))
    for lo in range(0, B, MAX_BATCH):
        sl = slice(lo, lo + MAX_BATCH)
        nb = len(omegas[sl])
        init = _vertex_values(model, lay, p, F0[sl], omega0[sl], np.zeros(nb))
        y0 = lay.pack(init).ravel()
        if sigmas[-1] > 0:
            sol = solve_ivp(
                _rhs_factory(model, lay, lengths[sl], omega0[sl], G[sl]),
                (0.0, sigmas[-1]),
                y0,
                method="DOP853",
                rtol=rtol,
                atol=lay.atol(nb),
                t_eval=sigmas,
            )
            if not sol.success:
                raise RuntimeError(f"radial transport failed: {sol.message}")
            ys = sol.y.T.reshape(m, nb, lay.width)
        else:
            ys = np.broadcast_to(y0.reshape(1, nb, lay.width), (m, nb, lay.width))
        result[sl] = np.swapaxes(ys, 0, 1)
        # near-vertex samples take the Taylor values instead of the quadrature
        s_all = lengths[sl, None] * sigmas[None, :]
        for j in range(m):
            near = s_all[:, j] < VERTEX_FRACTION * r0
            if near.any():
                idx = np.flatnonzero(near)
                vv = _vertex_values(model, lay, p, F0[sl][idx], omega0[sl][idx], s_all[idx, j])
                result[lo + idx, j] = lay.pack(vv)

    parts = lay.unpack(result.reshape(B * m, lay.width))
    s = lengths[:, None] * sigmas[None, :]
    shaped = {k: v.reshape((B, m) + v.shape[1:]) for k, v in parts.items()}
    s_inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    bundle = RadialBundle(
        omegas=omegas,
        s=s,
        x=shaped["x"],
        frame=shaped["F"][..., :d],
        e0=shaped["F"][..., d],
        gram=G,
        level=level,
    )
    if "Q" in shaped:
        bundle.q = shaped["Q"] * s_inv[..., None, None]
    if "tau" in shaped:
        bundle.tau = shaped["tau"]
    if "W" in shaped:
        bundle.K = shaped["W"] * (s_inv**2)[..., None, None, None]
        bundle.S = shaped["S"]
    return bundle


def radial_frames(model: MetricModel, p, basis, omegas, radii, level: str = "frame", r0: float = 1.0) -> RadialBundle:
    """Frames (and transported fields) on each ``gamma_omega`` at the radii ``radii``."""
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or radii[0] < 0:
        raise ValueError("radii must be non-negative and strictly increasing")
    top = radii[-1]
    return transport(model, p, basis, omegas, top, radii / top, level=level, r0=r0)


def normal_polar(basis: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(t, r, omega)`` of tangent vectors ``v`` (chart components) at the centre."""
    nu = np.linalg.solve(basis, np.asarray(v, dtype=float).reshape(-1, basis.shape[0]).T).T
    t = nu[:, 0]
    r = np.linalg.norm(nu[:, 1:], axis=1)
    safe = np.where(r > 0, r, 1.0)
    omegas = np.concatenate([(t / safe)[:, None], nu[:, 1:] / safe[:, None]], axis=1)
    return t, r, omegas


def frames_at_points(model: MetricModel, p, basis, points, level: str = "frame", r0: float = 1.0) -> RadialBundle:
    """Transported data at arbitrary chart points of ``D`` (log map, then one radial transport each)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = log_map(model, p, points)
    t, r, omegas = normal_polar(basis, v)
    if np.any(np.abs(omegas[:, 0]) >= 1):
        raise ValueError("frames requested at points outside the null-cone exterior")
    return transport(model, p, basis, omegas, r, np.array([1.0]), level=level, r0=r0)
