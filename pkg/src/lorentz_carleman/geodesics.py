"""Geodesics, exponential and logarithm maps, and radial parallel frames.

Batches of geodesics are stacked into one ``solve_ivp`` state so that every
member shares the same step sequence.  That keeps finite differences taken
across neighbouring geodesics smooth, which the Newton shooting in
:func:`log_map` relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .metrics import DomainError, MetricModel, Minkowski

RTOL = 1e-10
BATCH_RTOL = 1e-12
ATOL = 1e-14
MAX_BATCH = 512


class ConvergenceError(RuntimeError):
    """Newton shooting failed to reach the requested endpoint."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class GeodesicPath:
    s: np.ndarray
    x: np.ndarray
    v: np.ndarray
    truncated: bool = False
    order: int = 8


def _geodesic_rhs(model: MetricModel, d: int):
    def rhs(_s, y):
        y = y.reshape(-1, 2 * d)
        x, v = y[:, :d], y[:, d:]
        acc = -np.einsum("pkab,pa,pb->pk", model.christoffel(x), v, v)
        return np.concatenate([v, acc], axis=1).ravel()

    return rhs


def integrate_geodesic(model: MetricModel, x0, v0, s_end: float, tol: float = RTOL, n_samples: int = 65) -> GeodesicPath:
    """Integrate one affinely parametrised geodesic from ``(x0, v0)`` up to ``s_end``.

    If the path would leave the chart the integration stops there and the
    returned path has ``truncated=True``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    model.check_domain(x0)
    d = model.dim

    def leaves_chart(_s, y):
        return model.domain_margin(y[:d][None])[0]

    leaves_chart.terminal = True
    s_eval = np.linspace(0.0, s_end, n_samples)
    sol = solve_ivp(
        _geodesic_rhs(model, d),
        (0.0, s_end),
        np.concatenate([x0, v0]),
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-3,
        t_eval=s_eval,
        events=leaves_chart,
    )
    if sol.status == -1:
        raise RuntimeError(f"geodesic integration failed: {sol.message}")
    ys = sol.y.T
    ys[0, :d], ys[0, d:] = x0, v0
    return GeodesicPath(s=sol.t, x=ys[:, :d], v=ys[:, d:], truncated=sol.status == 1)


def _shoot(model: MetricModel, p: np.ndarray, v: np.ndarray, rtol: float = BATCH_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints and end velocities of ``s -> exp_p(s v)`` at ``s = 1`` for a batch of ``v``."""
    v = np.atleast_2d(v)
    if isinstance(model, Minkowski):
        return p + v, v.copy()
    d = model.dim
    xs, vs = [], []
    for lo in range(0, len(v), MAX_BATCH):
        chunk = v[lo : lo + MAX_BATCH]
        y0 = np.concatenate([np.broadcast_to(p, chunk.shape), chunk], axis=1).ravel()
        sol = solve_ivp(_geodesic_rhs(model, d), (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=ATOL)
        if not sol.success:
            raise RuntimeError(f"geodesic integration failed: {sol.message}")
        end = sol.y[:, -1].reshape(-1, 2 * d)
        xs.append(end[:, :d])
        vs.append(end[:, d:])
    x_end, v_end = np.concatenate(xs), np.concatenate(vs)
    if not np.all(np.isfinite(x_end)):
        raise DomainError("geodesic blew up before reaching s = 1")
    model.check_domain(x_end)
    return x_end, v_end


def exp_map(model: MetricModel, p, v) -> np.ndarray:
    """``exp_p(v)``; ``v`` may be a single vector or a batch."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    x, _ = _shoot(model, p, v.reshape(-1, model.dim))
    return x.reshape(v.shape)


def log_map(
    model: MetricModel,
    p,
    q,
    tol: float = 1e-12,
    max_iter: int = 50,
    fd_step: float = 1e-6,
    return_velocity: bool = False,
):
    """Tangent vector ``v`` at ``p`` with ``exp_p(v) = q``, by damped Newton shooting.

    The Jacobian of the endpoint map is built from forward differences; all
    shots for all targets go through a single batched integration per
    iteration.  With ``return_velocity`` the geodesic velocity at ``q`` is
    returned as well.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    shape = q.shape
    d = model.dim
    q = q.reshape(-1, d)
    if isinstance(model, Minkowski):
        v = q - p
        return (v.reshape(shape), v.reshape(shape)) if return_velocity else v.reshape(shape)

    v = q - p
    scale = 1.0 + np.linalg.norm(q - p, axis=1)
    active = np.ones(len(q), dtype=bool)
    x_end, v_end = _shoot(model, p, v)
    res = x_end - q
    for _ in range(max_iter):
        err = np.linalg.norm(res, axis=1) / scale
        active = err > tol
        if not active.any():
            break
        idx = np.flatnonzero(active)
        va = v[idx]
        probes = va[:, None, :] + fd_step * np.eye(d)[None]
        xp, _ = _shoot(model, p, probes.reshape(-1, d))
        jac = (xp.reshape(len(idx), d, d) - x_end[idx][:, None, :]) / fd_step  # [i, column j, row k]
        step = np.linalg.solve(np.swapaxes(jac, 1, 2), -res[idx][..., None])[..., 0]
        # damping: halve the step until the residual decreases
        lam = np.ones(len(idx))
        new_v = va + step
        for _ in range(8):
            xt, vt = _shoot(model, p, new_v)
            new_err = np.linalg.norm(xt - q[idx], axis=1)
            worse = new_err > np.linalg.norm(res[idx], axis=1)
            if not worse.any():
                break
            lam[worse] *= 0.5
            new_v = va + lam[:, None] * step
        v[idx] = new_v
        x_end[idx], v_end[idx] = xt, vt
        res[idx] = xt - q[idx]
    else:
        err = np.linalg.norm(res, axis=1) / scale
        if np.any(err > tol):
            raise ConvergenceError("log_map Newton shooting stalled", float(err.max()))
    if return_velocity:
        return v.reshape(shape), v_end.reshape(shape)
    return v.reshape(shape)


def parallel_transport(model: MetricModel, path: GeodesicPath, w0, tol: float = RTOL) -> np.ndarray:
    """Components of the parallel transport of ``w0`` at every sample of ``path``."""
    d = model.dim
    w0 = np.asarray(w0, dtype=float)

    def rhs(_s, y):
        x, v, w = y[:d], y[d : 2 * d], y[2 * d :]
        gam = model.christoffel(x[None])[0]
        return np.concatenate([v, -gam @ v @ v, -np.einsum("kab,a,b->k", gam, v, w)])

    y0 = np.concatenate([path.x[0], path.v[0], w0])
    sol = solve_ivp(rhs, (path.s[0], path.s[-1]), y0, method="DOP853", rtol=tol, atol=tol * 1e-3, t_eval=path.s)
    if not sol.success:
        raise RuntimeError(f"parallel transport failed: {sol.message}")
    w = sol.y[2 * d :].T
    w[0] = w0
    return w


def orthonormal_basis(model: MetricModel, p) -> np.ndarray:
    """Columns ``e_0, e_1, ..., e_n`` with ``g_p(e_a, e_b) = diag(-1, 1, ..., 1)``.

    Lorentzian Gram-Schmidt applied to the coordinate vectors in order
    ``d_t, d_1, ..., d_n``.
    """
    p = np.asarray(p, dtype=float)
    g = model.metric(p[None])[0]
    basis = []
    for k in range(model.dim):
        e = np.eye(model.dim)[k]
        for b in basis:
            nb = b @ g @ b
            e = e - (e @ g @ b) / nb * b
        norm = e @ g @ e
        if (k == 0) != (norm < 0):
            raise DomainError("coordinate vector d_t is not timelike at the centre")
        basis.append(e / np.sqrt(abs(norm)))
    return np.stack(basis, axis=1)


def sphere_directions(n: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = np.pi * (1 + 5**0.5) * k
    rad = np.sqrt(1 - z * z)
    return np.stack([z, rad * np.cos(phi), rad * np.sin(phi)], axis=1)


def omega_grid(n: int, n_omega0: int = 16, n_dirs: int = 32, omega0_max: float = 0.9) -> np.ndarray:
    """Tensor grid of directions ``(omega^0, omega_spatial)`` with ``|omega^0| < omega0_max``."""
    w0 = np.linspace(-omega0_max, omega0_max, n_omega0 + 2)[1:-1]
    dirs = sphere_directions(n, n_dirs)
    return np.concatenate(
        [np.repeat(w0, len(dirs))[:, None], np.tile(dirs, (len(w0), 1))], axis=1
    )


def angular_complement(omega_sp: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of ``omega_sp`` in R^n, shape (..., n, n-1).

    Gram-Schmidt over the standard basis vectors in fixed order, skipping the
    one most aligned with ``omega_sp`` so the result is well conditioned.
    """
    omega_sp = np.atleast_2d(omega_sp)
    n = omega_sp.shape[-1]
    out = np.zeros(omega_sp.shape + (n - 1,))
    for i, w in enumerate(omega_sp):
        skip = int(np.argmax(np.abs(w)))
        vecs = [w]
        for k in range(n):
            if k == skip:
                continue
            e = np.eye(n)[k]
            for b in vecs:
                e = e - (e @ b) * b
            vecs.append(e / np.linalg.norm(e))
        out[i] = np.stack(vecs[1:], axis=1) if n > 1 else out[i]
    return out


def initial_frame(basis: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Chart components of ``[e_rho, e_theta, e_A..., e_0]`` at the centre, shape (B, d, d+1)."""
    omegas = np.atleast_2d(omegas)
    w0, wsp = omegas[:, 0], omegas[:, 1:]
    if np.any(np.abs(w0) >= 1):
        raise ValueError("|omega^0| must be < 1: the frame degenerates on the null cone")
    B, d = omegas.shape
    n = d - 1
    comp = np.zeros((B, d, d + 1))
    comp[:, 0, 0] = w0
    comp[:, 1:, 0] = wsp
    comp[:, 0, 1] = 1.0
    comp[:, 1:, 1] = w0[:, None] * wsp
    if n > 1:
        comp[:, 1:, 2:d] = angular_complement(wsp)
    comp[:, 0, d] = 1.0
    return np.einsum("ka,pab->pkb", basis, comp)


def frame_gram(omega0, d: int) -> np.ndarray:
    """Constant Gram matrix of the parallel frame ``[E_rho, E_theta, E_A...]``."""
    kappa = 1.0 - np.asarray(omega0, dtype=float) ** 2
    G = np.zeros(kappa.shape + (d, d))
    G[..., 0, 0] = kappa
    G[..., 1, 1] = -kappa
    for a in range(2, d):
        G[..., a, a] = 1.0
    return G
