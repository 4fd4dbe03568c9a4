"""Direct quadrature of the free-streaming density.

Without fields the solution is f(t, x, p) = f0(x - t v(p), p), so

    rho(t, x) = int f0(x - t v(p), p) dp,

a two-dimensional integral (|p| and the angle between p and x) for the
radial product datum.  This is independent of the particle machinery and
serves as its oracle.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .core_state import InitialDatum, bump


_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)
_GL_X, _GL_W = 0.5 * (_GL_X + 1.0), 0.5 * _GL_W


def _bump1(s):
    return float(bump(np.array(s)))


def free_stream_density(f0: InitialDatum, t: float, r: float, epsabs=1e-14, epsrel=1e-11) -> float:
    """rho(t, x) at |x| = r for the free transport of ``f0``."""
    R0, P0 = f0.R0, f0.P0
    r = abs(float(r))
    if t == 0:
        return f0.amplitude * _bump1(r / R0) * 4.0 * np.pi * P0**3 * _radial_moment()

    def inner(q):
        speed = q / np.sqrt(1.0 + q * q)
        d = t * speed
        # |x - t v|^2 = r^2 + d^2 - 2 r d mu < R0^2
        if r * d == 0:
            return 2.0 * _bump1(np.hypot(r, d) / R0)
        mu_lo = (r * r + d * d - R0 * R0) / (2.0 * r * d)
        if mu_lo >= 1.0:
            return 0.0
        mu_lo = max(mu_lo, -1.0)
        mu = mu_lo + (1.0 - mu_lo) * _GL_X
        dist = np.sqrt(np.maximum(r * r + d * d - 2.0 * r * d * mu, 0.0)) / R0
        return (1.0 - mu_lo) * (_GL_W @ bump(dist))

    # restrict |p| to speeds that can reach r from inside B(R0)
    lo, hi = _momentum_window(r, t, R0, P0)
    if hi <= lo:
        return 0.0
    val, _ = integrate.quad(
        lambda q: q * q * _bump1(q / P0) * inner(q), lo, hi, epsabs=epsabs, epsrel=epsrel, limit=200
    )
    return 2.0 * np.pi * f0.amplitude * val


def _radial_moment():
    val, _ = integrate.quad(lambda s: s * s * _bump1(s), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return val


def _momentum_window(r, t, R0, P0):
    """Momenta with |r - t|v|| < R0, intersected with [0, P0]."""

    def q_of(speed):
        speed = min(max(speed, 0.0), 1.0 - 1e-15)
        return speed / np.sqrt(1.0 - speed * speed)

    lo = q_of((r - R0) / t)
    hi = min(q_of((r + R0) / t), P0)
    return lo, hi


def density_profile(f0: InitialDatum, t: float, r_max: float | None = None, n: int = 257) -> CubicSpline:
    """Cubic spline of r -> rho(t, r) on [0, r_max], even in r."""
    if r_max is None:
        r_max = f0.R0 + t
    r = np.linspace(0.0, r_max, n)
    vals = np.array([free_stream_density(f0, t, ri) for ri in r])
    rr = np.concatenate([-r[:0:-1], r])
    vv = np.concatenate([vals[:0:-1], vals])
    return CubicSpline(rr, vv)


def sup_density(f0: InitialDatum, t: float, n: int = 257) -> tuple[float, float]:
    """(max_r rho(t, r), argmax) of the continuum density."""
    from scipy.optimize import minimize_scalar

    prof = density_profile(f0, t, n=n)
    r = np.linspace(0.0, f0.R0 + t, 4 * n)
    i = int(np.argmax(prof(r)))
    a, b = r[max(i - 1, 0)], r[min(i + 1, r.size - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -free_stream_density(f0, t, s), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-10})
        cand = (-res.fun, res.x)
    else:
        cand = (0.0, 0.0)
    at_i = free_stream_density(f0, t, r[i])
    return max(cand, (at_i, r[i]))


def cic_smoothed_density(profile: CubicSpline, nodes, h: float, order: int = 8):
    """Radial density convolved with the trilinear (cloud-in-cell) tent of width h.

    This is what the deposit of infinitely many markers converges to at a
    node; ``nodes`` has shape (K, 3).
    """
    g, w = np.polynomial.legendre.leggauss(order)
    # tent on [-h, h] split at 0: weight (1 - |u|/h)/h
    u = np.concatenate([-0.5 * h * (g + 1.0), 0.5 * h * (g + 1.0)])
    wu = np.concatenate([w, w]) * 0.5 * h * (1.0 - np.abs(u) / h) / h
    U = np.stack(np.meshgrid(u, u, u, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (wu[:, None, None] * wu[None, :, None] * wu[None, None, :]).ravel()
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    out = np.empty(nodes.shape[0])
    for k, c in enumerate(nodes):
        out[k] = W @ profile(np.linalg.norm(c + U, axis=1))
    return out


def smoothed_grid_sup(f0: InitialDatum, t: float, n: int, extent: float, order: int = 8, profile=None) -> float:
    """Largest node value of the cloud-in-cell smoothed density on the grid.

    The noise-free counterpart of the grid maximum of deposited markers.
    Only nodes in the fundamental wedge 0 <= x <= y <= z of the cube group
    near the continuum maximum are visited.
    """
    h = 2.0 * extent / n
    prof = density_profile(f0, t) if profile is None else profile
    _, r_star = sup_density(f0, t) if profile is None else (None, _profile_argmax(prof, f0.R0 + t))
    k = np.arange(0, n // 2 + 1) * h
    X, Y, Z = np.meshgrid(k, k, k, indexing="ij")
    keep = (X <= Y) & (Y <= Z)
    R = np.sqrt(X**2 + Y**2 + Z**2)
    keep &= np.abs(R - r_star) <= 2.0 * h
    nodes = np.stack([X[keep], Y[keep], Z[keep]], axis=1)
    if nodes.size == 0:
        nodes = np.zeros((1, 3))
    return float(cic_smoothed_density(prof, nodes, h, order).max())


def _profile_argmax(prof, r_max):
    r = np.linspace(0.0, r_max, 4001)
    return float(r[np.argmax(prof(r))])
