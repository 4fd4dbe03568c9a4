"""Spherically symmetric reference solver and symmetry checks.

For radially symmetric data the current is a gradient, P(j) vanishes, the
magnetic field and the transverse electric field vanish identically, and the
system reduces to relativistic Vlasov-Poisson with the repulsive enclosed
charge field E(r) = m(r) / (4 pi r^2).  Here that system is solved with
shells: each marker becomes a shell with radius r, radial momentum p_r and
conserved squared angular momentum l^2.  Each shell also keeps its orbital
plane and angle so that 3D positions can be reconstructed for deposition on
the same grid as a 3D run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numba as nb
import numpy as np

from .core_state import GridField, ParticleEnsemble, signed_permutations
from .fields import FreeSpaceKernel, helmholtz_project


@dataclass(frozen=True)
class RadialEnsemble:
    r: np.ndarray
    pr: np.ndarray
    ell2: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    t: float = 0.0
    reflections: int = 0

    def __len__(self):
        return self.r.size

    def replace(self, **kw) -> "RadialEnsemble":
        return dataclasses.replace(self, **kw)

    @property
    def gamma(self):
        return np.sqrt(1.0 + self.pr**2 + self.ell2 / self.r**2)

    @classmethod
    def from_markers(cls, ens: ParticleEnsemble) -> "RadialEnsemble":
        x, p = ens.x, ens.p
        r = np.linalg.norm(x, axis=1)
        if np.any(r <= 0):
            raise ValueError("a marker sits at the origin; shells need r > 0")
        e1 = x / r[:, None]
        pr = np.einsum("ij,ij->i", e1, p)
        perp = p - pr[:, None] * e1
        ell = np.linalg.norm(perp, axis=1) * r
        # orbital plane: e2 along the transverse momentum, any normal if there is none
        e2 = perp.copy()
        flat = ell <= 1e-300
        if flat.any():
            trial = np.where(np.abs(e1[flat, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
            e2[flat] = trial - np.einsum("ij,ij->i", trial, e1[flat])[:, None] * e1[flat]
        e2 /= np.linalg.norm(e2, axis=1)[:, None]
        return cls(r, pr, ell * ell, ens.w.copy(), np.zeros_like(r), e1, e2, ens.t, 0)

    def positions(self):
        c, s = np.cos(self.phi)[:, None], np.sin(self.phi)[:, None]
        return self.r[:, None] * (c * self.e1 + s * self.e2)

    def momenta(self):
        c, s = np.cos(self.phi)[:, None], np.sin(self.phi)[:, None]
        rhat = c * self.e1 + s * self.e2
        that = -s * self.e1 + c * self.e2
        return self.pr[:, None] * rhat + (np.sqrt(self.ell2) / self.r)[:, None] * that

    def to_markers(self, f0_value=None) -> ParticleEnsemble:
        fv = np.zeros_like(self.w) if f0_value is None else f0_value
        return ParticleEnsemble(self.positions(), self.momenta(), self.w, fv, self.t)

    def energy(self, potential=None):
        """Per-shell sqrt(1 + p_r^2 + l^2/r^2) (+ potential(r) if given)."""
        e = self.gamma
        return e if potential is None else e + potential(self.r)


@dataclass(frozen=True)
class EnclosedCharge:
    """Charge inside radius r from radius-sorted cumulative shell weights."""

    radii: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_shells(cls, r, w):
        order = np.argsort(r, kind="stable")
        return cls(r[order], np.concatenate([[0.0], np.cumsum(w[order])]))

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    def __call__(self, r):
        """m(r): total weight of shells with radius strictly below r."""
        return self.cumulative[np.searchsorted(self.radii, r, side="left")]

    def field(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("radial field needs r > 0")
        return self(r) / (4.0 * np.pi * r * r)


def radial_field(ensemble: RadialEnsemble, r):
    """Outward field m(r) / (4 pi r^2) of the shell ensemble (positive charge repels)."""
    return EnclosedCharge.from_shells(ensemble.r, ensemble.w).field(r)


@nb.njit(cache=True)
def _enclosed_field(r, radii, cum, r0, w0):
    m = cum[np.searchsorted(radii, r)]
    if r0 < r:
        # the table was built with this shell at r0; a shell never feels its own charge
        m -= w0
    return m / (4.0 * np.pi * r * r)


@nb.njit(cache=True)
def _rhs(r, pr, ell2, ell, radii, cum, r0, w0, use_field):
    gam = np.sqrt(1.0 + pr * pr + ell2 / (r * r))
    e = _enclosed_field(r, radii, cum, r0, w0) if use_field else 0.0
    return pr / gam, ell2 / (r * r * r * gam) + e, ell / (gam * r * r)


@nb.njit(cache=True)
def _push_shells(r, pr, phi, ell2, w, radii, cum, dt, r_min, max_frac, use_field):
    count = 0
    for i in range(r.size):
        ri, pi, fi = r[i], pr[i], phi[i]
        l2 = ell2[i]
        li = np.sqrt(l2)
        r0, w0 = r[i], w[i]
        remaining = dt
        while remaining > 0.0:
            h = min(remaining, max_frac * ri) if ri > 0 else remaining
            h = max(h, 1e-3 * dt)
            if h > remaining:
                h = remaining
            k1r, k1p, k1f = _rhs(ri, pi, l2, li, radii, cum, r0, w0, use_field)
            r2 = max(ri + 0.5 * h * k1r, r_min)
            k2r, k2p, k2f = _rhs(r2, pi + 0.5 * h * k1p, l2, li, radii, cum, r0, w0, use_field)
            r3 = max(ri + 0.5 * h * k2r, r_min)
            k3r, k3p, k3f = _rhs(r3, pi + 0.5 * h * k2p, l2, li, radii, cum, r0, w0, use_field)
            r4 = max(ri + h * k3r, r_min)
            k4r, k4p, k4f = _rhs(r4, pi + h * k3p, l2, li, radii, cum, r0, w0, use_field)
            ri = ri + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
            pi = pi + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
            fi = fi + h / 6.0 * (k1f + 2 * k2f + 2 * k3f + k4f)
            if ri < r_min:
                # pass through the centre: mirror the radius, turn around, half a turn in angle
                ri = 2.0 * r_min - ri
                pi = -pi
                fi = fi + np.pi
                count += 1
            remaining -= h
        r[i], pr[i], phi[i] = ri, pi, fi
    return count


def push_radial(ensemble: RadialEnsemble, dt: float, with_field: bool = True, r_min: float | None = None,
                max_frac: float = 0.05) -> RadialEnsemble:
    """One step of the shell dynamics with the enclosed-charge table frozen at the start.

    dr/dt = p_r / gamma, dp_r/dt = l^2 / (r^3 gamma) + E(r), dphi/dt = l / (gamma r^2),
    gamma = sqrt(1 + p_r^2 + l^2 / r^2), where E(r) counts the other shells
    only.  Each shell takes RK4 substeps no
    longer than ``max_frac * r``.  Shells that would cross ``r_min`` are
    reflected and counted.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if r_min is None:
        r_min = 1e-6 * float(np.median(ensemble.r)) if len(ensemble) else 1e-6
    table = EnclosedCharge.from_shells(ensemble.r, ensemble.w)
    r, pr, phi = ensemble.r.copy(), ensemble.pr.copy(), ensemble.phi.copy()
    n = _push_shells(r, pr, phi, ensemble.ell2, ensemble.w, table.radii, table.cumulative, float(dt), float(r_min),
                     float(max_frac), bool(with_field))
    return ensemble.replace(r=r, pr=pr, phi=phi, t=ensemble.t + dt, reflections=ensemble.reflections + int(n))


# --------------------------------------------------------------------------
# projection and symmetry checks


def radial_projection_residual(j: GridField, kernel: FreeSpaceKernel | None = None) -> float:
    """|P j|_inf / |j|_inf (0 for j = 0)."""
    nj = j.sup()
    if nj == 0:
        return 0.0
    return helmholtz_project(j, kernel, warn_noncompact=False).sup() / nj


def _reflect_axis(a, axis):
    """u(x) -> u(x with x_axis negated) on the padded grid centred at index N/2."""
    return np.roll(np.flip(a, axis=axis), 1, axis=axis)


def transform_grid(values: np.ndarray, Q: np.ndarray, kind: str = "scalar") -> np.ndarray:
    """Pull back a gridded field by a signed permutation Q.

    Returns G(x) = F(Q^T x) for scalars, Q F(Q^T x) for vectors and
    det(Q) Q F(Q^T x) for pseudovectors; ``values`` has shape (C, N, N, N).
    """
    Q = np.asarray(Q)
    # (Q^T x)_c = sum_r Q[r, c] x_r; for signed permutations each column c has one row r.
    rows = np.argmax(np.abs(Q), axis=0)
    signs = Q[rows, np.arange(3)]
    # spatial axis c of F must become axis rows[c] of G
    order = np.empty(3, dtype=int)
    order[rows] = np.arange(3)
    G = np.transpose(values, (0, *(1 + order)))
    for c in range(3):
        if signs[c] < 0:
            G = _reflect_axis(G, 1 + rows[c])
    if kind == "scalar":
        return np.ascontiguousarray(G)
    if kind not in ("vector", "pseudovector"):
        raise ValueError(f"unknown field kind {kind!r}")
    out = np.einsum("ab,b...->a...", Q.astype(float), G)
    if kind == "pseudovector":
        out *= round(np.linalg.det(Q))
    return out


def symmetry_deviation(field: GridField, Q, kind: str | None = None) -> float:
    """|F - T_Q F|_inf / |F|_inf over the physical box (0 for F = 0)."""
    if kind is None:
        kind = "scalar" if field.components == 1 else "vector"
    ref = field.sup()
    if ref == 0:
        return 0.0
    d = field.like(field.values - transform_grid(field.values, Q, kind))
    return d.sup() / ref


def max_symmetry_deviation(field: GridField, kind: str | None = None) -> float:
    """Largest deviation over all 48 signed axis permutations."""
    return max(symmetry_deviation(field, Q, kind) for Q in signed_permutations())
