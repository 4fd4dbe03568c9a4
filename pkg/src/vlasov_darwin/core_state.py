"""Phase-space data, initial data, relativistic kinematics and moment deposition.

The distribution function is represented by weighted markers.  Grid
quantities live on a zero-padded periodic lattice (see :class:`GridField`)
whose central block of ``n`` cells is the physical box ``[-L, L]^3``.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.stats import qmc

from . import _kernels

MODES = ("darwin", "free_stream", "electrostatic", "radial_reference")


class MarkerEscapeError(RuntimeError):
    """A marker left the physical box; the box is too small for the run."""

    def __init__(self, index, position, t):
        self.index = int(index)
        self.position = np.asarray(position)
        self.t = float(t)
        super().__init__(
            f"marker {self.index} at x={self.position.tolist()} left the box at t={self.t:g}"
        )


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose derived from ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class SimConfig:
    R0: float = 1.0
    P0: float = 1.0
    amplitude: float = 1e-3
    grid_n: int = 32
    box_half_width: float = 11.0
    dt: float = 0.5
    t_end: float = 10.0
    particle_count: int = 100_000
    mode: str = "darwin"
    fixed_point_tol: float = 1e-8
    fixed_point_max_iter: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (self.R0 > 0 and self.P0 > 0):
            raise ValueError("R0 and P0 must be positive")
        if not (0 < self.amplitude <= 1):
            raise ValueError(f"amplitude must lie in (0, 1], got {self.amplitude}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        n = int(self.grid_n)
        if n != self.grid_n or n < 16 or n & (n - 1):
            raise ValueError(f"grid_n must be a power of two >= 16, got {self.grid_n}")
        if self.box_half_width < self.R0 + self.t_end:
            raise ValueError(
                f"box_half_width={self.box_half_width} does not cover B(R0 + t_end)"
                f" = {self.R0 + self.t_end}"
            )
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.fixed_point_tol > 0 or self.fixed_point_max_iter < 1:
            raise ValueError("fixed-point tolerance and iteration cap must be positive")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# --------------------------------------------------------------------------
# initial data


def bump(s):
    """Mollifier profile exp(1 - 1/(1 - s^2)) on s < 1, zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    q = 1.0 - si * si
    out[inside] = np.exp(1.0 - 1.0 / q) * (-2.0 * si / (q * q))
    return out


def _unit_gradient_sup(R0, P0):
    """sup over phase space of |grad f| for the unit-amplitude product bump."""

    def norm(ab):
        a, b = ab
        ga, gb = bump(a), bump(b)
        da, db = bump_derivative(a), bump_derivative(b)
        return float(np.hypot(da * gb / R0, ga * db / P0))

    s = np.linspace(0.0, 0.999, 400)
    A, B = np.meshgrid(s, s, indexing="ij")
    vals = np.hypot(bump_derivative(A) * bump(B) / R0, bump(A) * bump_derivative(B) / P0)
    k = np.unravel_index(np.argmax(vals), vals.shape)
    res = optimize.minimize(
        lambda ab: -norm(ab), x0=[A[k], B[k]], bounds=[(0, 0.9999), (0, 0.9999)],
        method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12},
    )
    return max(-res.fun, vals[k])


def _radial_bump_mass(R):
    val, _ = integrate.quad(lambda s: s * s * float(bump(s)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 4.0 * np.pi * R**3 * val


@dataclass(frozen=True)
class InitialDatum:
    """f0(x, p) = amplitude * g(|x|/R0) * g(|p|/P0).

    ``amplitude`` is the effective sup value after normalisation;
    ``requested_amplitude`` is what the configuration asked for.
    """

    R0: float
    P0: float
    amplitude: float
    requested_amplitude: float
    gradient_sup: float

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        rx = np.linalg.norm(x, axis=-1) / self.R0
        rp = np.linalg.norm(p, axis=-1) / self.P0
        return self.amplitude * bump(rx) * bump(rp)

    def gradient(self, x, p):
        """Joint gradient (d/dx, d/dp) with shape (..., 6)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        nx = np.linalg.norm(x, axis=-1, keepdims=True)
        np_ = np.linalg.norm(p, axis=-1, keepdims=True)
        ux = np.divide(x, nx, out=np.zeros_like(x), where=nx > 0)
        up = np.divide(p, np_, out=np.zeros_like(p), where=np_ > 0)
        ax, ap = nx / self.R0, np_ / self.P0
        gx = self.amplitude * bump_derivative(ax) / self.R0 * bump(ap) * ux
        gp = self.amplitude * bump(ax) * bump_derivative(ap) / self.P0 * up
        return np.concatenate([gx, gp], axis=-1)

    def total_mass(self) -> float:
        """Integral of f0 over phase space (1D quadratures of the radial profiles)."""
        return self.amplitude * _radial_bump_mass(self.R0) * _radial_bump_mass(self.P0)


def build_initial_datum(config: SimConfig) -> InitialDatum:
    """Smooth compactly supported datum satisfying f >= 0, sup f <= 1, sup|grad f| <= 1.

    The requested amplitude is reduced when the gradient constraint would
    otherwise be violated.
    """
    delta = float(config.amplitude)
    if not (0 < delta <= 1):
        raise ValueError(f"amplitude must lie in (0, 1], got {delta}")
    gsup = _unit_gradient_sup(config.R0, config.P0)
    if not np.isfinite(gsup) or gsup <= 0:
        raise ValueError("gradient bound of the initial datum cannot be enforced")
    eff = min(delta, 1.0 / gsup)
    return InitialDatum(config.R0, config.P0, eff, delta, eff * gsup)


# --------------------------------------------------------------------------
# markers


@dataclass(frozen=True)
class ParticleEnsemble:
    x: np.ndarray
    p: np.ndarray
    w: np.ndarray
    f0_value: np.ndarray
    t: float = 0.0

    def __len__(self):
        return self.w.shape[0]

    @property
    def total_charge(self) -> float:
        return float(np.sum(self.w))

    def replace(self, **changes) -> "ParticleEnsemble":
        return dataclasses.replace(self, **changes)


def signed_permutations():
    """The 48 signed axis permutations (the symmetry group of the cube)."""
    import itertools

    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            Q = np.zeros((3, 3), dtype=int)
            for row, (col, s) in enumerate(zip(perm, signs)):
                Q[row, col] = s
            mats.append(Q)
    return mats


def sample_particles(f0: InitialDatum, config: SimConfig, symmetric: bool = False) -> ParticleEnsemble:
    """Quasi-uniform markers over supp f0 with weights f0 * dV.

    Points of a scrambled Sobol sequence (seeded from ``config.seed``) fill the
    box [-R0, R0]^3 x [-P0, P0]^3; those outside the support are rejected and
    dV = box volume / number of candidates consumed.  With ``symmetric=True``
    every accepted point is replaced by its 48 images under the signed axis
    permutations acting jointly on (x, p); the marker count is then a
    multiple of 48.
    """
    target = int(config.particle_count)
    if symmetric:
        target = -(-target // 48)
    rng = rng_stream(config.seed, "sampling")
    sob = qmc.Sobol(d=6, scramble=True, seed=rng)
    scale = np.array([f0.R0] * 3 + [f0.P0] * 3)
    chunks, consumed, have = [], 0, 0
    while have < target:
        m = min(1 << 20, max(1 << 14, 1 << int(np.ceil(np.log2(4 * (target - have))))))
        u = sob.random(m)
        z = (2.0 * u - 1.0) * scale
        x, p = z[:, :3], z[:, 3:]
        val = f0(x, p)
        keep = np.flatnonzero(val > 0)
        need = target - have
        if keep.size > need:
            consumed += int(keep[need - 1]) + 1
            keep = keep[:need]
        else:
            consumed += m
        chunks.append((x[keep], p[keep], val[keep]))
        have += keep.size
    x = np.concatenate([c[0] for c in chunks])
    p = np.concatenate([c[1] for c in chunks])
    val = np.concatenate([c[2] for c in chunks])
    dV = np.prod(2.0 * scale) / consumed
    if symmetric:
        mats = signed_permutations()
        x = np.concatenate([x @ Q.T for Q in mats])
        p = np.concatenate([p @ Q.T for Q in mats])
        val = np.tile(val, len(mats))
        dV = dV / len(mats)
    return ParticleEnsemble(
        x=np.ascontiguousarray(x), p=np.ascontiguousarray(p), w=val * dV, f0_value=val.copy(), t=0.0
    )


# --------------------------------------------------------------------------
# kinematics


def relativistic_velocity(p):
    """v(p) = p / sqrt(1 + |p|^2) for p of shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    return p / np.sqrt(1.0 + np.sum(p * p, axis=-1, keepdims=True))


def velocity_jacobian(p):
    """Dv(p) = (I - p p^T / (1 + |p|^2)) / sqrt(1 + |p|^2), shape (..., 3, 3)."""
    p = np.asarray(p, dtype=float)
    g2 = 1.0 + np.sum(p * p, axis=-1)[..., None, None]
    outer = p[..., :, None] * p[..., None, :]
    return (np.eye(3) - outer / g2) / np.sqrt(g2)


# --------------------------------------------------------------------------
# grids


@dataclass
class GridField:
    """Node-centred samples on a zero-padded periodic lattice.

    ``values`` has shape ``(components, N, N, N)`` with ``N = pad_factor * n``
    and axis order (x, y, z).  Node ``m`` sits at ``(m - N/2) * h`` with
    ``h = 2 * extent / n``; the physical box ``[-extent, extent]^3`` is the
    ``(n + 1)^3`` block returned by :attr:`interior`.
    """

    values: np.ndarray
    extent: float
    n: int
    pad_factor: int = 2

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError("values must have shape (components, N, N, N)")
        if self.pad_factor < 2:
            raise ValueError("pad_factor must be >= 2")
        N = self.pad_factor * self.n
        if self.values.shape[1:] != (N, N, N):
            raise ValueError(f"expected spatial shape {(N, N, N)}, got {self.values.shape[1:]}")
        if self.values.shape[0] not in (1, 3, 9):
            raise ValueError("components must be 1, 3 or 9")

    @classmethod
    def zeros(cls, n, extent, components=1, pad_factor=2):
        N = pad_factor * n
        return cls(np.zeros((components, N, N, N)), float(extent), int(n), int(pad_factor))

    def like(self, values) -> "GridField":
        values = np.asarray(values, dtype=float)
        if values.ndim == 3:
            values = values[None]
        return GridField(values, self.extent, self.n, self.pad_factor)

    def zeros_like(self, components=None) -> "GridField":
        c = self.components if components is None else components
        return GridField.zeros(self.n, self.extent, c, self.pad_factor)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.pad_factor * self.n

    @property
    def h(self) -> float:
        return 2.0 * self.extent / self.n

    @property
    def lo(self) -> float:
        """Coordinate of padded node 0."""
        return -(self.N // 2) * self.h

    @property
    def interior_slice(self):
        a = self.N // 2 - self.n // 2
        return slice(a, a + self.n + 1)

    @property
    def interior(self) -> np.ndarray:
        s = self.interior_slice
        return self.values[:, s, s, s]

    def coordinates(self, interior=False):
        """1D node coordinates along each axis."""
        x = (np.arange(self.N) - self.N // 2) * self.h
        return x[self.interior_slice] if interior else x

    def mesh(self, interior=False):
        x = self.coordinates(interior)
        return np.meshgrid(x, x, x, indexing="ij")

    def same_grid(self, other) -> bool:
        return (self.n, self.pad_factor) == (other.n, other.pad_factor) and np.isclose(
            self.extent, other.extent, rtol=1e-14, atol=0
        )

    def pointwise_norm(self, interior=True) -> np.ndarray:
        v = self.interior if interior else self.values
        if self.components == 1:
            return np.abs(v[0])
        return np.sqrt(np.sum(v * v, axis=0))

    def sup(self, interior=True) -> float:
        """Grid maximum of the pointwise Euclidean (Frobenius) norm."""
        return float(self.pointwise_norm(interior).max())

    def integral(self) -> float:
        return float(self.values[0].sum() * self.h**3)

    def boundary_max(self) -> float:
        """Largest pointwise norm on the faces of the physical box."""
        a = self.pointwise_norm(interior=True)
        return float(max(a[0].max(), a[-1].max(), a[:, 0].max(), a[:, -1].max(),
                         a[:, :, 0].max(), a[:, :, -1].max()))

    def sample(self, x) -> np.ndarray:
        """Trilinear interpolation at points ``x`` (M, 3) -> (M, components)."""
        x = np.ascontiguousarray(x, dtype=float)
        check_inside(x, self.extent)
        out = np.empty((x.shape[0], self.components))
        _kernels.gather(x, self.values, self.lo, self.h, out)
        return out


def check_inside(x, extent, t=0.0):
    """Raise :class:`MarkerEscapeError` for the first point with |x_a| >= extent."""
    bad = np.abs(x) >= extent
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        raise MarkerEscapeError(i, x[i], t)


@dataclass
class Moments:
    rho: GridField
    j: GridField | None = None
    M: GridField | None = None

    @property
    def template(self) -> GridField:
        return self.rho


_SYM = ((0, 1, 2), (1, 3, 4), (2, 4, 5))


def deposit_moments(ensemble: ParticleEnsemble, template: GridField, current=True, tensor=True) -> Moments:
    """Cloud-in-cell deposition of rho, j and M = int f v (x) v dp.

    Densities are divided by the cell volume so that the grid sum times
    h^3 reproduces the total weight.
    """
    x = np.ascontiguousarray(ensemble.x)
    check_inside(x, template.extent, ensemble.t)
    N = template.N
    rho = np.zeros((N, N, N))
    j = np.zeros((3 if current else 0, N, N, N))
    m6 = np.zeros((6 if tensor else 0, N, N, N))
    _kernels.deposit_moments(
        x, np.ascontiguousarray(ensemble.p), np.ascontiguousarray(ensemble.w),
        template.lo, template.h, rho, j, m6,
    )
    inv = 1.0 / template.h**3
    rho *= inv
    out = Moments(rho=template.like(rho))
    if current:
        j *= inv
        out.j = template.like(j)
    if tensor:
        m6 *= inv
        M = np.empty((9, N, N, N))
        for a in range(3):
            for b in range(3):
                M[3 * a + b] = m6[_SYM[a][b]]
        out.M = template.like(M)
    return out


def deposit_vectors(x, q, template: GridField, t=0.0) -> GridField:
    """Cloud-in-cell deposition of per-marker vectors ``q`` (M, C), per unit volume."""
    x = np.ascontiguousarray(x, dtype=float)
    check_inside(x, template.extent, t)
    q = np.ascontiguousarray(q, dtype=float)
    out = np.zeros((q.shape[1], template.N, template.N, template.N))
    _kernels.deposit_vectors(x, q, template.lo, template.h, out)
    out /= template.h**3
    return template.like(out)
