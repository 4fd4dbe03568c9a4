"""Marker transport along relativistic characteristics and their linearization.

Markers follow dX/ds = v(P), dP/ds = E + v(P) x B with the relativistic Boris
scheme.  For the determinant diagnostic a handful of markers additionally
carry the derivative matrices of the backward flow, obtained by integrating
the variational equations from s = t down to s = 0 with RK4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_state import ParticleEnsemble, check_inside, relativistic_velocity, velocity_jacobian
from .fields import FieldState, gather_fields


def boris_kick(p, e, b, dt):
    """Velocity update of the relativistic Boris scheme (unit charge, mass and c).

    Half electric kick, rotation about B with angle set by the half-kicked
    momentum, second half kick.  The rotation is norm preserving.
    """
    pm = p + 0.5 * dt * e
    gam = np.sqrt(1.0 + np.einsum("ij,ij->i", pm, pm))[:, None]
    t = 0.5 * dt * b / gam
    s = 2.0 * t / (1.0 + np.einsum("ij,ij->i", t, t))[:, None]
    pp = pm + np.cross(pm, t)
    pplus = pm + np.cross(pp, s)
    return pplus + 0.5 * dt * e


def drift(x, p, dt):
    return x + dt * relativistic_velocity(p)


def push_markers(ensemble: ParticleEnsemble, field_state: FieldState | None, dt: float,
                 extent: float | None = None) -> ParticleEnsemble:
    """Advance all markers by one step: kick with fields at x^n, then drift.

    ``field_state=None`` means free streaming (no kick).  Weights and
    ``f0_value`` are carried over unchanged (the same array objects).
    Markers must stay inside ``extent`` (default: the field grid's box).
    """
    x, p = ensemble.x, ensemble.p
    if field_state is not None:
        e, b = gather_fields(x, field_state.e_total, field_state.b, t=ensemble.t)
        p = boris_kick(p, e, b, dt)
    x = drift(x, p, dt)
    t_new = ensemble.t + dt
    if extent is None:
        extent = field_state.e_l.extent if field_state is not None else np.inf
    check_inside(x, extent, t_new)
    return ensemble.replace(x=x, p=p, t=t_new)


def free_stream(ensemble: ParticleEnsemble, t: float, extent=np.inf) -> ParticleEnsemble:
    """Exact free transport to time ``t``: x + (t - t0) v(p)."""
    x = drift(ensemble.x, ensemble.p, t - ensemble.t)
    check_inside(x, extent, t)
    return ensemble.replace(x=x, t=t)


@dataclass
class CharacteristicState:
    x: np.ndarray
    p: np.ndarray
    s: float


@dataclass
class VariationalState:
    """Derivatives of (X, P)(s; t, x, p) with respect to the data (x, p) at time t.

    Arrays have shape (M, 3, 3), one matrix per tracked marker.
    """

    dX_dp: np.ndarray
    dP_dp: np.ndarray
    dX_dx: np.ndarray
    dP_dx: np.ndarray
    s: float = 0.0

    @classmethod
    def terminal(cls, m: int, t: float) -> "VariationalState":
        eye = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
        zero = np.zeros((m, 3, 3))
        return cls(zero, eye, eye.copy(), zero.copy(), t)

    def as_block(self):
        top = np.concatenate([self.dX_dp, self.dX_dx], axis=2)
        bot = np.concatenate([self.dP_dp, self.dP_dx], axis=2)
        return np.concatenate([top, bot], axis=1)

    @classmethod
    def from_block(cls, Y, s):
        return cls(Y[:, :3, :3].copy(), Y[:, 3:, :3].copy(), Y[:, :3, 3:].copy(), Y[:, 3:, 3:].copy(), s)


@dataclass
class Trajectory:
    """Samples along tracked characteristics at t_0, t_0 + dt, ...

    Each list entry holds arrays for all tracked markers: positions,
    momenta, E, B and their spatial derivative matrices (d_b F_a) at the
    markers.
    """

    indices: np.ndarray
    dt: float
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    p: list = field(default_factory=list)
    e: list = field(default_factory=list)
    b: list = field(default_factory=list)
    grad_e: list = field(default_factory=list)
    grad_b: list = field(default_factory=list)

    def record(self, t, x, p, e=None, b=None, grad_e=None, grad_b=None):
        m = x.shape[0]
        z3, z33 = np.zeros((m, 3)), np.zeros((m, 3, 3))
        self.t.append(float(t))
        self.x.append(np.array(x, dtype=float))
        self.p.append(np.array(p, dtype=float))
        self.e.append(z3 if e is None else np.asarray(e, dtype=float))
        self.b.append(z3 if b is None else np.asarray(b, dtype=float))
        self.grad_e.append(z33 if grad_e is None else np.asarray(grad_e, dtype=float).reshape(m, 3, 3))
        self.grad_b.append(z33 if grad_b is None else np.asarray(grad_b, dtype=float).reshape(m, 3, 3))

    def record_from_grids(self, ensemble: ParticleEnsemble, state: FieldState | None, grad_e=None, grad_b=None):
        """Sample the tracked markers and the (gridded) fields at their positions."""
        x = ensemble.x[self.indices]
        p = ensemble.p[self.indices]
        if state is None:
            self.record(ensemble.t, x, p)
            return
        grids = [state.e_total, state.b]
        if grad_e is not None:
            grids += [grad_e, grad_b]
        vals = gather_fields(x, *grids, t=ensemble.t)
        if grad_e is None:
            self.record(ensemble.t, x, p, vals[0], vals[1])
        else:
            self.record(ensemble.t, x, p, *vals)

    def __len__(self):
        return len(self.t)


def _cross_matrix(b):
    """[b]_x with [b]_x u = b x u, for b of shape (M, 3)."""
    z = np.zeros(b.shape[0])
    return np.stack([
        np.stack([z, -b[:, 2], b[:, 1]], axis=-1),
        np.stack([b[:, 2], z, -b[:, 0]], axis=-1),
        np.stack([-b[:, 1], b[:, 0], z], axis=-1),
    ], axis=1)


def variational_matrix(p, b, grad_e, grad_b):
    """Coefficient C(s) of dY/ds = C Y for Y = [[dX], [dP]] (M, 6, 6).

    C = [[0, Dv(P)], [d_x K, d_p K]] with K = E + v(P) x B, so that
    d_x K = DE + (v x d_b B)_b and d_p K = -[B]_x Dv(P).
    """
    m = p.shape[0]
    Dv = velocity_jacobian(p)
    v = relativistic_velocity(p)
    # column b of d_x(v x B) is v x (d_b B); grad_b[:, a, b] = d_b B_a
    dxK = grad_e + np.cross(v[:, None, :], np.swapaxes(grad_b, 1, 2)).swapaxes(1, 2)
    dpK = -np.einsum("mij,mjk->mik", _cross_matrix(b), Dv)
    C = np.zeros((m, 6, 6))
    C[:, :3, 3:] = Dv
    C[:, 3:, :3] = dxK
    C[:, 3:, 3:] = dpK
    return C


def integrate_variational(initial: VariationalState, trajectory: Trajectory, dt: float | None = None) -> VariationalState:
    """Transport the derivative matrices backward from the last trajectory sample to the first.

    Classical RK4 on dY/ds = C(s) Y with C at the recorded samples and its
    midpoint value taken as the average of the two neighbours.  With zero
    fields C is nilpotent and the result is exact: dX/dp = -t Dv(p).
    """
    if len(trajectory) < 1:
        raise ValueError("empty trajectory")
    dt = trajectory.dt if dt is None else dt
    Cs = [variational_matrix(p, b, ge, gb) for p, b, ge, gb in
          zip(trajectory.p, trajectory.b, trajectory.grad_e, trajectory.grad_b)]
    Y = initial.as_block()
    h = -dt

    def mul(C, Z):
        return np.einsum("mij,mjk->mik", C, Z)

    for n in range(len(Cs) - 1, 0, -1):
        C1, C3 = Cs[n], Cs[n - 1]
        C2 = 0.5 * (C1 + C3)
        k1 = mul(C1, Y)
        k2 = mul(C2, Y + 0.5 * h * k1)
        k3 = mul(C2, Y + 0.5 * h * k2)
        k4 = mul(C3, Y + h * k3)
        Y = Y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return VariationalState.from_block(Y, trajectory.t[0])


@dataclass
class JacobianReport:
    t: float
    det_dpX: np.ndarray
    lower_bound: np.ndarray
    beta: float
    free_stream_value: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.det_dpX) >= self.lower_bound))

    @property
    def margin(self) -> float:
        """Smallest |det| / floor over the tracked markers."""
        return float(np.min(np.abs(self.det_dpX) / self.lower_bound))


def jacobian_determinant_check(var_state: VariationalState, t: float, p, beta: float = 0.5) -> JacobianReport:
    """Compare |det dX/dp (0; t, x, p)| with (1 - beta)^3 t^3 (1 + |p|^2)^(-5/2).

    ``p`` are the momenta at time t of the tracked markers.
    """
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if t < 1:
        raise ValueError("the determinant floor is stated for t >= 1")
    p = np.atleast_2d(np.asarray(p, dtype=float))
    det = np.linalg.det(var_state.dX_dp)
    closed = t**3 * (1.0 + np.sum(p * p, axis=-1)) ** -2.5
    return JacobianReport(float(t), det, (1.0 - beta) ** 3 * closed, float(beta), closed)
