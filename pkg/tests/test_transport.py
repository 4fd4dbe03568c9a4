import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasov_darwin.core_state import GridField, MarkerEscapeError, ParticleEnsemble, velocity_jacobian
from vlasov_darwin.fields import FieldState
from vlasov_darwin.transport import (
    Trajectory, VariationalState, boris_kick, free_stream, integrate_variational, jacobian_determinant_check,
    push_markers, variational_matrix,
)


def gyro_period_error(dt, p0=1.5, b0=2.0, turns=3):
    """Relative error of the measured gyration period against 2 pi gamma / B."""
    gam = np.sqrt(1 + p0**2)
    exact = 2 * np.pi * gam / b0
    p = np.array([[p0, 0.0, 0.0]])
    e, b = np.zeros((1, 3)), np.array([[0.0, 0.0, b0]])
    angle, t = 0.0, 0.0
    prev = 0.0
    while True:
        q = boris_kick(p, e, b, dt)
        step = np.arctan2(np.cross(p[0], q[0])[2], p[0] @ q[0])
        p, t = q, t + dt
        angle += abs(step)
        if angle >= 2 * np.pi * turns:
            # interpolate the crossing within the last step
            frac = (2 * np.pi * turns - prev) / (angle - prev)
            return abs((t - dt + frac * dt) / turns - exact) / exact, p
        prev = angle


class TestBoris:
    def test_pure_magnetic_rotation_keeps_momentum(self):
        rng = np.random.default_rng(2)
        p = rng.normal(size=(100, 3)) * 5
        b = rng.normal(size=(100, 3)) * 3
        q = boris_kick(p, np.zeros_like(p), b, 0.3)
        assert np.allclose(np.linalg.norm(q, axis=1), np.linalg.norm(p, axis=1), rtol=1e-14)

    def test_gyration_period_second_order(self):
        errs = [gyro_period_error(dt)[0] for dt in (0.2, 0.1, 0.05)]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(np.abs(orders - 2) < 0.1)
        assert errs[-1] < 1e-3

    def test_pure_electric_kick(self):
        p = np.array([[0.1, 0.0, -0.2]])
        e = np.array([[1.0, 2.0, 0.5]])
        assert np.allclose(boris_kick(p, e, np.zeros((1, 3)), 0.25), p + 0.25 * e, atol=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 1.0), st.lists(st.floats(-10, 10), min_size=6, max_size=6))
    def test_speed_limit(self, dt, pe):
        p = np.array([pe[:3]])
        e = np.array([pe[3:]])
        ens = ParticleEnsemble(np.zeros((1, 3)), p, np.ones(1), np.ones(1), 0.0)
        tmpl = GridField.zeros(8, 100.0, 3)
        tmpl.values[:] = e[0][:, None, None, None]
        st_ = FieldState(tmpl.zeros_like(1), tmpl.zeros_like(3), tmpl, tmpl.zeros_like(3), tmpl.zeros_like(3))
        out = push_markers(ens, st_, dt)
        assert np.linalg.norm(out.x - ens.x) < dt


class TestPush:
    def test_free_drift(self):
        x = np.array([[0.1, 0.2, 0.3]])
        p = np.array([[1.0, 0.0, 0.0]])
        ens = ParticleEnsemble(x, p, np.ones(1), np.ones(1), 0.0)
        out = push_markers(ens, None, 0.5, extent=10.0)
        assert np.allclose(out.x, x + 0.5 * p / np.sqrt(2), rtol=1e-15)
        assert out.t == 0.5 and out.w is ens.w

    def test_escape(self):
        ens = ParticleEnsemble(np.array([[0.0, 0, 0.95]]), np.array([[0.0, 0, 10.0]]), np.ones(1), np.ones(1), 1.0)
        with pytest.raises(MarkerEscapeError) as err:
            push_markers(ens, None, 0.5, extent=1.0)
        assert err.value.t == 1.5

    def test_free_stream_is_exact_composition(self):
        rng = np.random.default_rng(0)
        ens = ParticleEnsemble(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)), np.ones(50), np.ones(50), 0.0)
        a = free_stream(ens, 7.0)
        b = free_stream(free_stream(ens, 3.0), 7.0)
        assert np.allclose(a.x, b.x, atol=1e-13)


class TestVariational:
    def test_terminal_state(self):
        s = VariationalState.terminal(4, 2.0)
        assert np.array_equal(s.dX_dx[0], np.eye(3)) and np.array_equal(s.dP_dp[0], np.eye(3))
        assert not s.dX_dp.any() and not s.dP_dx.any() and s.s == 2.0
        assert np.array_equal(VariationalState.from_block(s.as_block(), 2.0).as_block(), s.as_block())

    def test_free_stream_closed_form(self):
        rng = np.random.default_rng(5)
        m, dt, t = 64, 0.5, 10.0
        p = rng.normal(size=(m, 3))
        traj = Trajectory(np.arange(m), dt)
        for k in range(int(t / dt) + 1):
            traj.record(k * dt, np.zeros((m, 3)), p)
        out = integrate_variational(VariationalState.terminal(m, t), traj)
        assert np.allclose(out.dX_dp, -t * velocity_jacobian(p), rtol=1e-13, atol=1e-13)
        rep = jacobian_determinant_check(out, t, p)
        assert np.allclose(np.abs(rep.det_dpX), rep.free_stream_value, rtol=1e-10)
        assert rep.passed and rep.margin == pytest.approx(8.0, rel=1e-10)

    def test_constant_magnetic_field_matches_expm(self):
        from scipy.linalg import expm
        p = np.array([[0.3, -0.2, 0.4]])
        b = np.array([[0.0, 0.0, 0.7]])
        z = np.zeros((1, 3, 3))
        # frozen-coefficient linear system: compare RK4 against the matrix exponential
        C = variational_matrix(p, b, z, z)
        traj = Trajectory(np.arange(1), 0.05)
        for k in range(41):
            traj.record(k * 0.05, np.zeros((1, 3)), p, b=b)
        out = integrate_variational(VariationalState.terminal(1, 2.0), traj)
        want = expm(-2.0 * C[0]) @ VariationalState.terminal(1, 2.0).as_block()[0]
        assert np.allclose(out.as_block()[0], want, atol=1e-9)

    def test_report_rejects_early_time(self):
        with pytest.raises(ValueError):
            jacobian_determinant_check(VariationalState.terminal(1, 0.5), 0.5, np.zeros(3))
        with pytest.raises(ValueError):
            jacobian_determinant_check(VariationalState.terminal(1, 2.0), 2.0, np.zeros(3), beta=1.0)
