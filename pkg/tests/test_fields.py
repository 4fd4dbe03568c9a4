import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from vlasov_darwin.core_state import GridField, Moments, ParticleEnsemble, deposit_moments
from vlasov_darwin.fields import (
    CUBE_INVERSE_DISTANCE, FixedPointDivergence, FreeSpaceKernel, KernelMismatch, compute_electrostatic,
    compute_vector_potential, g2_integrand, helmholtz_project, helmholtz_project_free_space, project_periodic,
    solve_darwin_fields, solve_poisson_free_space, solve_transverse_field, spectral_curl, spectral_divergence,
    spectral_gradient, spectral_jacobian, spectral_laplacian, row_divergence,
)


@pytest.fixture(scope="module")
def kernel():
    return FreeSpaceKernel(32, 4.0)


def gaussian(tmpl, sigma=0.4, c=(0.0, 0.0, 0.0)):
    X, Y, Z = tmpl.mesh()
    r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
    return tmpl.zeros_like(1).like(np.exp(-r2 / (2 * sigma**2)) / (2 * np.pi * sigma**2) ** 1.5)


def gaussian_potential(r, sigma=0.4):
    r = np.where(r == 0, 1e-300, r)
    small = r < 1e-8
    phi = -erf(r / (np.sqrt(2) * sigma)) / (4 * np.pi * r)
    return np.where(small, -1.0 / (4 * np.pi) * np.sqrt(2 / np.pi) / sigma, phi)


def test_cube_constant():
    # mean of 1/|x| over the unit cube centred at 0 (2D quadrature of asinh(1/2|y|))
    assert CUBE_INVERSE_DISTANCE == pytest.approx(2.380077363979553, rel=1e-12)


class TestPoisson:
    def test_gaussian_potential(self, kernel):
        rho = gaussian(kernel.template())
        phi = solve_poisson_free_space(rho, kernel)
        X, Y, Z = rho.mesh()
        exact = gaussian_potential(np.sqrt(X**2 + Y**2 + Z**2))
        err = rho.like(phi.values[0] - exact).sup() / np.abs(exact).max()
        assert err < 1e-8

    def test_gaussian_field_is_repulsive(self, kernel):
        rho = gaussian(kernel.template())
        _, e = compute_electrostatic(Moments(rho), kernel)
        X, Y, Z = rho.mesh()
        r = np.sqrt(X**2 + Y**2 + Z**2)
        s = 0.4
        safe = np.where(r == 0, 1.0, r)
        mag = (erf(safe / (np.sqrt(2) * s)) - np.sqrt(2 / np.pi) * safe / s * np.exp(-safe**2 / (2 * s * s))) / (
            4 * np.pi * safe**2)
        exact = np.stack([mag * X / safe, mag * Y / safe, mag * Z / safe])
        exact[:, r == 0] = 0
        # sigma = 1.6 h: the Gaussian's tail beyond the grid band sets the error
        assert e.like(e.values - exact).sup() / e.sup() < 1e-6
        # outward on the positive x axis
        i = e.N // 2
        assert e.values[0, i + 3, i, i] > 0

    def test_uniform_ball(self, kernel):
        tmpl = kernel.template()
        X, Y, Z = tmpl.mesh()
        r = np.sqrt(X**2 + Y**2 + Z**2)
        a, Q = 1.5, 2.0
        inside = (r < a).astype(float)
        rho = tmpl.like(inside * Q / (inside.sum() * tmpl.h**3))
        _, e = compute_electrostatic(Moments(rho), kernel)
        mag = np.sqrt((e.values**2).sum(0))
        # the ball's edge is not band-limited, so spectral ringing sets the tolerance
        far = (r > a + 4 * tmpl.h) & (r < 3.5)
        assert np.allclose(mag[far], Q / (4 * np.pi * r[far] ** 2), rtol=4e-2)
        core = r < a - 3 * tmpl.h
        assert np.allclose(mag[core], Q * r[core] / (4 * np.pi * a**3), rtol=0.1, atol=2e-3 * Q / a**2)

    def test_zero_source(self, kernel):
        phi = solve_poisson_free_space(kernel.template(), kernel)
        assert not phi.values.any()

    def test_laplacian_inverts(self, kernel):
        rho = gaussian(kernel.template(), 0.5, (0.3, -0.2, 0.1))
        phi = solve_poisson_free_space(rho, kernel)
        back = spectral_laplacian(phi)
        assert rho.like(back.values - rho.values).sup() / rho.sup() < 1e-8

    def test_cell_average_kernel_is_coarser(self):
        k = FreeSpaceKernel(32, 4.0, method="cell_average")
        rho = gaussian(k.template())
        phi = solve_poisson_free_space(rho, k)
        X, Y, Z = rho.mesh()
        exact = gaussian_potential(np.sqrt(X**2 + Y**2 + Z**2))
        err = rho.like(phi.values[0] - exact).sup() / np.abs(exact).max()
        assert 1e-4 < err < 3e-2

    def test_mismatched_grid(self, kernel):
        with pytest.raises(KernelMismatch):
            solve_poisson_free_space(GridField.zeros(32, 5.0, 1), kernel)

    def test_bad_options(self):
        with pytest.raises(ValueError):
            FreeSpaceKernel(16, 2.0, pad_factor=1)
        with pytest.raises(ValueError):
            FreeSpaceKernel(16, 2.0, method="fmm")


class TestOperators:
    def test_gradient_of_gaussian(self, kernel):
        g = gaussian(kernel.template(), 0.6)
        G = spectral_gradient(g)
        X, _, _ = g.mesh()
        exact = -X / 0.36 * g.values[0]
        assert np.abs(G.values[0] - exact).max() / np.abs(exact).max() < 1e-9

    def test_curl_of_gradient_and_div_of_curl(self, kernel):
        g = gaussian(kernel.template(), 0.6)
        G = spectral_gradient(g)
        assert spectral_curl(G).sup() < 1e-12 * G.sup() * 10
        F = G.like(np.stack([g.values[0], 2 * g.values[0], np.roll(g.values[0], 3, axis=0)]))
        assert spectral_divergence(spectral_curl(F)).sup() < 1e-12 * F.sup() * 10

    def test_jacobian_trace_is_divergence(self, kernel):
        g = gaussian(kernel.template(), 0.6, (0.5, 0, 0))
        F = g.like(np.stack([g.values[0], -g.values[0], 0.5 * g.values[0]]))
        J = spectral_jacobian(F)
        tr = J.values[0] + J.values[4] + J.values[8]
        assert np.allclose(tr, spectral_divergence(F).values[0], atol=1e-13)

    def test_row_divergence(self, kernel):
        g = gaussian(kernel.template(), 0.6)
        M = g.zeros_like(9)
        M.values[0] = g.values[0]
        M.values[5] = g.values[0]
        d = row_divergence(M)
        G = spectral_gradient(g)
        assert np.allclose(d.values[0], G.values[0], atol=1e-13)
        assert np.allclose(d.values[1], G.values[2], atol=1e-13)
        assert not d.values[2].any()


class TestProjection:
    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_projection_properties(self, kernel, seed):
        rng = np.random.default_rng(seed)
        tmpl = kernel.template(3)
        X, Y, Z = tmpl.mesh()
        c = rng.uniform(-0.5, 0.5, 3)
        a = rng.normal(size=(3, 1, 1, 1))
        g = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * 0.4**2))
        F = tmpl.like(a * g)
        PF = helmholtz_project(F, kernel)
        assert spectral_divergence(PF).sup() <= 1e-10 * F.sup()
        PPF = helmholtz_project(PF, kernel, warn_noncompact=False)
        assert F.like(PPF.values - PF.values).sup() <= 1e-10 * F.sup()
        grad = spectral_gradient(tmpl.zeros_like(1).like(g))
        assert helmholtz_project(grad, kernel).sup() <= 1e-8 * grad.sup()

    def test_free_space_variant_agrees_closely(self, kernel):
        tmpl = kernel.template(3)
        g = gaussian(kernel.template(), 0.4).values[0]
        F = tmpl.like(np.stack([g, 0 * g, 0 * g]))
        a = helmholtz_project(F, kernel)
        b = helmholtz_project_free_space(F, kernel)
        assert F.like(a.values - b.values).sup() / a.sup() < 1e-2

    def test_warns_on_noncompact_input(self, kernel, caplog):
        F = kernel.template(3)
        F.values[0] = 1.0
        helmholtz_project(F, kernel)
        assert "not compactly supported" in caplog.text

    def test_periodic_projection(self):
        n, h = 16, 2 * np.pi / 16
        x = np.arange(n) * h
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        sol = np.stack([np.sin(Y), np.sin(Z), np.sin(X)])  # divergence free
        grad = np.stack([np.cos(X), 0 * X, 0 * X])  # gradient of sin(x)
        out = project_periodic(sol + grad, h)
        assert np.allclose(out, sol, atol=1e-13)


class TestDarwin:
    def test_vector_potential_of_uniform_drift_is_small(self, kernel):
        # a gradient current has no divergence-free part
        g = gaussian(kernel.template(), 0.5)
        j = spectral_gradient(g)
        a, b = compute_vector_potential(Moments(g, j), kernel)
        assert a.sup() < 1e-10 * j.sup()
        assert b.sup() < 1e-10 * j.sup()

    def test_g2_integrand_rest_particle(self):
        p = np.zeros((2, 3))
        e = np.array([[1.0, 2, 3], [0, 0, 1]])
        b = np.array([[5.0, 0, 0], [0, 7, 0]])
        assert np.allclose(g2_integrand(p, e, b), e)

    def test_g2_integrand_orthogonal_to_velocity_scaling(self):
        # along the velocity the factor is (1 - |v|^2)/gamma = gamma^-3
        p = np.array([[2.0, 0, 0]])
        e = np.array([[1.0, 0, 0]])
        assert g2_integrand(p, e, np.zeros((1, 3)))[0, 0] == pytest.approx(5 ** -1.5, rel=1e-14)

    def test_transverse_field_converges(self, kernel):
        rng = np.random.default_rng(0)
        n = 4000
        x = rng.normal(scale=0.6, size=(n, 3))
        p = rng.normal(scale=0.5, size=(n, 3)) + [0.3, 0, 0]
        ens = ParticleEnsemble(x, p, np.full(n, 1e-3 / n), np.ones(n), 0.0)
        mom = deposit_moments(ens, kernel.template())
        st_ = solve_darwin_fields(mom, ens, kernel, "darwin", 1e-10, 20)
        assert 1 <= st_.fixed_point_iters <= 6
        assert st_.fixed_point_residual <= 1e-10
        assert spectral_divergence(st_.e_t).sup() <= 1e-9 * st_.e_t.sup()
        es = solve_darwin_fields(mom, ens, kernel, "electrostatic")
        assert not es.b.values.any() and np.array_equal(es.e_l.values, st_.e_l.values)

    def test_divergence_is_reported(self, kernel):
        rng = np.random.default_rng(1)
        n = 2000
        x = rng.normal(scale=0.6, size=(n, 3))
        p = rng.normal(size=(n, 3))
        ens = ParticleEnsemble(x, p, np.full(n, 1e-3 / n), np.ones(n), 0.0)
        mom = deposit_moments(ens, kernel.template())
        _, e_l = compute_electrostatic(mom, kernel)
        with pytest.raises(FixedPointDivergence) as err:
            solve_transverse_field(mom, ens, e_l, e_l.zeros_like(3), kernel, tol=1e-300, max_iter=2)
        assert len(err.value.history) == 2
