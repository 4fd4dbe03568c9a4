"""Elliptic field equations of the Darwin system on an unbounded domain.

Potentials are obtained by convolving with the free-space Green's function
of the Laplacian on a zero-padded lattice (Hockney's method).  Derivatives,
the divergence-free projection and the Green's function symbol are all
Fourier multipliers on the padded lattice, so they commute with each other.

Sign convention: ``laplacian(phi) = rho`` and ``E_L = grad(phi)``, which
makes the force on positive charge repulsive.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .core_state import GridField, Moments, ParticleEnsemble, check_inside, deposit_vectors

log = logging.getLogger(__name__)

_AXES = (-3, -2, -1)
# integral of 1/|x| over the unit cube centred at the origin
CUBE_INVERSE_DISTANCE = 3.0 * np.log(2.0 + np.sqrt(3.0)) - np.pi / 2.0


class FixedPointDivergence(RuntimeError):
    """The transverse-field iteration did not reach its tolerance."""

    def __init__(self, history, tol):
        self.history = list(history)
        self.tol = tol
        super().__init__(
            f"E_T fixed point not converged after {len(self.history)} iterations "
            f"(last residual {self.history[-1]:.3e}, tol {tol:.1e})"
        )


class KernelMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Wavenumbers:
    """Angular wavenumbers of the padded lattice in rfft layout.

    The Nyquist entries are zeroed so that first derivatives of real data
    stay real; every second-order operator is built from these same
    vectors (``laplacian = div grad``), which keeps the discrete identities
    div curl = 0, curl grad = 0 and P^2 = P exact.
    """

    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    k2: np.ndarray
    inv_k2: np.ndarray
    N: int

    @property
    def k(self):
        return (self.kx, self.ky, self.kz)


@functools.lru_cache(maxsize=8)
def wavenumbers(N: int, h: float) -> Wavenumbers:
    k = 2.0 * np.pi * sfft.fftfreq(N, d=h)
    k[N // 2] = 0.0
    kr = 2.0 * np.pi * sfft.rfftfreq(N, d=h)
    kr[-1] = 0.0
    kx, ky, kz = k[:, None, None], k[None, :, None], kr[None, None, :]
    k2 = kx**2 + ky**2 + kz**2
    inv = np.zeros_like(k2)
    np.divide(1.0, k2, out=inv, where=k2 > 0)
    return Wavenumbers(kx, ky, kz, k2, inv, N)


def _wn(f: GridField) -> Wavenumbers:
    return wavenumbers(f.N, f.h)


def fwd(values):
    return sfft.rfftn(values, axes=_AXES)


def inv(hat, N):
    return sfft.irfftn(hat, s=(N, N, N), axes=_AXES)


# --------------------------------------------------------------------------
# Fourier-space building blocks; ``u`` scalar spectrum, ``F`` stacked (3, ...)


def grad_hat(u, wn):
    return np.stack([1j * k * u for k in wn.k])


def div_hat(F, wn):
    return 1j * (wn.kx * F[0] + wn.ky * F[1] + wn.kz * F[2])


def curl_hat(F, wn):
    kx, ky, kz = wn.k
    return 1j * np.stack([ky * F[2] - kz * F[1], kz * F[0] - kx * F[2], kx * F[1] - ky * F[0]])


def project_hat(F, wn):
    """(I - k k^T / |k|^2) F; identity on the k = 0 (and pure Nyquist) modes."""
    kdotF = (wn.kx * F[0] + wn.ky * F[1] + wn.kz * F[2]) * wn.inv_k2
    return np.stack([F[a] - k * kdotF for a, k in enumerate(wn.k)])


def jacobian_hat(F, wn):
    """Rows a, columns b: d_b F_a, flattened to 9 components."""
    return np.stack([1j * k * F[a] for a in range(F.shape[0]) for k in wn.k])


# --------------------------------------------------------------------------
# free-space Green's function


class FreeSpaceKernel:
    """Transform of the Green's function G with laplacian(G) = delta on the padded grid.

    Parameters
    ----------
    n, extent : int, float
        Physical grid: ``n`` cells across ``[-extent, extent]``.
    pad_factor : int
        Padded lattice has ``pad_factor * n`` nodes per axis.
    method : {"spectral", "cell_average"}
        ``"spectral"`` samples the band-limited version of the Green's
        function truncated beyond the box diameter (exact for band-limited
        compact sources up to round-off).  ``"cell_average"`` uses the point
        values -1/(4 pi |x|) with the cell mean of the singularity at the
        origin (second order).
    """

    def __init__(self, n: int, extent: float, pad_factor: int = 2, method: str = "spectral"):
        if pad_factor < 2:
            raise ValueError("free-space convolution needs pad_factor >= 2")
        self.n, self.extent, self.pad_factor, self.method = int(n), float(extent), int(pad_factor), method
        self.N = self.pad_factor * self.n
        self.h = 2.0 * self.extent / self.n
        self.wn = wavenumbers(self.N, self.h)
        if method == "spectral":
            g = self._truncated_kernel()
        elif method == "cell_average":
            g = self._cell_average_kernel()
        else:
            raise ValueError(f"unknown kernel method {method!r}")
        self.symbol = -sfft.rfftn(g).real * self.h**3

    def _offsets(self):
        i = np.arange(self.N)
        return np.minimum(i, self.N - i)

    def _cell_average_kernel(self):
        d = self._offsets() * self.h
        r = np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)
        r[0, 0, 0] = 1.0
        g = 1.0 / (4.0 * np.pi * r)
        g[0, 0, 0] = CUBE_INVERSE_DISTANCE / (4.0 * np.pi * self.h)
        return g

    def _truncated_kernel(self):
        # 1/(4 pi |x|) cut off at R has transform 2 sin^2(R|k|/2)/|k|^2.  Its
        # inverse DFT on a lattice of period 2N h > 2R gives the band-limited
        # kernel without wrap-around; evenness turns that DFT into a DCT-I.
        N, h = self.N, self.h
        R = 2.0 * np.sqrt(3.0) * self.extent * 1.0001
        k = np.pi * np.arange(N + 1) / (N * h)
        kk = k**2
        mod = np.sqrt(kk[:, None, None] + kk[None, :, None] + kk[None, None, :])
        ghat = 0.5 * R * R * np.sinc(R * mod / (2.0 * np.pi)) ** 2
        del mod
        half = N // 2 + 1
        for ax in range(3):
            ghat = sfft.dct(ghat, type=1, axis=ax)
            ghat = np.take(ghat, np.arange(half), axis=ax)
        t = ghat / (2.0 * N * h) ** 3
        idx = self._offsets()
        return t[np.ix_(idx, idx, idx)]

    def check(self, f: GridField):
        if f.N != self.N or not np.isclose(f.h, self.h, rtol=1e-13, atol=0):
            raise KernelMismatch(
                f"grid (n={f.n}, extent={f.extent}, pad={f.pad_factor}) does not match kernel "
                f"(n={self.n}, extent={self.extent}, pad={self.pad_factor})"
            )

    def template(self, components=1) -> GridField:
        return GridField.zeros(self.n, self.extent, components, self.pad_factor)

    def apply_hat(self, hat):
        """Green's function convolution in Fourier space."""
        return self.symbol * hat


# --------------------------------------------------------------------------
# public differential operators


def spectral_gradient(f: GridField) -> GridField:
    if f.components != 1:
        raise ValueError("gradient expects a scalar field")
    wn = _wn(f)
    return f.like(inv(grad_hat(fwd(f.values[0]), wn), f.N))


def spectral_divergence(F: GridField) -> GridField:
    if F.components != 3:
        raise ValueError("divergence expects a vector field")
    return F.like(inv(div_hat(fwd(F.values), _wn(F)), F.N))


def spectral_curl(F: GridField) -> GridField:
    if F.components != 3:
        raise ValueError("curl expects a vector field")
    return F.like(inv(curl_hat(fwd(F.values), _wn(F)), F.N))


def spectral_laplacian(f: GridField) -> GridField:
    """div(grad f), componentwise."""
    return f.like(inv(-_wn(f).k2 * fwd(f.values), f.N))


def spectral_jacobian(F: GridField) -> GridField:
    """Derivative matrix d_b F_a stored as 9 components (row-major in a, b)."""
    if F.components != 3:
        raise ValueError("jacobian expects a vector field")
    return F.like(inv(jacobian_hat(fwd(F.values), _wn(F)), F.N))


def row_divergence(M: GridField) -> GridField:
    """Row-wise divergence sum_b d_b M_ab of a 9-component tensor field."""
    if M.components != 9:
        raise ValueError("row divergence expects 9 components")
    wn = _wn(M)
    Mh = fwd(M.values)
    out = np.stack([div_hat(Mh[3 * a : 3 * a + 3], wn) for a in range(3)])
    return M.like(inv(out, M.N))


# --------------------------------------------------------------------------
# Poisson and projection


def solve_poisson_free_space(source: GridField, kernel: FreeSpaceKernel) -> GridField:
    """Potential u with laplacian(u) = source and u -> 0 at infinity, componentwise."""
    kernel.check(source)
    return source.like(inv(kernel.apply_hat(fwd(source.values)), source.N))


def _warn_noncompact(F: GridField, what: str, rtol=1e-8):
    total = F.sup(interior=False)
    if total > 0 and F.boundary_max() > rtol * total:
        log.warning("%s is not compactly supported in the box: boundary/sup = %.2e",
                    what, F.boundary_max() / total)
        return True
    return False


def helmholtz_project(F: GridField, kernel: FreeSpaceKernel | None = None, warn_noncompact=True) -> GridField:
    """Divergence-free part PF = F + grad(psi) with -laplacian(psi) = div F.

    Applied as the multiplier I - k k^T/|k|^2 on the padded lattice, which
    is the exact inverse of the discrete Laplacian there.  Inputs that do
    not vanish on the boundary of the physical box are flagged in the log.
    """
    if F.components != 3:
        raise ValueError("projection expects a vector field")
    if kernel is not None:
        kernel.check(F)
    if warn_noncompact:
        _warn_noncompact(F, "projection input")
    return F.like(inv(project_hat(fwd(F.values), _wn(F)), F.N))


def helmholtz_project_free_space(F: GridField, kernel: FreeSpaceKernel) -> GridField:
    """PF = F - grad H(div F) with H the free-space inverse Laplacian.

    Differs from :func:`helmholtz_project` only through the periodic images
    of the (non-compact) gradient part; kept as a cross-check.
    """
    kernel.check(F)
    wn = kernel.wn
    Fh = fwd(F.values)
    psi = -kernel.apply_hat(div_hat(Fh, wn))
    return F.like(inv(Fh + grad_hat(psi, wn), F.N))


def project_periodic(values: np.ndarray, spacing: float) -> np.ndarray:
    """Leray projection of a periodic vector field (3, n, n, n), no padding."""
    n = values.shape[-1]
    wn = wavenumbers(n, float(spacing))
    return inv(project_hat(fwd(values), wn), n)


# --------------------------------------------------------------------------
# Darwin fields


@dataclass
class FieldState:
    phi: GridField
    a: GridField
    e_l: GridField
    e_t: GridField
    b: GridField
    fixed_point_iters: int = 0
    fixed_point_residual: float = 0.0
    residual_history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, template: GridField) -> "FieldState":
        z3 = template.zeros_like(3)
        return cls(template.zeros_like(1), z3, z3, z3, z3)

    @property
    def e_total(self) -> GridField:
        return self.e_l.like(self.e_l.values + self.e_t.values)


@dataclass
class DarwinSources:
    g1: GridField
    g2: GridField
    k_field_snapshot: str = ""


def compute_electrostatic(moments: Moments, kernel: FreeSpaceKernel):
    """(phi, E_L) with laplacian(phi) = rho and E_L = grad(phi)."""
    rho = moments.rho
    kernel.check(rho)
    ph = kernel.apply_hat(fwd(rho.values[0]))
    phi = rho.like(inv(ph, rho.N))
    e_l = rho.like(inv(grad_hat(ph, kernel.wn), rho.N))
    return phi, e_l


def compute_vector_potential(moments: Moments, kernel: FreeSpaceKernel):
    """(A, B) with laplacian(A) = -P(j) and B = curl(A)."""
    j = moments.j
    kernel.check(j)
    ah = -kernel.apply_hat(project_hat(fwd(j.values), kernel.wn))
    return j.like(inv(ah, j.N)), j.like(inv(curl_hat(ah, kernel.wn), j.N))


def compute_G1(moments: Moments) -> GridField:
    """G1 = -div M (row-wise)."""
    g = row_divergence(moments.M)
    g.values *= -1.0
    return g


def g2_integrand(p, e, b):
    """Per-marker (I - v v^T)/gamma (E + v x B) for momenta ``p`` and fields at the markers."""
    gam = np.sqrt(1.0 + np.einsum("ij,ij->i", p, p))[:, None]
    v = p / gam
    K = e + np.cross(v, b)
    return (K - v * np.einsum("ij,ij->i", v, K)[:, None]) / gam


def gather_fields(x, *fields: GridField, t=0.0):
    """Trilinear interpolation of each field to the points ``x``."""
    x = np.ascontiguousarray(x, dtype=float)
    f0 = fields[0]
    check_inside(x, f0.extent, t)
    out = []
    for f in fields:
        o = np.empty((x.shape[0], f.components))
        _kernels.gather(x, f.values, f.lo, f.h, o)
        out.append(o)
    return out


def compute_G2(ensemble: ParticleEnsemble, e_total: GridField, b: GridField, template: GridField | None = None) -> GridField:
    """G2 = int (I - v v^T)/gamma f K dp with K = E + v x B, deposited cloud-in-cell."""
    template = e_total if template is None else template
    e, bb = gather_fields(ensemble.x, e_total, b, t=ensemble.t)
    q = g2_integrand(ensemble.p, e, bb) * ensemble.w[:, None]
    return deposit_vectors(ensemble.x, q, template, ensemble.t)


def _relative_change(new, old, sl):
    d = np.sqrt(np.sum((new - old)[:, sl, sl, sl] ** 2, axis=0)).max()
    s = np.sqrt(np.sum(new[:, sl, sl, sl] ** 2, axis=0)).max()
    if s == 0.0:
        return 0.0 if d == 0.0 else np.inf
    return float(d / s)


def solve_transverse_field(
    moments: Moments,
    ensemble: ParticleEnsemble,
    e_l: GridField,
    b: GridField,
    kernel: FreeSpaceKernel,
    tol: float = 1e-8,
    max_iter: int = 20,
    initial: GridField | None = None,
    g1: GridField | None = None,
):
    """Picard iteration for laplacian(E_T) = P(G1 + G2(E_L + E_T, B)).

    Returns ``(e_t, iters, residual, history)``; the residual is the relative
    sup-norm change of the last update.  Raises :class:`FixedPointDivergence`
    when ``max_iter`` iterations do not reach ``tol``.
    """
    kernel.check(e_l)
    wn, N = kernel.wn, kernel.N
    g1 = compute_G1(moments) if g1 is None else g1
    g1h = fwd(g1.values)
    et = np.zeros_like(e_l.values) if initial is None else initial.values.copy()
    sl = e_l.interior_slice
    history = []
    for it in range(1, max_iter + 1):
        g2 = compute_G2(ensemble, e_l.like(e_l.values + et), b, e_l)
        new = inv(kernel.apply_hat(project_hat(g1h + fwd(g2.values), wn)), N)
        res = _relative_change(new, et, sl)
        history.append(res)
        et = new
        if res <= tol:
            return e_l.like(et), it, res, history
    raise FixedPointDivergence(history, tol)


def solve_darwin_fields(
    moments: Moments,
    ensemble: ParticleEnsemble,
    kernel: FreeSpaceKernel,
    mode: str = "darwin",
    tol: float = 1e-8,
    max_iter: int = 20,
    previous: FieldState | None = None,
) -> FieldState:
    """All fields at one time level: rho -> (phi, E_L) -> (A, B) -> E_T."""
    phi, e_l = compute_electrostatic(moments, kernel)
    zero = e_l.zeros_like(3)
    if mode == "electrostatic":
        return FieldState(phi, zero, e_l, zero, zero)
    if mode != "darwin":
        raise ValueError(f"no field solve for mode {mode!r}")
    a, b = compute_vector_potential(moments, kernel)
    guess = previous.e_t if previous is not None else None
    e_t, iters, res, hist = solve_transverse_field(
        moments, ensemble, e_l, b, kernel, tol, max_iter, initial=guess
    )
    return FieldState(phi, a, e_l, e_t, b, iters, res, hist)


def time_differenced_et(a_prev: GridField, a_now: GridField, dt: float) -> GridField:
    """-(A^n - A^{n-1})/dt, a first-order cross-check of the elliptic E_T."""
    return a_now.like(-(a_now.values - a_prev.values) / dt)
