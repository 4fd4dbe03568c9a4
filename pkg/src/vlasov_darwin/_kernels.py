"""Compiled particle <-> grid kernels (cloud-in-cell).

All kernels are serial so that accumulation order, and therefore every
deposited value, is reproducible bit for bit.  Grids are the padded periodic
arrays used by :class:`vlasov_darwin.core_state.GridField`; ``lo`` is the
physical coordinate of padded index 0 and ``h`` the node spacing.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _locate(xc, lo, h):
    f = (xc - lo) / h
    i = int(np.floor(f))
    return i, f - i


@nb.njit(cache=True)
def deposit_moments(x, p, w, lo, h, rho, j, m):
    """Accumulate w, w v and w v(x)v onto ``rho`` (N,N,N), ``j`` (3,...)
    and ``m`` (6,...) in the order xx, xy, xz, yy, yz, zz.

    ``j`` / ``m`` may have a leading dimension of 0 to skip them.
    """
    want_j = j.shape[0] == 3
    want_m = m.shape[0] == 6
    for i in range(x.shape[0]):
        ix, dx = _locate(x[i, 0], lo, h)
        iy, dy = _locate(x[i, 1], lo, h)
        iz, dz = _locate(x[i, 2], lo, h)
        px = p[i, 0]
        py = p[i, 1]
        pz = p[i, 2]
        ig = 1.0 / np.sqrt(1.0 + px * px + py * py + pz * pz)
        vx = px * ig
        vy = py * ig
        vz = pz * ig
        wi = w[i]
        for a in range(2):
            wa = dx if a == 1 else 1.0 - dx
            for b in range(2):
                wb = dy if b == 1 else 1.0 - dy
                for c in range(2):
                    wc = dz if c == 1 else 1.0 - dz
                    s = wi * wa * wb * wc
                    xa = ix + a
                    yb = iy + b
                    zc = iz + c
                    rho[xa, yb, zc] += s
                    if want_j:
                        j[0, xa, yb, zc] += s * vx
                        j[1, xa, yb, zc] += s * vy
                        j[2, xa, yb, zc] += s * vz
                    if want_m:
                        m[0, xa, yb, zc] += s * vx * vx
                        m[1, xa, yb, zc] += s * vx * vy
                        m[2, xa, yb, zc] += s * vx * vz
                        m[3, xa, yb, zc] += s * vy * vy
                        m[4, xa, yb, zc] += s * vy * vz
                        m[5, xa, yb, zc] += s * vz * vz


@nb.njit(cache=True)
def deposit_vectors(x, q, lo, h, out):
    """Scatter per-marker values ``q`` (M, C) onto ``out`` (C, N, N, N)."""
    nc = q.shape[1]
    for i in range(x.shape[0]):
        ix, dx = _locate(x[i, 0], lo, h)
        iy, dy = _locate(x[i, 1], lo, h)
        iz, dz = _locate(x[i, 2], lo, h)
        for a in range(2):
            wa = dx if a == 1 else 1.0 - dx
            for b in range(2):
                wb = dy if b == 1 else 1.0 - dy
                for c in range(2):
                    wc = dz if c == 1 else 1.0 - dz
                    s = wa * wb * wc
                    for k in range(nc):
                        out[k, ix + a, iy + b, iz + c] += s * q[i, k]


@nb.njit(cache=True)
def gather(x, field, lo, h, out):
    """Trilinear interpolation of ``field`` (C, N, N, N) to ``out`` (M, C)."""
    nc = field.shape[0]
    for i in range(x.shape[0]):
        ix, dx = _locate(x[i, 0], lo, h)
        iy, dy = _locate(x[i, 1], lo, h)
        iz, dz = _locate(x[i, 2], lo, h)
        for k in range(nc):
            out[i, k] = 0.0
        for a in range(2):
            wa = dx if a == 1 else 1.0 - dx
            for b in range(2):
                wb = dy if b == 1 else 1.0 - dy
                for c in range(2):
                    wc = dz if c == 1 else 1.0 - dz
                    s = wa * wb * wc
                    for k in range(nc):
                        out[i, k] += s * field[k, ix + a, iy + b, iz + c]
