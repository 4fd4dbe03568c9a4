"""The divergence-free projection and what it does to radial currents.

P removes the gradient part of a vector field.  A radial current x g(|x|) is
itself a gradient, so P kills it; that is why a spherically symmetric
plasma has no magnetic field.  Run with ``python demos/projection_and_symmetry.py``.
"""

import numpy as np

from vlasov_darwin.cli import projection_suite
from vlasov_darwin.core_state import signed_permutations
from vlasov_darwin.fields import FreeSpaceKernel, helmholtz_project, spectral_curl, spectral_divergence
from vlasov_darwin.radial import radial_projection_residual, transform_grid

kernel = FreeSpaceKernel(32, 4.0)
tmpl = kernel.template(3)
X, Y, Z = tmpl.mesh()
r = np.sqrt(X**2 + Y**2 + Z**2)
g = np.exp(-r**2 / (2 * 0.6**2))

# %% radial versus rotating current
radial = tmpl.like(np.stack([X * g, Y * g, Z * g]))
swirl = tmpl.like(np.stack([-Y * g, X * g, 0 * g]))
print(f"|P j| / |j| radial:   {radial_projection_residual(radial, kernel):.2e}")
print(f"|P j| / |j| rotating: {radial_projection_residual(swirl, kernel):.3f}")

# %% P commutes with the 48 signed axis permutations of the grid
rng = np.random.default_rng(1)
F = tmpl.like(rng.normal(size=(3, 1, 1, 1)) * np.exp(-((X - 0.5) ** 2 + (Y + 0.2) ** 2 + Z**2) / 0.6))
PF = helmholtz_project(F, kernel)
worst = 0.0
for Q in signed_permutations():
    a = helmholtz_project(F.like(transform_grid(F.values, Q, "vector")), kernel).values
    worst = max(worst, np.abs(a - transform_grid(PF.values, Q, "vector")).max() / PF.sup())
print(f"equivariance defect over all 48 maps: {worst:.1e}")

# %% divergence and curl
print(f"|div PF| / |F| = {spectral_divergence(PF).sup() / F.sup():.1e}")
print(f"|curl (F - PF)| / |F| = {spectral_curl(F.like(F.values - PF.values)).sup() / F.sup():.1e}")

# %% the random-field suite used by `vlasov-darwin check-projection`
print(projection_suite(n=64, count=5))
