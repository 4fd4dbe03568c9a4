"""Spherical symmetry: Darwin reduces to relativistic Vlasov-Poisson.

The same markers are advanced twice: in 3D with all Darwin fields, and as
shells under the enclosed-charge field.  The densities agree closely; B and
E_T are not zero but sit at the particle noise level.
Run with ``python demos/radial_reduction.py``.
"""

from vlasov_darwin.core_state import SimConfig
from vlasov_darwin.simulation import compare_radial

cfg = SimConfig(amplitude=1e-3, grid_n=32, box_half_width=11.0, t_end=10.0, dt=0.5, particle_count=100_000)
cmp = compare_radial(cfg)

print("   t   max rho (3D)  max rho (shells)   |E_L| 3D    |E_L| shells")
for a, b in zip(cmp.darwin.series[::4], cmp.radial.series[::4]):
    print(f"{a.t:5.1f}   {a.sup_rho:.4e}    {b.sup_rho:.4e}     {a.sup_el:.3e}   {b.sup_el:.3e}")

print(f"largest relative density difference: {cmp.rho_rel_diff:.2%}")
print(f"max|B| / max|E_L| = {cmp.b_ratio:.1e}, max|E_T| / max|E_L| = {cmp.et_ratio:.1e}")
print(f"shells reflected through the centre: {cmp.radial.manifest.reflections}")
