"""Command line entry point.

    vlasov-darwin run <config> [--out DIR]
    vlasov-darwin study <study-config> [--out DIR]
    vlasov-darwin verify-gronwall [--trials N]
    vlasov-darwin check-projection [--grid N]
    vlasov-darwin compare-radial <config>

Exit status is 0 when the run completed (or the check passed), 2 on a
fixed-point divergence, 3 on a marker escape and 1 for a failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import simulation as sim
from .core_state import GridField, rng_stream
from .diagnostics import random_gronwall_problems, verify_gronwall
from .fields import FreeSpaceKernel, helmholtz_project, spectral_divergence, spectral_gradient

EXIT = {"completed": 0, "fixed_point_divergence": 2, "marker_escape": 3}


def _cmd_run(args):
    cfg = sim.read_config(args.config)
    res = sim.run_simulation(cfg, snapshot_every=args.snapshot_every, track=args.track,
                             snapshot_fields=("rho", "e_l", "e_t", "b"))
    out = sim.write_run(res, args.out or Path(args.config).with_suffix(""))
    print(f"{res.manifest.termination_reason}: {len(res.series)} records written to {out}")
    if res.jacobian is not None:
        print(f"determinant floor {'passed' if res.jacobian.passed else 'FAILED'} (margin {res.jacobian.margin:.3g})")
    return EXIT[res.manifest.termination_reason]


def _cmd_study(args):
    spec = sim.read_study_config(args.study_config)
    try:
        rep = sim.run_study(spec)
    except sim.StudyFailure as exc:
        print(exc)
        return EXIT[exc.manifest.termination_reason]
    out = Path(args.out or Path(args.study_config).with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    for m in rep.members:
        sim.write_timeseries(m.series, out / f"timeseries_{spec.variable}_{m.value:g}.csv")
    summary = {
        "variable": spec.variable,
        "members": [{"value": m.value, "alpha": m.alpha, "field_max": m.field_max,
                     "exponents": {k: f.exponent for k, f in m.fits.items()}} for m in rep.members],
        "verdicts": rep.verdicts,
    }
    (out / "study.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    for m in summary["members"]:
        print(f"{spec.variable}={m['value']:g}  alpha={m['alpha']:.6e}  field_max={m['field_max']:.6e}")
    for k, v in rep.verdicts.items():
        print(f"{k}: {v}")
    return 0 if rep.passed else 1


def _cmd_gronwall(args):
    rng = rng_stream(args.seed, "gronwall")
    rep = verify_gronwall(random_gronwall_problems(rng, args.trials))
    print(f"{rep.trials} trajectories, {len(rep.violations)} violations, worst |xi|/bound = {rep.worst_ratio:.6f}")
    for v in rep.violations[:5]:
        print(f"  violation at s={v['s']:.6g}: |xi|={abs(v['xi']):.6e} > bound={v['bound']:.6e}")
    return 0 if rep.passed else 1


def random_compact_field(rng, template: GridField, bumps=4, width=(0.5, 0.75)):
    """Sum of Gaussian bumps with random centres and vector amplitudes, well inside the box."""
    X, Y, Z = template.mesh()
    L = template.extent
    out = np.zeros((3,) + X.shape)
    for _ in range(bumps):
        w = rng.uniform(*width)
        c = rng.uniform(-(L - 7.5 * w), L - 7.5 * w, 3)
        a = rng.normal(size=3)
        g = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * w * w))
        out += a[:, None, None, None] * g
    return template.like(out)


def projection_suite(n=64, count=50, seed=0, extent=None):
    """Worst relative errors of div PF, P(PF) - PF and P(grad g) over random fields.

    Bumps are 2-3 cells wide and kept 7.5 widths from the boundary, which
    needs ``n >= 64`` at the default spacing of 1/4.
    """
    extent = 1.0 * n / 8 if extent is None else extent
    if extent - 7.5 * 0.75 <= 0:
        raise ValueError(f"grid {n} with half width {extent} is too small for the projection suite (use n >= 64)")
    kernel = FreeSpaceKernel(n, extent)
    tmpl = kernel.template(3)
    rng = rng_stream(seed, "projection")
    worst = {"div": 0.0, "idempotence": 0.0, "gradient": 0.0}
    X, Y, Z = tmpl.mesh()
    for _ in range(count):
        F = random_compact_field(rng, tmpl)
        nF = F.sup()
        PF = helmholtz_project(F, kernel)
        PPF = helmholtz_project(PF, kernel, warn_noncompact=False)
        worst["div"] = max(worst["div"], spectral_divergence(PF).sup() / nF)
        worst["idempotence"] = max(worst["idempotence"], F.like(PPF.values - PF.values).sup() / nF)
        w = rng.uniform(0.5, 0.75)
        c = rng.uniform(-(extent - 7.5 * w), extent - 7.5 * w, 3)
        g = tmpl.zeros_like(1).like(np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * w * w)))
        G = spectral_gradient(g)
        worst["gradient"] = max(worst["gradient"], helmholtz_project(G, kernel).sup() / G.sup())
    return worst


def _cmd_projection(args):
    try:
        worst = projection_suite(args.grid, args.fields, args.seed)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 1
    limits = {"div": 1e-10, "idempotence": 1e-10, "gradient": 1e-8}
    ok = True
    for k, v in worst.items():
        good = v <= limits[k]
        ok &= good
        print(f"{k:12s} worst {v:.3e}  limit {limits[k]:.0e}  {'ok' if good else 'FAIL'}")
    return 0 if ok else 1


def _cmd_compare_radial(args):
    cfg = sim.read_config(args.config)
    cmp = sim.compare_radial(cfg)
    print(f"max_t |E_L| = {cmp.max_el:.6e}")
    print(f"max_t |B| / max_t |E_L|   = {cmp.b_ratio:.3e}")
    print(f"max_t |E_T| / max_t |E_L| = {cmp.et_ratio:.3e}")
    print(f"max_t relative |rho| difference to the shell reference = {cmp.rho_rel_diff:.3e}")
    print(f"shell reflections at the centre: {cmp.radial.manifest.reflections}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sim.write_timeseries(cmp.darwin.series, out / "timeseries_darwin.csv")
        sim.write_timeseries(cmp.radial.series, out / "timeseries_radial.csv")
    for res in (cmp.darwin, cmp.radial):
        if not res.completed:
            return EXIT[res.manifest.termination_reason]
    return 0 if cmp.passed() else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="vlasov-darwin", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--snapshot-every", type=int, default=None)
    p.add_argument("--track", type=int, default=0, help="markers carrying variational matrices")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("study", help="amplitude / resolution sweep")
    p.add_argument("study_config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("verify-gronwall", help="random checks of the Gronwall-type bound")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gronwall)

    p = sub.add_parser("check-projection", help="divergence-free projection suite")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--fields", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_projection)

    p = sub.add_parser("compare-radial", help="3D Darwin run against the shell reference")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_compare_radial)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
