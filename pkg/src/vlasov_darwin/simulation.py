"""Run orchestration, parameter studies and file formats.

A time step is: deposit moments -> (phi, E_L) -> (A, B) -> E_T fixed point
-> record norms -> push markers.  ``free_stream`` skips every field solve,
``electrostatic`` skips A, B and E_T, ``radial_reference`` replaces the 3D
dynamics by the shell solver on the same markers.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core_state import (
    GridField, MarkerEscapeError, ParticleEnsemble, SimConfig, build_initial_datum, deposit_moments,
    deposit_vectors, rng_stream, sample_particles,
)
from .diagnostics import (
    COLUMNS, TimeSeriesRecord, check_bootstrap, default_fit_window, extract_alpha, field_gradients,
    fit_decay_exponent, record_step,
)
from .fields import FieldState, FixedPointDivergence, FreeSpaceKernel, solve_darwin_fields, spectral_jacobian
from .radial import EnclosedCharge, RadialEnsemble, push_radial
from .transport import Trajectory, VariationalState, integrate_variational, jacobian_determinant_check, push_markers

log = logging.getLogger(__name__)

TERMINATIONS = ("completed", "fixed_point_divergence", "marker_escape")


@dataclass
class RunManifest:
    config: dict
    code_version: str = __version__
    seed: int = 0
    start_time: str = ""
    end_time: str = ""
    fixed_point_iters: list = field(default_factory=list)
    termination_reason: str = "completed"
    message: str = ""
    n_markers: int = 0
    effective_amplitude: float = 0.0
    reflections: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


@dataclass
class RunResult:
    manifest: RunManifest
    series: list
    snapshots: list = field(default_factory=list)
    ensemble: ParticleEnsemble | RadialEnsemble | None = None
    jacobian: object = None
    trajectory: Trajectory | None = None
    last_fields: FieldState | None = None

    @property
    def completed(self) -> bool:
        return self.manifest.termination_reason == "completed"


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def snapshot_cadence(config: SimConfig) -> int:
    return max(1, math.ceil(config.t_end / (10.0 * config.dt)))


def _total_gradients(grads):
    return grads["e_l"].like(grads["e_l"].values + grads["e_t"].values), grads["b"]


def run_simulation(
    config: SimConfig,
    *,
    ensemble: ParticleEnsemble | None = None,
    track: int = 0,
    beta: float = 0.5,
    snapshot_every: int | None = None,
    snapshot_fields=("rho",),
    kernel_method: str = "spectral",
    pad_factor: int = 2,
    callback=None,
) -> RunResult:
    """Integrate from t = 0 to ``config.t_end``.

    Parameters
    ----------
    ensemble
        Markers to start from; sampled from the initial datum when omitted.
    track
        Number of markers carrying variational matrices; when positive the
        determinant check at the final time is returned in ``result.jacobian``.
    snapshot_every
        Step cadence for snapshots (0 disables); defaults to
        ``ceil(t_end / (10 dt))``.
    callback
        Called as ``callback(step, ensemble, moments, fields)`` after each record.
    """
    manifest = RunManifest(config=dataclasses.asdict(config), seed=config.seed, start_time=_now())
    f0 = build_initial_datum(config)
    manifest.effective_amplitude = f0.amplitude
    if f0.amplitude != f0.requested_amplitude:
        manifest.extra["amplitude_note"] = (
            f"amplitude {f0.requested_amplitude:g} reduced to {f0.amplitude:.16g} so that sup|grad f0| <= 1"
        )
    ens = sample_particles(f0, config) if ensemble is None else ensemble
    manifest.n_markers = len(ens)
    if config.mode == "radial_reference":
        return _run_radial(config, ens, manifest, snapshot_every, snapshot_fields, pad_factor, callback)

    template = GridField.zeros(config.grid_n, config.box_half_width, 1, pad_factor)
    kernel = None
    if config.mode in ("darwin", "electrostatic"):
        kernel = FreeSpaceKernel(config.grid_n, config.box_half_width, pad_factor, kernel_method)
    every = snapshot_cadence(config) if snapshot_every is None else snapshot_every
    traj = None
    if track:
        idx = np.sort(rng_stream(config.seed, "tracking").choice(len(ens), size=min(track, len(ens)), replace=False))
        traj = Trajectory(idx, config.dt)

    series, snaps, state, prev = [], [], None, None
    steps = config.n_steps
    result = RunResult(manifest, series, snaps)
    try:
        for k in range(steps + 1):
            t = k * config.dt
            ens = ens.replace(t=t)
            mom = deposit_moments(ens, template, current=True, tensor=config.mode == "darwin")
            if kernel is not None:
                state = solve_darwin_fields(mom, ens, kernel, config.mode, config.fixed_point_tol,
                                            config.fixed_point_max_iter, previous=state)
                grads = field_gradients(state)
            else:
                state, grads = None, None
            prev = record_step(mom, state, ens, t, prev, grads)
            series.append(prev)
            manifest.fixed_point_iters.append(prev.fixed_point_iters)
            if traj is not None:
                if state is None:
                    traj.record_from_grids(ens, None)
                else:
                    traj.record_from_grids(ens, state, *_total_gradients(grads))
            if every and k % every == 0:
                snaps.append(_snapshot_entry(k, t, mom, state, snapshot_fields))
            if callback is not None:
                callback(k, ens, mom, state)
            if k == steps:
                break
            ens = push_markers(ens, state, config.dt, config.box_half_width)
    except FixedPointDivergence as exc:
        manifest.termination_reason = "fixed_point_divergence"
        manifest.message = str(exc)
        manifest.extra["residual_history"] = exc.history
    except MarkerEscapeError as exc:
        manifest.termination_reason = "marker_escape"
        manifest.message = str(exc)
    manifest.end_time = _now()
    result.ensemble = ens
    result.last_fields = state
    result.trajectory = traj
    if traj is not None and result.completed and config.t_end >= 1:
        var = integrate_variational(VariationalState.terminal(len(traj.indices), config.t_end), traj, config.dt)
        result.jacobian = jacobian_determinant_check(var, config.t_end, traj.p[-1], beta)
        result.manifest.extra["jacobian_margin"] = result.jacobian.margin
    return result


def _snapshot_entry(k, t, mom, state, names):
    out = {"step": k, "t": t}
    for name in names:
        if name == "rho":
            out[name] = mom.rho
        elif name == "j":
            out[name] = mom.j
        elif state is not None and hasattr(state, name):
            out[name] = getattr(state, name)
    return out


def radial_grid_field(table: EnclosedCharge, template: GridField) -> GridField:
    """Enclosed-charge field m(r) x / (4 pi r^3) sampled on the nodes."""
    X, Y, Z = template.mesh()
    r = np.sqrt(X * X + Y * Y + Z * Z)
    r[r == 0] = 1.0
    mag = table(r) / (4.0 * np.pi * r**3)
    mag[template.N // 2, template.N // 2, template.N // 2] = 0.0
    return template.like(np.stack([mag * X, mag * Y, mag * Z]))


def _run_radial(config, ens, manifest, snapshot_every, snapshot_fields, pad_factor, callback):
    template = GridField.zeros(config.grid_n, config.box_half_width, 1, pad_factor)
    shells = RadialEnsemble.from_markers(ens)
    r_min = 1e-6 * config.R0
    every = snapshot_cadence(config) if snapshot_every is None else snapshot_every
    series, snaps, prev = [], [], None
    result = RunResult(manifest, series, snaps)
    zero = template.zeros_like(3)
    try:
        for k in range(config.n_steps + 1):
            t = k * config.dt
            shells = shells.replace(t=t)
            markers = shells.to_markers(ens.f0_value)
            mom = deposit_moments(markers, template, current=True, tensor=False)
            table = EnclosedCharge.from_shells(shells.r, shells.w)
            e_l = radial_grid_field(table, template)
            state = FieldState(template.zeros_like(1), zero, e_l, zero, zero)
            grads = {"e_l": spectral_jacobian(e_l), "e_t": template.zeros_like(9), "b": template.zeros_like(9)}
            prev = record_step(mom, state, markers, t, prev, grads)
            series.append(prev)
            manifest.fixed_point_iters.append(0)
            if every and k % every == 0:
                snaps.append(_snapshot_entry(k, t, mom, state, snapshot_fields))
            if callback is not None:
                callback(k, shells, mom, state)
            if k == config.n_steps:
                break
            shells = push_radial(shells, config.dt, r_min=r_min)
            if np.any(shells.r >= config.box_half_width):
                i = int(np.argmax(shells.r))
                raise MarkerEscapeError(i, shells.positions()[i], shells.t)
    except MarkerEscapeError as exc:
        manifest.termination_reason = "marker_escape"
        manifest.message = str(exc)
    manifest.reflections = int(shells.reflections)
    manifest.end_time = _now()
    result.ensemble = shells
    return result


# --------------------------------------------------------------------------
# radial comparison


@dataclass
class RadialComparison:
    darwin: RunResult
    radial: RunResult
    b_ratio: float
    et_ratio: float
    rho_rel_diff: float
    max_el: float

    def passed(self, field_tol=1e-6, rho_tol=0.05) -> bool:
        return self.b_ratio <= field_tol and self.et_ratio <= field_tol and self.rho_rel_diff <= rho_tol


def compare_radial(config: SimConfig, ensemble: ParticleEnsemble | None = None) -> RadialComparison:
    """Full Darwin run and shell reference from the same (radial) markers."""
    if ensemble is None:
        ensemble = sample_particles(build_initial_datum(config), config)
    d = run_simulation(config.replace(mode="darwin"), ensemble=ensemble, snapshot_every=0)
    r = run_simulation(config.replace(mode="radial_reference"), ensemble=ensemble, snapshot_every=0)
    max_el = max(s.sup_el for s in d.series)
    b = max(s.sup_b for s in d.series) / max_el if max_el > 0 else 0.0
    et = max(s.sup_et for s in d.series) / max_el if max_el > 0 else 0.0
    diffs = [abs(a.sup_rho - c.sup_rho) / c.sup_rho for a, c in zip(d.series, r.series) if c.sup_rho > 0]
    return RadialComparison(d, r, b, et, max(diffs) if diffs else 0.0, max_el)


# --------------------------------------------------------------------------
# studies


@dataclass
class StudySpec:
    base: SimConfig
    variable: str
    values: tuple
    window: tuple | None = None

    def __post_init__(self):
        if self.variable not in ("amplitude", "grid_n", "particle_count"):
            raise ValueError(f"cannot sweep {self.variable!r}")
        self.values = tuple(self.values)
        if len(self.values) < 1:
            raise ValueError("sweep needs at least one value")
        d = np.diff(np.asarray(self.values, dtype=float))
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("sweep values must be strictly monotone")

    def configs(self):
        cast = float if self.variable == "amplitude" else int
        return [self.base.replace(**{self.variable: cast(v)}) for v in self.values]


@dataclass
class StudyMember:
    value: float
    manifest: RunManifest
    series: list
    alpha: float
    field_max: float
    fits: dict


@dataclass
class StudyReport:
    spec: StudySpec
    members: list
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(bool(v) for k, v in self.verdicts.items() if k.endswith("ok"))


class StudyFailure(RuntimeError):
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        super().__init__(f"study member terminated with {manifest.termination_reason}: {manifest.message}")


def _strictly_decreasing(xs):
    return all(b < a for a, b in zip(xs, xs[1:]))


def _run_members(spec: StudySpec, **run_kw):
    members = []
    for cfg, val in zip(spec.configs(), spec.values):
        res = run_simulation(cfg, snapshot_every=0, **run_kw)
        if not res.completed:
            raise StudyFailure(res.manifest)
        rep = extract_alpha(res.series)
        fmax = max(r.field_sum for r in res.series)
        win = spec.window or default_fit_window(cfg.R0, cfg.t_end)
        fits = {}
        for sel in ("sup_rho", "fields", "gradients"):
            try:
                fits[sel] = fit_decay_exponent(res.series, sel, win)
            except ValueError:
                pass
        members.append(StudyMember(val, res.manifest, res.series, rep.alpha, fmax, fits))
    return members


def run_smallness_study(spec: StudySpec, **run_kw) -> StudyReport:
    """Amplitude sweep: alpha and the field maximum must fall strictly as the amplitude falls."""
    if spec.variable != "amplitude":
        raise ValueError("smallness study sweeps the amplitude")
    if len(spec.values) < 3:
        raise ValueError("smallness study needs at least three amplitudes")
    members = _run_members(spec, **run_kw)
    order = np.argsort([-m.value for m in members])
    alphas = [members[i].alpha for i in order]
    fmax = [members[i].field_max for i in order]
    verdicts = {"alpha_decreasing_ok": _strictly_decreasing(alphas) or all(a == 0 for a in alphas),
                "field_max_decreasing_ok": _strictly_decreasing(fmax) or all(a == 0 for a in fmax),
                "completed_ok": all(m.manifest.termination_reason == "completed" for m in members)}
    smallest = members[order[-1]]
    if spec.base.mode == "darwin" and {"fields", "gradients"} <= smallest.fits.keys():
        rep = extract_alpha(smallest.series)
        v = check_bootstrap(rep, (smallest.fits["fields"], smallest.fits["gradients"]))
        verdicts["bootstrap_passed"] = v.passed
        verdicts["bootstrap_margins"] = (v.field_margin, v.gradient_margin)
    return StudyReport(spec, members, verdicts)


def run_refinement_study(spec: StudySpec, selector="sup_rho", max_shift=0.05, **run_kw) -> StudyReport:
    """Sweep grid_n or particle_count and compare fitted exponents."""
    members = _run_members(spec, **run_kw)
    ex = [m.fits[selector].exponent for m in members if selector in m.fits]
    shift = float(max(ex) - min(ex)) if ex else float("nan")
    return StudyReport(spec, members, {"exponents": ex, "exponent_shift": shift,
                                       "exponent_shift_ok": bool(shift <= max_shift)})


def run_study(spec: StudySpec, **run_kw) -> StudyReport:
    if spec.variable == "amplitude":
        return run_smallness_study(spec, **run_kw)
    return run_refinement_study(spec, **run_kw)


# --------------------------------------------------------------------------
# file formats


def _parse_value(name, text, kind):
    try:
        if kind is int:
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"bad value for {name}: {text!r}") from None


_FIELD_TYPES = {f.name: {"int": int, "float": float, "str": str}[f.type] for f in dataclasses.fields(SimConfig)}


def _read_pairs(path):
    pairs = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = val
    return pairs


def parse_config(pairs: dict, source="config") -> SimConfig:
    unknown = set(pairs) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"{source}: unknown keys {sorted(unknown)}")
    kw = {k: _parse_value(k, v, _FIELD_TYPES[k]) for k, v in pairs.items()}
    return SimConfig(**kw)


def read_config(path) -> SimConfig:
    """Flat ``key = value`` file using exactly the SimConfig field names."""
    return parse_config(_read_pairs(path), str(path))


def write_config(config: SimConfig, path):
    lines = [f"{f.name} = {getattr(config, f.name)!r}".replace("'", "") for f in dataclasses.fields(config)]
    Path(path).write_text("\n".join(lines) + "\n")


STUDY_KEYS = ("sweep_variable", "sweep_values", "fit_window")


def read_study_config(path) -> StudySpec:
    """SimConfig keys for the base run plus ``sweep_variable``, ``sweep_values``
    (comma separated) and optionally ``fit_window`` (two numbers)."""
    pairs = _read_pairs(path)
    extra = {k: pairs.pop(k) for k in STUDY_KEYS if k in pairs}
    if "sweep_variable" not in extra or "sweep_values" not in extra:
        raise ValueError(f"{path}: study needs sweep_variable and sweep_values")
    base = parse_config(pairs, str(path))
    vals = [float(v) for v in extra["sweep_values"].split(",") if v.strip()]
    win = None
    if "fit_window" in extra:
        win = tuple(float(v) for v in extra["fit_window"].split(","))
        if len(win) != 2:
            raise ValueError(f"{path}: fit_window needs two numbers")
    return StudySpec(base, extra["sweep_variable"], vals, win)


def write_timeseries(series, path):
    """CSV with the fixed header; every value as %.16e (17 significant digits)."""
    rows = [",".join(COLUMNS)]
    for r in series:
        rows.append(",".join("%.16e" % v for v in r.row()))
    data = ("\n".join(rows) + "\n").encode("ascii")
    _write_all(path, data)


def read_timeseries(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != ",".join(COLUMNS):
        raise ValueError(f"{path}: unexpected header")
    out = []
    for line in lines[1:]:
        vals = [float(v) for v in line.split(",")]
        kw = dict(zip(COLUMNS, vals))
        kw["fixed_point_iters"] = int(kw.pop("fp_iters"))
        out.append(TimeSeriesRecord(**kw))
    return out


SNAPSHOT_MAGIC = b"VDGF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


@dataclass
class Snapshot:
    n: int
    components: int
    extent: float
    values: np.ndarray  # (components, n+1, n+1, n+1), physical box only

    def to_grid(self, pad_factor=2) -> GridField:
        g = GridField.zeros(self.n, self.extent, self.components, pad_factor)
        s = g.interior_slice
        g.values[:, s, s, s] = self.values
        return g


def write_snapshot(field_: GridField, path):
    """Binary dump of the physical box: header then row-major little-endian f64 samples."""
    head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, field_.n, field_.components, field_.extent)
    body = np.ascontiguousarray(field_.interior, dtype="<f8").tobytes()
    _write_all(path, head + body)


def read_snapshot(path) -> Snapshot:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, comps, extent = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a grid snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    count = comps * (n + 1) ** 3
    if len(data) != _HEADER.size + 8 * count:
        raise ValueError(f"{path}: expected {count} samples, file has {(len(data) - _HEADER.size) // 8}")
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(comps, n + 1, n + 1, n + 1)
    return Snapshot(n, comps, extent, vals.astype(float))


def _write_all(path, data: bytes):
    path = Path(path)
    with open(path, "wb") as fh:
        written = fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    if written != len(data):
        raise OSError(f"short write to {path}: {written} of {len(data)} bytes")


def write_run(result: RunResult, out_dir):
    """timeseries.csv, manifest.json and snapshots/<name>_<step>.vdgf."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_timeseries(result.series, out / "timeseries.csv")
    (out / "manifest.json").write_text(result.manifest.to_json() + "\n")
    if result.snapshots:
        sd = out / "snapshots"
        sd.mkdir(exist_ok=True)
        for snap in result.snapshots:
            for name, g in snap.items():
                if isinstance(g, GridField):
                    write_snapshot(g, sd / f"{name}_{snap['step']:05d}.vdgf")
    return out
