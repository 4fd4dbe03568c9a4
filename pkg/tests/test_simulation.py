import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasov_darwin.core_state import GridField, ParticleEnsemble, SimConfig, build_initial_datum, sample_particles
from vlasov_darwin.diagnostics import TimeSeriesRecord
from vlasov_darwin.simulation import (
    RunManifest, StudySpec, compare_radial, read_config, read_snapshot, read_study_config, read_timeseries,
    run_simulation, run_study, snapshot_cadence, write_config, write_run, write_snapshot, write_timeseries,
)

SMALL = SimConfig(grid_n=16, box_half_width=4.0, t_end=2.0, dt=0.5, particle_count=3000)


class TestConfigFiles:
    def test_round_trip(self, tmp_path):
        cfg = SMALL.replace(mode="electrostatic", amplitude=2.5e-4, seed=9)
        write_config(cfg, tmp_path / "a.cfg")
        assert read_config(tmp_path / "a.cfg") == cfg

    def test_comments_and_partial(self, tmp_path):
        (tmp_path / "b.cfg").write_text("# weak field\nmode = free_stream  # no fields\nt_end=3\nbox_half_width = 4\n")
        cfg = read_config(tmp_path / "b.cfg")
        assert cfg.mode == "free_stream" and cfg.t_end == 3.0 and cfg.grid_n == 32

    @pytest.mark.parametrize("text,match", [
        ("colour = red\n", "unknown keys"),
        ("grid_n = 32.5\n", "bad value"),
        ("dt\n", "key = value"),
        ("dt = 1\ndt = 2\n", "duplicate"),
        ("mode = maxwell\n", "unknown mode"),
    ])
    def test_rejects(self, tmp_path, text, match):
        (tmp_path / "c.cfg").write_text(text)
        with pytest.raises(ValueError, match=match):
            read_config(tmp_path / "c.cfg")

    def test_study_file(self, tmp_path):
        (tmp_path / "s.cfg").write_text(
            "mode = darwin\nsweep_variable = amplitude\nsweep_values = 1e-2, 1e-3, 1e-4\nfit_window = 5, 8\n")
        spec = read_study_config(tmp_path / "s.cfg")
        assert spec.variable == "amplitude" and spec.values == (1e-2, 1e-3, 1e-4) and spec.window == (5.0, 8.0)
        assert [c.amplitude for c in spec.configs()] == [1e-2, 1e-3, 1e-4]
        (tmp_path / "t.cfg").write_text("mode = darwin\n")
        with pytest.raises(ValueError, match="sweep_variable"):
            read_study_config(tmp_path / "t.cfg")

    def test_study_spec_validation(self):
        with pytest.raises(ValueError):
            StudySpec(SMALL, "dt", (0.1, 0.2))
        with pytest.raises(ValueError, match="monotone"):
            StudySpec(SMALL, "amplitude", (1e-2, 1e-4, 1e-3))


class TestTimeseries:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 1e300, allow_subnormal=True), min_size=11, max_size=11), st.integers(0, 20))
    def test_bit_exact_round_trip(self, tmp_path_factory, vals, iters):
        rec = TimeSeriesRecord(*vals, fixed_point_iters=iters)
        p = tmp_path_factory.mktemp("ts") / "timeseries.csv"
        write_timeseries([rec, rec], p)
        back = read_timeseries(p)
        assert back == [rec, rec]

    def test_header(self, tmp_path):
        write_timeseries([], tmp_path / "x.csv")
        head = (tmp_path / "x.csv").read_text().splitlines()[0]
        assert head.startswith("t,sup_rho,sup_j,sup_el") and head.endswith("fp_iters")
        (tmp_path / "y.csv").write_text("time,rho\n")
        with pytest.raises(ValueError):
            read_timeseries(tmp_path / "y.csv")


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        g = GridField.zeros(16, 3.0, 3)
        rng = np.random.default_rng(0)
        s = g.interior_slice
        g.values[:, s, s, s] = rng.normal(size=(3, 17, 17, 17))
        write_snapshot(g, tmp_path / "e.vdgf")
        snap = read_snapshot(tmp_path / "e.vdgf")
        assert (snap.n, snap.components, snap.extent) == (16, 3, 3.0)
        assert np.array_equal(snap.values, g.interior)
        assert np.array_equal(snap.to_grid().values, g.values)
        assert (tmp_path / "e.vdgf").stat().st_size == 24 + 8 * 3 * 17**3

    def test_corrupt_files(self, tmp_path):
        g = GridField.zeros(16, 3.0, 1)
        write_snapshot(g, tmp_path / "a.vdgf")
        data = (tmp_path / "a.vdgf").read_bytes()
        (tmp_path / "short.vdgf").write_bytes(data[:-8])
        (tmp_path / "magic.vdgf").write_bytes(b"XXXX" + data[4:])
        (tmp_path / "tiny.vdgf").write_bytes(data[:10])
        for name, match in (("short", "expected"), ("magic", "not a grid"), ("tiny", "truncated")):
            with pytest.raises(ValueError, match=match):
                read_snapshot(tmp_path / f"{name}.vdgf")


class TestRuns:
    @pytest.mark.parametrize("mode", ["free_stream", "electrostatic", "darwin", "radial_reference"])
    def test_modes_complete_and_conserve_charge(self, mode):
        res = run_simulation(SMALL.replace(mode=mode), snapshot_every=0)
        assert res.completed
        assert [r.t for r in res.series] == [0.0, 0.5, 1.0, 1.5, 2.0]
        q = {r.total_charge for r in res.series}
        assert len(q) == 1
        assert all(b.q_t >= a.q_t for a, b in zip(res.series, res.series[1:]))
        if mode == "darwin":
            assert all(1 <= r.fixed_point_iters <= 20 for r in res.series)
        if mode in ("free_stream", "radial_reference"):
            assert all(r.sup_et == 0 and r.sup_b == 0 for r in res.series)

    def test_deterministic(self):
        a = run_simulation(SMALL, snapshot_every=0)
        b = run_simulation(SMALL, snapshot_every=0)
        assert a.series == b.series

    def test_fixed_point_divergence_is_recorded(self):
        res = run_simulation(SMALL.replace(fixed_point_tol=1e-300, fixed_point_max_iter=1), snapshot_every=0)
        assert res.manifest.termination_reason == "fixed_point_divergence"
        assert res.manifest.extra["residual_history"]
        assert len(res.series) == 0

    def test_marker_escape_is_recorded(self):
        cfg = SMALL.replace(mode="free_stream")
        x = np.array([[3.8, 0.0, 0.0], [0.0, 0.0, 0.0]])
        p = np.array([[5.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        ens = ParticleEnsemble(x, p, np.ones(2), np.ones(2), 0.0)
        res = run_simulation(cfg, ensemble=ens, snapshot_every=0)
        assert res.manifest.termination_reason == "marker_escape"
        assert "marker 0" in res.manifest.message
        assert len(res.series) == 1

    def test_tracking_free_stream(self):
        cfg = SMALL.replace(mode="free_stream", t_end=2.0)
        res = run_simulation(cfg, track=16, snapshot_every=0)
        assert res.jacobian is not None and res.jacobian.passed
        rel = np.abs(np.abs(res.jacobian.det_dpX) / res.jacobian.free_stream_value - 1)
        assert rel.max() < 1e-10

    def test_amplitude_reduction_recorded(self):
        res = run_simulation(SMALL.replace(amplitude=1.0, t_end=0.5), snapshot_every=0)
        assert res.manifest.effective_amplitude == pytest.approx(1 / 2.17035708571033869)
        assert "reduced" in res.manifest.extra["amplitude_note"]

    def test_snapshot_cadence(self):
        assert snapshot_cadence(SimConfig(t_end=10, dt=0.5)) == 2
        assert snapshot_cadence(SimConfig(t_end=0.5, dt=0.5, box_half_width=2)) == 1


class TestOutput:
    def test_write_run(self, tmp_path):
        res = run_simulation(SMALL, snapshot_every=2, snapshot_fields=("rho", "e_l", "b"))
        out = write_run(res, tmp_path / "run")
        assert read_timeseries(out / "timeseries.csv") == res.series
        man = RunManifest.from_json((out / "manifest.json").read_text())
        assert man.termination_reason == "completed" and man.config["grid_n"] == 16
        assert json.loads((out / "manifest.json").read_text())["seed"] == 0
        names = sorted(p.name for p in (out / "snapshots").iterdir())
        assert names == sorted(f"{f}_{k:05d}.vdgf" for f in ("rho", "e_l", "b") for k in (0, 2, 4))
        rho = read_snapshot(out / "snapshots" / "rho_00004.vdgf")
        assert np.array_equal(rho.values, res.snapshots[-1]["rho"].interior)


def test_radial_comparison_small():
    cfg = SMALL.replace(particle_count=4000)
    cmp = compare_radial(cfg)
    assert cmp.darwin.completed and cmp.radial.completed
    assert cmp.rho_rel_diff < 0.05
    assert cmp.max_el > 0 and cmp.b_ratio < 1e-1


def test_refinement_study_small():
    spec = StudySpec(SMALL.replace(mode="free_stream", t_end=3.0), "particle_count", (1000, 2000), window=(1.0, 3.0))
    rep = run_study(spec)
    assert len(rep.members) == 2 and len(rep.verdicts["exponents"]) == 2
