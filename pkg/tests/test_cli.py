"""Command-line surface: exit codes, artifact formats, determinism.

Oracles are structural: CSV column layouts and the snapshot byte format
are pinned by hand-written readers here, independent of the writers.
Determinism is checked by comparing bytes across repeat runs and across
thread counts.
"""

import json
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from twave.cli import main
from twave.snapshots import read_snapshot, write_snapshot

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_cli(*argv):
    return main(list(argv))


def write_config(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


BASE_GEOMETRY = """
geometry.inner.pole = [0.0, 0.0]
geometry.inner.fourier = [1.0]
geometry.outer.pole = [0.0, 0.0]
geometry.outer.fourier = [2.0]
geometry.a1 = 2.0
geometry.a2 = 1.0
"""

WEIGHTS_BLOCK = """
weights.beta = 0.01
weights.gamma = 0.03
weights.M2 = 2.0
weights.T = 0.6
weights.pole = [0.0, 0.0]
weights.eps = 0.3
weights.eps1 = 0.1
weights.eps2 = 0.2
weights.pole2 = [0.25, 0.1]
weights.pole2_eps = [0.25, 0.08, 0.16]
"""


class TestParsingAndErrors:
    def test_missing_config_file(self, tmp_path):
        assert run_cli("geometry", "check", str(tmp_path / "nope.toml")) == 1

    def test_unknown_keys_listed(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "bad.toml", BASE_GEOMETRY + """
output.dir = "o"
geometry.typo_key = 1
sweep.s = [1.0]
""")
        assert run_cli("geometry", "check", str(cfg)) == 1
        err = capsys.readouterr().err
        assert "geometry.typo_key" in err and "sweep.s" in err

    def test_malformed_toml(self, tmp_path):
        cfg = write_config(tmp_path, "bad.toml", "geometry.a1 = = 2\n")
        assert run_cli("geometry", "check", str(cfg)) == 1

    def test_usage_error_is_exit_1(self):
        assert run_cli("geometry") == 1
        assert run_cli("nonsense", "check", "x.toml") == 1

    def test_missing_required_key(self, tmp_path):
        cfg = write_config(tmp_path, "c.toml",
                           'geometry.inner.pole = [0.0, 0.0]\noutput.dir = "o"\n')
        assert run_cli("geometry", "check", str(cfg)) == 1


class TestGeometryAndWindow:
    def test_geometry_report(self, tmp_path):
        cfg = write_config(tmp_path, "g.toml", BASE_GEOMETRY
                           + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("geometry", "check", str(cfg)) == 0
        rows = (tmp_path / "out" / "geometry_check.csv").read_text().splitlines()
        assert rows[0] == "quantity,value,threshold,pass"
        assert len(rows) == 5
        assert all(r.endswith("true") for r in rows[1:])
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert "geometry_check.csv" in manifest["outputs"]
        assert manifest["config_sha256"]

    def test_dumbbell_fails_convexity_row(self, tmp_path):
        cfg = write_config(tmp_path, "g.toml", """
geometry.inner.pole = [0.0, 0.0]
geometry.inner.fourier = [1.0, 0.0, 0.0, 0.6]
geometry.outer.pole = [0.0, 0.0]
geometry.outer.fourier = [3.0]
geometry.a1 = 2.0
geometry.a2 = 1.0
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("geometry", "check", str(cfg)) == 0
        text = (tmp_path / "out" / "geometry_check.csv").read_text()
        assert "inner_strictly_convex" in text
        assert any(line.endswith("false")
                   for line in text.splitlines() if "convex" in line)

    def test_window_feasible_and_infeasible(self, tmp_path):
        body = BASE_GEOMETRY + """
window.delta1 = 2.0
window.M = 2.0
window.T = 1.0
window.diam = 4.0
window.norm_lap = 8.0
window.beta = [0.001, 0.05]
""" + f'output.dir = "{tmp_path}/out"\n'
        cfg = write_config(tmp_path, "w.toml", body)
        assert run_cli("weights", "window", str(cfg)) == 0
        rows = (tmp_path / "out" / "window.csv").read_text().splitlines()
        assert rows[0] == "condition,gamma_lo,gamma_hi,pass"
        feasible = [r for r in rows[1:] if r.endswith("true")]
        assert len(feasible) == 1 and "0.001" in feasible[0]

    def test_window_all_infeasible_exits_2(self, tmp_path):
        body = BASE_GEOMETRY + """
window.delta1 = 2.0
window.M = 2.0
window.T = 1.0
window.diam = 4.0
window.norm_lap = 8.0
window.beta = [0.05, 0.2]
""" + f'output.dir = "{tmp_path}/out"\n'
        cfg = write_config(tmp_path, "w.toml", body)
        assert run_cli("weights", "window", str(cfg)) == 2
        assert (tmp_path / "out" / "window.csv").exists()


class TestForwardRun:
    def test_zero_data_zero_snapshots(self, tmp_path):
        cfg = write_config(tmp_path, "f.toml", BASE_GEOMETRY + """
grid.nx = 32
grid.T = 0.3
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("forward", "run", str(cfg), "--snapshot-every", "8") == 0
        snaps = sorted((tmp_path / "out").glob("u_*.twv"))
        assert len(snaps) >= 3
        for snap in snaps:
            field, h, t = read_snapshot(snap)
            assert np.all(field == 0.0)

    def test_snapshot_roundtrip_and_header(self, tmp_path):
        field = np.arange(12.0).reshape(3, 4)
        p = tmp_path / "x.twv"
        write_snapshot(p, field, 0.25, 1.5)
        raw = p.read_bytes()
        assert raw[:4] == b"TWV1"
        nx, ny = struct.unpack_from("<II", raw, 4)
        assert (nx, ny) == (4, 3)
        h, t = struct.unpack_from("<dd", raw, 12)
        assert (h, t) == (0.25, 1.5)
        back, h2, t2 = read_snapshot(p)
        np.testing.assert_array_equal(back, field)

    def test_trace_csv_columns(self, tmp_path):
        cfg = write_config(tmp_path, "f.toml", BASE_GEOMETRY + """
grid.nx = 32
grid.T = 0.2
forward.amp = 1.0
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("forward", "run", str(cfg)) == 0
        rows = (tmp_path / "out" / "trace.csv").read_text().splitlines()
        assert rows[0] == "time,point_index,arc_length,value"
        assert len(rows) > 100


class TestRays:
    def test_trace_event_csv(self, tmp_path):
        cfg = write_config(tmp_path, "r.toml", BASE_GEOMETRY + """
rays.origin = [0.0, 0.0]
rays.angle_deg = 10.0
rays.max_events = 16
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("rays", "trace", str(cfg)) == 0
        rows = (tmp_path / "out" / "ray_events.csv").read_text().splitlines()
        assert rows[0] == "event,kind,x,y,time"
        assert rows[-1].split(",")[1] == "exit"

    def test_envelope_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, "r.toml", BASE_GEOMETRY + """
rays.records = 32
rays.grid_n = 128
rays.pgm = true
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("rays", "envelope", str(cfg)) == 0
        pgm = (tmp_path / "out" / "envelope.pgm").read_bytes()
        assert pgm.startswith(b"P5 128 128 255\n")
        assert len(pgm) == len(b"P5 128 128 255\n") + 128 * 128
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["hausdorff"] < 0.1
        rows = (tmp_path / "out" / "contour.csv").read_text().splitlines()
        assert rows[0] == "x,y" and len(rows) > 50


def sweep_config(tmp_path, out="out", trials=2, s="[0.08, 0.16]"):
    return write_config(tmp_path, f"s_{out}.toml", BASE_GEOMETRY + WEIGHTS_BLOCK + f"""
grid.nx = 32
grid.T = 0.6
grid.t0 = -0.6
sweep.s = {s}
sweep.lambda = [0.3]
sweep.trials = {trials}
sweep.seed = 11
""" + f'output.dir = "{tmp_path}/{out}"\n')


class TestCarleman:
    def test_sweep_csv_and_onset_report(self, tmp_path, capsys):
        cfg = sweep_config(tmp_path)
        assert run_cli("carleman", "sweep", str(cfg)) == 0
        rows = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert rows[0] == "s,lambda,ensemble_max_ratio,lhs,rhs"
        assert len(rows) == 3
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 11

    def test_single_point_sweep_onset_undetermined(self, tmp_path, capsys):
        cfg = sweep_config(tmp_path, out="single", s="[1.0]")
        assert run_cli("carleman", "sweep", str(cfg)) == 0
        out = capsys.readouterr().out
        assert "onset undetermined" in out
        manifest = json.loads((tmp_path / "single" / "manifest.json").read_text())
        assert manifest["onsets"]["0.3"] == "onset undetermined"

    def test_identity_csv(self, tmp_path):
        cfg = write_config(tmp_path, "i.toml", BASE_GEOMETRY + """
weights.beta = 0.01
weights.gamma = 0.03
weights.M2 = 2.0
weights.pole = [0.0, 0.0]
weights.eps = 0.3
weights.eps1 = 0.1
weights.eps2 = 0.2
identity.nx = [32, 64]
identity.T = 0.3
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("carleman", "identity", str(cfg)) == 0
        rows = (tmp_path / "out" / "identity.csv").read_text().splitlines()
        assert rows[0] == "h,residual,order"
        assert len(rows) == 3
        assert float(rows[2].split(",")[2]) > 1.5


class TestDeterminism:
    def test_repeat_runs_byte_identical(self, tmp_path):
        cfg_a = sweep_config(tmp_path, out="a")
        cfg_b = sweep_config(tmp_path, out="b")
        assert run_cli("carleman", "sweep", str(cfg_a)) == 0
        assert run_cli("carleman", "sweep", str(cfg_b)) == 0
        a = (tmp_path / "a" / "sweep.csv").read_bytes()
        b = (tmp_path / "b" / "sweep.csv").read_bytes()
        assert a == b

    def test_thread_count_does_not_change_csv(self, tmp_path):
        # subprocesses because the thread cap is read from the environment
        outputs = {}
        for threads in ("1", "4"):
            out = tmp_path / f"t{threads}"
            cfg = sweep_config(tmp_path, out=f"t{threads}", trials=4)
            proc = subprocess.run(
                [sys.executable, "-m", "twave.cli", "carleman", "sweep",
                 str(cfg)],
                env={"TWV_THREADS": threads, "PATH": "/usr/bin:/bin",
                     "HOME": "/root"},
                capture_output=True, text=True, cwd=str(tmp_path))
            assert proc.returncode == 0, proc.stderr
            outputs[threads] = (out / "sweep.csv").read_bytes()
        assert outputs["1"] == outputs["4"]


class TestInvert:
    def test_stability_csv(self, tmp_path):
        cfg = write_config(tmp_path, "st.toml", BASE_GEOMETRY + WEIGHTS_BLOCK + """
grid.nx = 32
grid.T = 2.0
invert.trials = 3
invert.seed = 5
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("invert", "stability", str(cfg)) == 0
        rows = (tmp_path / "out" / "stability.csv").read_text().splitlines()
        assert rows[0] == "trial,l2_diff,flux_h1,ratio"
        assert len(rows) == 4
        vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        assert np.all(vals[:, 3] > 0.0)

    def test_linearized_reconstruct_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, "re.toml", BASE_GEOMETRY + """
grid.nx = 32
grid.T = 2.5
invert.task = "linearized"
invert.mu = 1e-8
invert.cg_maxiter = 25
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("invert", "reconstruct", str(cfg)) == 0
        field, h, t = read_snapshot(tmp_path / "out" / "f_hat.twv")
        assert field.shape == (32, 32)
        assert np.isfinite(field).all() and np.max(np.abs(field)) > 0.0
        rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
        assert rows[0] == "iter,residual,update_norm"
        res = [float(r.split(",")[1]) for r in rows[1:]]
        assert res[-1] < res[0]

    def test_bad_task_rejected(self, tmp_path):
        cfg = write_config(tmp_path, "re.toml", BASE_GEOMETRY + """
grid.nx = 32
grid.T = 1.0
invert.task = "nonsense"
""" + f'output.dir = "{tmp_path}/out"\n')
        assert run_cli("invert", "reconstruct", str(cfg)) == 1


class TestBundledConfigs:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
    def test_bundled_config_parses(self, name):
        from twave.config import flatten, load_config, validate_keys, KEYSETS
        flat = flatten(load_config(CONFIGS / name))
        matches = [sub for sub in KEYSETS
                   if not [k for k in flat if k not in KEYSETS[sub]]]
        assert matches, f"{name} fits no subcommand schema"
