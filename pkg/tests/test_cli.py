import json
import subprocess
import sys
from pathlib import Path

import pytest

from diracbohm.cli import main

ROOT = Path(__file__).resolve().parents[1]

SMALL_ENSEMBLE = """[run]
task = ensemble
seed = 4

[grid]
q_min = -16
q_max = 16
n_points = 256

[state]
kind = two-packet
sep = 6
width = 0.7
p0a = 1.5
p0b = -1.5

[evolution]
dt = 5e-3
n_steps = 120

[ensemble]
n_paths = 20000
min_count = 50
times = 0.3
n_sigma = 5
write_paths = 16
thin = 10
reintegrate_seed = 0.0
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _report(d):
    return json.loads((Path(d) / "report.json").read_text())


def test_list_tasks(capsys):
    assert main(["--list-tasks"]) == 0
    out = capsys.readouterr().out
    for task in ("evolve", "trajectories", "propagate", "ensemble", "picture-check", "verify"):
        assert task in out


def test_no_task_is_usage_error():
    assert main([]) == 2


def test_config_error_still_writes_report(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nn_points = 100\n")
    out = tmp_path / "o"
    assert main(["evolve", str(cfg), "--output-dir", str(out)]) == 1
    rep = _report(out)
    assert rep["error"]["code"] == "NotPowerOfTwo"
    assert "NotPowerOfTwo" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", str(tmp_path / "absent.ini"), "--output-dir", str(out)]) == 1
    assert _report(out)["error"] is not None


def test_negative_seed_rejected(tmp_path):
    out = tmp_path / "o"
    assert main(["ensemble", str(_write(tmp_path, SMALL_ENSEMBLE)), "--seed", "-1", "--output-dir", str(out)]) == 1
    assert _report(out)["error"]["code"] == "Error"


def test_verify_coherent_config_passes(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["verify", str(ROOT / "configs" / "verify_coherent.ini"), "--output-dir", str(out)]) == 0
    metrics = _report(out)["metrics"]
    assert metrics["qhj_residual"]["pass"] and metrics["continuity_residual"]["pass"]
    assert "PASS qhj_residual" in capsys.readouterr().out


def test_trajectories_config_emits_csv_and_svg(tmp_path):
    out = tmp_path / "t"
    assert main(["trajectories", str(ROOT / "configs" / "trajectories_two_packet.ini"), "--output-dir", str(out)]) == 0
    assert (out / "trajectories.csv").exists()
    assert (out / "trajectories.svg").read_text().count("<polyline") == 100
    assert _report(out)["metrics"]["crossings"]["value"] == 0


def test_failing_metric_gives_exit_one(tmp_path):
    text = """[run]
task = propagate
[grid]
q_min = -10
q_max = 10
n_points = 256
[state]
kind = gaussian
[propagate]
epsilon = 0.02
n_slices = 10
tolerance = 1e-30
"""
    out = tmp_path / "e"
    assert main(["propagate", str(_write(tmp_path, text)), "--output-dir", str(out)]) == 1
    rep = _report(out)
    assert rep["error"] is None
    assert rep["metrics"]["evolve_l2_difference"]["pass"] is False


def _csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


def test_outputs_are_byte_identical_across_runs_and_threads(tmp_path):
    cfg = _write(tmp_path, SMALL_ENSEMBLE)
    runs = []
    for i, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"r{i}"
        main(["ensemble", str(cfg), "--output-dir", str(out), "--threads", str(threads)])
        assert _report(out)["error"] is None
        runs.append(_csv_bytes(out))
    assert "paths.csv" in runs[0] and len(runs[0]) >= 2
    assert runs[0] == runs[1] == runs[2]
    other = tmp_path / "seed5"
    main(["ensemble", str(cfg), "--output-dir", str(other), "--seed", "5"])
    assert _csv_bytes(other)["paths.csv"] != runs[0]["paths.csv"]


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "diracbohm.cli", "--list-tasks"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout
