import csv
import json
import subprocess
import sys

import pytest

from tilc.cli import run_cli


def run(argv, capsys):
    code = run_cli(argv)
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


def test_simulate_identical_plants_zero_metrics(tmp_path, capsys):
    code, doc, _ = run(["--out", str(tmp_path), "simulate", "--identical", "--gains", "0.5,0.2,0.01"], capsys)
    assert code == 0 and doc["status"] == "ok"
    assert doc["metrics"]["rms_r"] == 0.0 and doc["metrics"]["rms_beta"] == 0.0
    assert (tmp_path / "trace.csv").exists()
    assert json.loads((tmp_path / "metrics.json").read_text())["metrics"] == doc["metrics"]


@pytest.mark.parametrize("mode", ["mpc-on-twin", "mpc-open-loop-on-vehicle", "mpc-on-vehicle"])
def test_simulate_modes(mode, tmp_path, capsys):
    code, doc, _ = run(["--out", str(tmp_path), "simulate", "--mode", mode], capsys)
    assert code == 0
    if mode == "mpc-on-twin":
        assert doc["metrics"]["rms_r"] == 0.0


def test_tune_vrft_then_simulate(tmp_path, capsys):
    tdir, sdir = tmp_path / "tune", tmp_path / "sim"
    code, doc, _ = run(["--out", str(tdir), "tune", "--method", "vrft"], capsys)
    assert code == 0 and doc["evaluations"] == 1
    code, doc, _ = run(["--out", str(sdir), "simulate", "--gains-file", str(tdir / "result.json")], capsys)
    assert code == 0 and doc["g_c"] is not None


def test_compare_two_methods_curves(tmp_path, capsys):
    code, doc, _ = run(["--out", str(tmp_path), "compare", "--methods", "smgo,cbo", "--repeats", "2",
                        "--budget", "5"], capsys)
    assert code == 0
    with open(tmp_path / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({r["method"] for r in rows}) == ["cbo", "smgo"]
    assert all(sum(r["method"] == m for r in rows) == 5 for m in ("smgo", "cbo"))


def test_map_and_export(tmp_path, capsys):
    code, doc, _ = run(["--out", str(tmp_path), "map"], capsys)
    assert code == 0 and doc["speeds"] == 20 and doc["steers"] == 81
    assert (tmp_path / "static_map.csv").exists()
    run(["--out", str(tmp_path), "simulate", "--gains", "0.2,0.05,0"], capsys)
    code, doc, _ = run(["--out", str(tmp_path / "exp"), "export", "--trace", str(tmp_path / "trace.csv"),
                        "--calibrate"], capsys)
    assert code == 0 and doc["gamma_u_equal_terms"] > 0
    assert (tmp_path / "exp" / "vehicle_trajectory.csv").exists()
    assert (tmp_path / "exp" / "metrics.csv").read_text().startswith("rms_r_deg_s")


@pytest.mark.parametrize("argv", [
    ["--seed", "-1", "map"],
    ["simulate", "--mode", "til"],
    ["simulate", "--maneuver", "nope", "--gains", "1,1,0"],
    ["--config", "/nonexistent.toml", "map"],
])
def test_errors_are_machine_readable(argv, tmp_path, capsys):
    code, doc, err = run(["--out", str(tmp_path)] + argv, capsys)
    assert code == 1 and doc is None
    assert err["status"] == "error" and err["error"] and err["message"]


def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "tilc.cli", "--out", str(tmp_path), "map"], capture_output=True,
                        text=True)
    assert ok.returncode == 0 and json.loads(ok.stdout)["command"] == "map"
    bad = subprocess.run([sys.executable, "-m", "tilc.cli", "--seed", "-3", "map"], capture_output=True, text=True)
    assert bad.returncode == 1 and json.loads(bad.stderr)["status"] == "error"
