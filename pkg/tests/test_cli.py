import json
import subprocess
import sys
from pathlib import Path

import pytest

from manet_capacity import experiments as ex
from manet_capacity.analytic import NetworkConfig, contact_probabilities
from manet_capacity.cli import main

RECIPES = Path(__file__).resolve().parents[1] / "recipes"
NET = ["--nodes", "72", "--cells", "36", "--buffer", "5"]


def test_analyze_capacity(capsys):
    assert main(["analyze", *NET, "--capacity"]) == 0
    out = capsys.readouterr().out
    assert "T_c = 0.0232" in out


@pytest.mark.parametrize("b,expected", [(5, 0.0232), (8, 0.0283), (10, 0.0315)])
def test_analyze_capacity_json(capsys, b, expected):
    assert main(["analyze", "--nodes", "72", "--cells", "36", "--buffer", str(b), "--capacity", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["throughput_capacity"] == pytest.approx(expected, abs=5e-4)


def test_analyze_zero_load(capsys):
    assert main(["analyze", *NET, "--lambda", "0", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    cp = contact_probabilities(NetworkConfig(72, 36, 5))
    assert doc["p_full"] == 0
    assert doc["mu_s"] == cp.p_sd + cp.p_sr
    assert doc["relay_distribution"] == [1, 0, 0, 0, 0, 0]


def test_analyze_text_and_manifest(tmp_path, capsys):
    assert main(["analyze", *NET, "--lambda", "0.01", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "P_B = " in out and "E[D_S] = " in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["resolved"]["network"] == {"n_nodes": 72, "n_cells": 36, "buffer_size": 5}
    assert json.loads((tmp_path / "analysis.json").read_text())["lambda"] == 0.01


@pytest.mark.parametrize("argv", [
    ["analyze", "--nodes", "3", "--cells", "2", "--buffer", "1", "--capacity"],
    ["analyze", "--nodes", "72", "--cells", "36", "--buffer", "0", "--capacity"],
    ["analyze", *NET],
    ["analyze", *NET, "--lambda", "0.01", "--capacity"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_unstable_load_exits_one(capsys):
    assert main(["analyze", *NET, "--lambda", "0.03"]) == 1
    assert "unstable load" in capsys.readouterr().err


def test_simulate_twice_gives_identical_files(tmp_path, monkeypatch):
    argv = ["simulate", *NET, "--rho", "0.5", "--slots", "60000", "--seed", "5", "--replications", "2", "--trace"]
    outs = []
    for name in ("a", "b"):
        monkeypatch.setenv("MANET_CAPACITY_OUT", str(tmp_path / name))
        assert main(argv) == 0
        outs.append(tmp_path / name)
    for f in ("manifest.json", "stats.json", "trace.ndjson"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    stats = json.loads((outs[0] / "stats.json").read_text())
    assert len(stats["replications"]) == 2
    assert json.loads((outs[0] / "manifest.json").read_text())["resolved"]["warmup_slots"] == 6000


def test_simulate_walk_needs_square_cells(tmp_path, capsys):
    argv = ["simulate", "--nodes", "72", "--cells", "35", "--buffer", "5", "--lambda", "0.01",
            "--mobility", "walk", "--slots", "1000", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "square" in capsys.readouterr().err


def test_sweep_buffer_recipe_is_monotone(tmp_path):
    assert main(["sweep", "--spec", str(RECIPES / "fig6_capacity_vs_buffer.json"), "--out", str(tmp_path),
                 "--quiet"]) == 0
    rows = ex.read_csv(tmp_path / "results.csv")
    assert len(rows) == 60
    for n in ("16", "72"):
        tcs = [float(r["tc_analytic"]) for r in rows if r["N"] == n]
        assert all(b >= a for a, b in zip(tcs, tcs[1:]))
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "complete"


def test_sweep_service_curve_recipe(tmp_path):
    assert main(["sweep", "--spec", str(RECIPES / "fig4_mu_curves.json"), "--out", str(tmp_path), "--quiet"]) == 0
    rows = ex.read_csv(tmp_path / "results.csv")
    for b, expected in (("5", 0.0232), ("8", 0.0283), ("10", 0.0315)):
        curve = [(float(r["lambda"]), float(r["mu_s_analytic"])) for r in rows if r["B"] == b]
        k = next(j for j, (lam, mu) in enumerate(curve) if mu < lam)
        (l0, m0), (l1, m1) = curve[k - 1], curve[k]
        cross = l0 + (m0 - l0) / ((m0 - l0) - (m1 - l1)) * (l1 - l0)
        assert cross == pytest.approx(expected, abs=5e-4)


def test_sweep_empty_grid_is_a_schema_error(tmp_path, capsys):
    spec = tmp_path / "empty.json"
    spec.write_text(json.dumps({"grid": [], "loads": {"rho": [0.5]}}))
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 1
    assert "grid" in capsys.readouterr().err


def test_validate_smoke_recipe(tmp_path, capsys):
    assert main(["validate", "--spec", str(RECIPES / "smoke_validation.json"), "--out", str(tmp_path),
                 "--quiet"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"]
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "passed"


def test_validate_failure_exits_two(tmp_path):
    spec = json.loads((RECIPES / "smoke_validation.json").read_text())
    spec["tolerances"] = {"linear": 1e-9, "saturated": 1e-9, "mobility_gap": 1e-9}
    path = tmp_path / "strict.json"
    path.write_text(json.dumps(spec))
    assert main(["validate", "--spec", str(path), "--out", str(tmp_path / "o"), "--quiet",
                 "--horizon", "50000", "--replications", "1"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "manet_capacity", "analyze", *NET, "--capacity"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "T_c = 0.0232" in proc.stdout
