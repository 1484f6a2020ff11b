"""Command-line harness: subcommands, artifacts, exit codes."""

import json
from pathlib import Path

import pytest

from gridcharge.cli import main


def run_cli(*argv):
    return main(list(argv))


def test_validate_exits_zero(capsys):
    assert run_cli("validate") == 0
    out = capsys.readouterr().out
    assert "ok      case case9" in out


def test_unknown_config_field_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"frobnicate": 1}))
    assert run_cli("run", "--config", str(cfg)) == 2
    assert "unknown fields" in capsys.readouterr().err


def test_missing_case_file_rejected(capsys):
    assert run_cli("run", "--case", "/no/such/case.json",
                   "--pevs-per-station", "0") == 2


def test_run_writes_artifacts(tmp_path, capsys):
    code = run_cli(
        "run", "--case", "case3", "--profile", "profile1", "--mode", "static",
        "--seed", "2", "--pevs-per-station", "1", "--out", str(tmp_path))
    assert code == 0
    stem = "case3-static-seed2"
    report = json.loads((tmp_path / f"{stem}-report.json").read_text())
    assert report["mode"] == "static"
    assert report["config"]["seed"] == 2
    schedule = (tmp_path / f"{stem}-schedule.csv").read_text().splitlines()
    assert schedule[0].startswith("task_id,")
    generation = (tmp_path / f"{stem}-generation.csv").read_text().splitlines()
    assert generation[0] == "slot,bus,p_gen_pu,q_gen_pu,v_mag_pu"
    assert (tmp_path / f"{stem}-summary.txt").exists()
    out = capsys.readouterr().out
    assert "stage-2 value" in out


def test_run_reproducible_from_config_echo(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("run", "--case", "case3", "--profile", "profile2",
                   "--mode", "static", "--seed", "3", "--pevs-per-station",
                   "1", "--out", str(out1)) == 0
    report = json.loads(
        (out1 / "case3-static-seed3-report.json").read_text())
    cfg = tmp_path / "echo.json"
    echo = {k: v for k, v in report["config"].items()}
    echo["out"] = str(out2)
    cfg.write_text(json.dumps(echo))
    assert run_cli("run", "--config", str(cfg)) == 0
    again = json.loads((out2 / "case3-static-seed3-report.json").read_text())
    assert abs(again["totals"]["total_cost"]
               - report["totals"]["total_cost"]) <= 1e-9


def test_compare_refuses_mismatched_seeds(tmp_path, capsys):
    for seed in (1, 2):
        assert run_cli("run", "--case", "case3", "--profile", "profile1",
                       "--mode", "static", "--seed", str(seed),
                       "--pevs-per-station", "1", "--out", str(tmp_path)) == 0
    code = run_cli("compare",
                   str(tmp_path / "case3-static-seed1-report.json"),
                   str(tmp_path / "case3-static-seed2-report.json"))
    assert code == 2
    assert "not comparable" in capsys.readouterr().err


def test_compare_identical_reports_zero_gap(tmp_path, capsys):
    assert run_cli("run", "--case", "case3", "--profile", "profile1",
                   "--mode", "static", "--seed", "4", "--pevs-per-station",
                   "1", "--out", str(tmp_path)) == 0
    path = str(tmp_path / "case3-static-seed4-report.json")
    assert run_cli("compare", path, path) == 0
    out = capsys.readouterr().out
    assert "reported gap (dynamic - static): +0.0000" in out


def test_oracle_subcommand(capsys):
    assert run_cli("oracle", "--case", "case3", "--seed", "1") == 0
    out = capsys.readouterr().out
    assert "PASS" in out


def test_oracle_requires_single_generator(capsys):
    assert run_cli("oracle", "--case", "case9", "--seed", "1") == 2


def test_run_with_fleet_file_and_traces(tmp_path):
    import json as _json

    fleet = [{"station": 1, "index": 1, "arrival": 1, "departure": 4,
              "capacity_kwh": 2500.0, "initial_soc": 0.2, "rate_kw": 2000.0,
              "efficiency": 1.0, "required": 2}]
    fleet_path = tmp_path / "fleet.json"
    fleet_path.write_text(_json.dumps(fleet))
    code = run_cli("run", "--case", "case3", "--profile", "profile1",
                   "--mode", "dynamic", "--seed", "9", "--fleet",
                   str(fleet_path), "--traces", "--out", str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "case3-dynamic-seed9-report.json").read_text())
    assert len(report["tasks"]) == 1
    assert report["tasks"][0]["completed"]
    emitted = list(tmp_path.glob("case3-dynamic-seed9-stage*-slot*.csv"))
    assert emitted, "expected per-solve trace CSVs"
    head = emitted[0].read_text().splitlines()[0]
    assert head.startswith("kappa,")
    again = json.loads((tmp_path / "case3-dynamic-seed9-fleet.json").read_text())
    assert again[0]["station"] == 1
