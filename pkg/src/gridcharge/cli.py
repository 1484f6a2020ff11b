"""Command-line harness: run experiments, compare reports, cross-check.

Subcommands:
  run       solve an episode (dynamic or static) and write artifacts
  compare   diff a dynamic report against a static one
  oracle    toy-scale cross-check of the pipeline against full enumeration
  validate  self-checks on the bundled cases and profiles

Exit codes: 0 success, 2 config error, 3 solver failure, 4 infeasible
scenario.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .conic import ConicError
from .grid import CaseError, bundled_case, load_case
from .mpc import (
    ControllerConfig,
    EpisodeError,
    evaluate_schedule_cost,
    run_dynamic,
    run_static,
)
from .oracle import (
    OracleError,
    OracleInfeasible,
    instance_from_scenario,
    make_oracle_scenario,
    oracle_solve,
)
from .scenario import (
    ScenarioError,
    TimeGrid,
    bundled_profile,
    fleet_to_json,
    load_fleet_json,
    load_profile_csv,
    make_scenario,
)

BUNDLED_CASES = ("case3", "case9", "case14", "case30", "case57")

DEFAULTS = {
    "case": "case9",
    "profile": "profile2",
    "mode": "dynamic",
    "seed": 1,
    "pevs_per_station": 42,
    "rate_kw": 20.0,
    "efficiency": 1.0,
    "capacity_kwh": 100.0,
    "initial_soc": 0.2,
    "num_slots": 24,
    "slot_hours": 0.5,
    "mu1": 1.0,
    "mu2": 10.0,
    "exponent": 1.5,
    "epsilon": 1e-4,
    "fleet": None,
    "traces": False,
    "out": "out",
}


class ConfigError(Exception):
    pass


def _load_config(args) -> dict:
    config = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"config {path}: unknown fields {sorted(unknown)}")
        config.update(doc)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            config[key] = flag
    return config


def _resolve_case(name_or_path: str):
    if name_or_path in BUNDLED_CASES:
        return bundled_case(name_or_path)
    return load_case(name_or_path)


def _resolve_profile(name_or_path: str):
    if Path(name_or_path).exists():
        return load_profile_csv(name_or_path)
    return bundled_profile(name_or_path)


def _build_scenario(config: dict):
    case = _resolve_case(config["case"])
    profile = _resolve_profile(config["profile"])
    grid_t = TimeGrid(num_slots=int(config["num_slots"]),
                      slot_hours=float(config["slot_hours"]))
    tasks = None
    if config.get("fleet"):
        tasks = load_fleet_json(config["fleet"], grid_t.slot_hours)
    return make_scenario(
        case, profile, int(config["pevs_per_station"]), int(config["seed"]),
        grid=grid_t, tasks=tasks, capacity_kwh=float(config["capacity_kwh"]),
        initial_soc=float(config["initial_soc"]),
        rate_kw=float(config["rate_kw"]),
        efficiency=float(config["efficiency"]))


def _controller(config: dict) -> ControllerConfig:
    return ControllerConfig(
        mu1=float(config["mu1"]), mu2=float(config["mu2"]),
        exponent=float(config["exponent"]), epsilon=float(config["epsilon"]))


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _write_schedule_csv(path: Path, report_dict: dict):
    slots = report_dict["slots"]
    task_ids = sorted({tid for rec in slots for tid in rec["applied_tau"]})
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id"] + [rec["slot"] for rec in slots])
        for tid in task_ids:
            writer.writerow(
                [tid] + [int(rec["applied_tau"].get(tid, 0)) for rec in slots])


def _write_generation_csv(path: Path, report_dict: dict, case):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "bus", "p_gen_pu", "q_gen_pu", "v_mag_pu"])
        for rec in report_dict["slots"]:
            vmag = {}
            if rec["voltage"] is not None:
                for i, (re, im) in enumerate(rec["voltage"]):
                    vmag[case.buses[i].id] = abs(complex(re, im))
            for bus in case.buses:
                writer.writerow([
                    rec["slot"], bus.id,
                    rec["pg"].get(str(bus.id), ""),
                    rec["qg"].get(str(bus.id), ""),
                    f"{vmag[bus.id]:.8f}" if bus.id in vmag else "",
                ])


def _summary_lines(report, config) -> list:
    return [
        f"{'case':>18}: {report.case_name} ({report.mode}, seed {report.seed})",
        f"{'binary variables':>18}: {report.binary_variable_count}",
        f"{'mu1':>18}: {config['mu1']}",
        f"{'mu2':>18}: {config['mu2']}",
        f"{'stage-1 value':>18}: {report.stage1_applied_value:.1f}",
        f"{'stage-2 value':>18}: {report.total_cost:.1f}",
        f"{'mean step time':>18}: {report.mean_step_time:.2f} s",
        f"{'completion':>18}: "
        f"{sum(1 for t in report.tasks if t.completed)}/{len(report.tasks)} tasks",
        f"{'fallbacks':>18}: {report.fallback_count}",
    ]


def cmd_run(args) -> int:
    config = _load_config(args)
    if config["mode"] not in ("dynamic", "static"):
        raise ConfigError(f"run: unsupported mode {config['mode']!r} "
                          "(use the oracle subcommand for oracle mode)")
    scenario = _build_scenario(config)
    controller = _controller(config)
    report = run_dynamic(scenario, controller) if config["mode"] == "dynamic" \
        else run_static(scenario, controller)

    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["config"] = dict(config)
    stem = f"{report.case_name}-{report.mode}-seed{report.seed}"
    (out / f"{stem}-report.json").write_text(json.dumps(doc, indent=1))
    _write_schedule_csv(out / f"{stem}-schedule.csv", doc)
    _write_generation_csv(out / f"{stem}-generation.csv", doc, scenario.case)
    (out / f"{stem}-fleet.json").write_text(fleet_to_json(scenario.tasks))
    if config.get("traces"):
        _write_traces(out, stem, report)
    lines = _summary_lines(report, config)
    (out / f"{stem}-summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"artifacts in {out}/{stem}-*")
    return 0


def _write_traces(out: Path, stem: str, report):
    from .stage1 import write_trace_csv as s1_csv
    from .stage2 import write_trace_csv as s2_csv

    for rec in report.slots:
        if rec.stage1 and rec.stage1.get("trace"):
            with (out / f"{stem}-stage1-slot{rec.slot:02d}.csv").open("w") as fh:
                s1_csv(rec.stage1["trace"], fh)
        if rec.stage2 and rec.stage2.get("trace"):
            with (out / f"{stem}-stage2-slot{rec.slot:02d}.csv").open("w") as fh:
                s2_csv(rec.stage2["trace"], fh)


def cmd_compare(args) -> int:
    docs = []
    for path in (args.dynamic_report, args.static_report):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"report not found: {path}")
        docs.append(json.loads(path.read_text()))
    dyn, sta = docs
    if dyn["seed"] != sta["seed"] or dyn["case"] != sta["case"]:
        raise ConfigError(
            f"reports are not comparable: seeds {dyn['seed']}/{sta['seed']}, "
            f"cases {dyn['case']}/{sta['case']}")

    totals = (dyn["totals"]["total_cost"], sta["totals"]["total_cost"])
    print(f"dynamic total: {totals[0]:.4f}")
    print(f"static total:  {totals[1]:.4f}")
    print(f"reported gap (dynamic - static): {totals[0] - totals[1]:+.4f}")

    if "config" in dyn and isinstance(dyn["config"], dict) \
            and "case" in dyn["config"]:
        scenario = _build_scenario({**DEFAULTS, **dyn["config"]})
        gaps = []
        for doc in docs:
            rep = _ReportShim(doc)
            gaps.append(evaluate_schedule_cost(scenario, rep))
        print(f"re-evaluated gap under common dispatch: {gaps[0] - gaps[1]:+.6f}")

    print("slot  dynamic_cost  static_cost")
    for d, s in zip(dyn["slots"], sta["slots"]):
        cd = d["generation_cost"] + d["charging_cost"]
        cs = s["generation_cost"] + s["charging_cost"]
        print(f"{d['slot']:4d}  {cd:12.4f}  {cs:11.4f}")
    for name, doc in (("dynamic", dyn), ("static", sta)):
        done = sum(1 for t in doc["tasks"] if t["completed"])
        print(f"{name}: {done}/{len(doc['tasks'])} tasks completed")
    return 0


class _ReportShim:
    """Just enough of EpisodeReport for evaluate_schedule_cost."""

    class _Rec:
        def __init__(self, rec):
            self.slot = rec["slot"]
            self.applied_tau = rec["applied_tau"]

    def __init__(self, doc):
        self.slots = [self._Rec(r) for r in doc["slots"]]


def cmd_oracle(args) -> int:
    config = _load_config(args)
    case = _resolve_case(config["case"])
    if len(case.generators) != 1:
        raise ConfigError("oracle mode needs a single-generator case (case3)")
    scenario = make_oracle_scenario(case, int(config["seed"]))
    inst = instance_from_scenario(scenario)
    out_dir = Path(config["out"]) if args.out else None
    result = oracle_solve(inst, cache_dir=out_dir)

    report = run_static(scenario, _controller(config))
    pipeline_cost = report.total_cost
    gap = (pipeline_cost - result.cost) / result.cost
    print(f"oracle optimum:  {result.cost:.4f}")
    print(f"pipeline (static two-stage): {pipeline_cost:.4f}")
    print(f"relative gap: {gap:+.3%}")
    worst_v = 0.0
    for slot, V in result.voltages.items():
        rec = report.slots[slot - 1]
        if rec.voltage is None:
            continue
        worst_v = max(worst_v, float(np.abs(rec.voltage - V).max()))
    print(f"max voltage deviation: {worst_v:.2e} p.u.")
    ok = abs(gap) <= 0.01
    print("PASS" if ok else "FAIL", "(gap within 1%)")
    return 0 if ok else 3


def cmd_validate(args) -> int:
    failures = 0

    def check(name, fn):
        nonlocal failures
        try:
            fn()
            print(f"ok      {name}")
        except Exception as exc:   # noqa: BLE001 - report and count
            failures += 1
            print(f"FAILED  {name}: {exc}")

    from .grid import serialize_case, _parse_case, admittance_neighbors
    from .conic import ConicProgram, hermitian_embed

    for name in BUNDLED_CASES:
        def load_and_roundtrip(name=name):
            case = bundled_case(name)
            again = _parse_case(serialize_case(case), name)
            assert again.buses == case.buses and again.lines == case.lines
            for b in case.buses:
                for m, _ in admittance_neighbors(case, b.id):
                    fwd = sum(y for mm, y in admittance_neighbors(case, b.id)
                              if mm == m)
                    back = sum(y for mm, y in admittance_neighbors(case, m)
                               if mm == b.id)
                    assert fwd == back, f"asymmetric neighborhood {b.id}<->{m}"
                assert 0.5 <= b.v_min <= b.v_max <= 1.5
        check(f"case {name} loads, round-trips, neighborhood symmetric",
              load_and_roundtrip)

    for name in ("profile1", "profile2", "profile3", "profile4"):
        def load_profile(name=name):
            prof = bundled_profile(name)
            assert prof.load_fraction.shape == (24,)
            assert len(np.unique(prof.price)) == 24
        check(f"profile {name} loads with distinct prices", load_profile)

    def embed_check():
        rng = np.random.default_rng(0)
        A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        H = A @ A.conj().T
        eH = np.sort(np.linalg.eigvalsh(H))
        eE = np.sort(np.linalg.eigvalsh(hermitian_embed(H)))
        assert np.allclose(eE, np.repeat(eH, 2), atol=1e-8 * eH.max())
    check("hermitian embedding doubles the spectrum", embed_check)

    def solver_check():
        prog = ConicProgram()
        W = prog.add_hermitian_block("W", 2)
        prog.add_equality(W.diag(0), 1.0)
        prog.add_objective(W.trace())
        sol = prog.solve()
        assert sol.status == "optimal" and abs(sol.objective - 1.0) < 1e-6
    check("conic solver reproduces an analytic optimum", solver_check)

    def timegrid_check():
        grid = TimeGrid()
        assert grid.slot_of_hour(18.0) == 1 and grid.slot_of_hour(19.7) == 5
    check("time grid maps wall-clock hours to slots", timegrid_check)

    return 0 if failures == 0 else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_config_flags(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--case", help="bundled case name or case file path")
    sub.add_argument("--profile", help="bundled profile name or CSV path")
    sub.add_argument("--mode", choices=["dynamic", "static"])
    sub.add_argument("--seed", type=int)
    sub.add_argument("--pevs-per-station", dest="pevs_per_station", type=int)
    sub.add_argument("--mu1", type=float)
    sub.add_argument("--mu2", type=float)
    sub.add_argument("--exponent-L", dest="exponent", type=float)
    sub.add_argument("--epsilon", type=float)
    sub.add_argument("--fleet", help="fleet JSON overriding generated tasks")
    sub.add_argument("--traces", action="store_true", default=None,
                     help="write per-solve iteration trace CSVs")
    sub.add_argument("--out", help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridcharge",
        description="Joint PEV charging coordination and grid dispatch")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="solve an episode and write artifacts")
    _add_config_flags(p_run)

    p_cmp = subs.add_parser("compare", help="diff dynamic vs static reports")
    p_cmp.add_argument("dynamic_report")
    p_cmp.add_argument("static_report")

    p_orc = subs.add_parser("oracle", help="cross-check against enumeration")
    _add_config_flags(p_orc)

    subs.add_parser("validate", help="self-check bundled fixtures")

    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "compare": cmd_compare,
                "oracle": cmd_oracle, "validate": cmd_validate}
    try:
        return handlers[args.command](args)
    except (ConfigError, CaseError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OracleInfeasible,) as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return 4
    except EpisodeError as exc:
        msg = str(exc)
        print(f"episode failed: {msg}", file=sys.stderr)
        return 4 if "infeasible" in msg else 3
    except (ConicError, OracleError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
