"""Rolling-horizon controller and the static full-information counterpart.

The dynamic mode re-plans every slot: it gathers the currently connected
tasks, solves the two-stage problem over [t, Psi(t)] where Psi(t) is the
latest departure among them, applies only slot t, advances the remaining
demands, and repeats.  The static mode sees the whole fleet up front and
solves one two-stage problem over the full task span, recovering
rank-one blocks at every slot.  Both produce the same report shape so
the harness can diff them.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .grid import GridCase, generation_cost_rate
from .relaxation import HorizonError, HorizonProblem, HorizonTask, build_sdr
from .scenario import ChargingSchedule, Scenario, slots_for_energy
from .stage1 import Stage1Options, Stage1Result, stage1_solve
from .stage2 import Stage2Options, Stage2Result, stage2_solve

DEMAND_EPS = 1e-9


class EpisodeError(Exception):
    pass


@dataclass
class ControllerConfig:
    mu1: float = 1.0
    mu2: float = 10.0
    exponent: float = 1.5
    epsilon: float = 1e-4
    stage1_max_iter: int = 50
    stage2_max_iter: int = 30
    max_horizon: int | None = None      # cap on Psi(t) - t, default unbounded

    def stage1_options(self) -> Stage1Options:
        return Stage1Options(mu1=self.mu1, exponent=self.exponent,
                             epsilon=self.epsilon, max_iter=self.stage1_max_iter)

    def stage2_options(self) -> Stage2Options:
        return Stage2Options(mu2=self.mu2, epsilon=self.epsilon,
                             max_iter=self.stage2_max_iter)


@dataclass
class MpcState:
    slot: int
    remaining: dict                      # task_id -> kWh still to deliver (>= 0)
    delivered: dict = field(default_factory=dict)
    applied: list = field(default_factory=list)
    total_generation_cost: float = 0.0
    total_charging_cost: float = 0.0

    def connected(self, scenario: Scenario) -> list:
        out = []
        for task in scenario.tasks:
            if task.arrival <= self.slot <= task.departure \
                    and self.remaining[task.task_id] > DEMAND_EPS:
                out.append(task)
        return out


@dataclass
class SlotRecord:
    slot: int
    applied_tau: dict                    # task_id -> 0/1 for this slot
    voltage: np.ndarray | None
    pg: dict                             # bus -> per-unit
    qg: dict
    generation_cost: float
    charging_cost: float
    horizon_end: int
    stage1: dict = field(default_factory=dict)
    stage2: dict = field(default_factory=dict)
    fallbacks: list = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class TaskOutcome:
    task_id: str
    arrival: int
    departure: int
    demand_kwh: float
    delivered_kwh: float

    @property
    def completed(self) -> bool:
        return self.delivered_kwh >= self.demand_kwh - 1e-6

    @property
    def overshoot_kwh(self) -> float:
        return max(0.0, self.delivered_kwh - self.demand_kwh)


@dataclass
class EpisodeReport:
    mode: str
    seed: int
    case_name: str
    config: dict
    slots: list
    tasks: list
    total_generation_cost: float
    total_charging_cost: float
    wall_time: float
    stage1_iterations: int = 0
    stage1_solves: int = 0
    stage1_clean_solves: int = 0
    stage2_worst_relative_residual: float = 0.0
    binary_variable_count: int = 0
    fallback_count: int = 0
    stage1_applied_value: float = 0.0    # episode cost at the relaxed iterates
    mean_step_time: float = 0.0

    @property
    def total_cost(self) -> float:
        return self.total_generation_cost + self.total_charging_cost

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "case": self.case_name,
            "config": self.config,
            "totals": {
                "generation_cost": self.total_generation_cost,
                "charging_cost": self.total_charging_cost,
                "total_cost": self.total_cost,
            },
            "stage1": {
                "solves": self.stage1_solves,
                "iterations": self.stage1_iterations,
                "clean_solves": self.stage1_clean_solves,
            },
            "stage2_worst_relative_residual": self.stage2_worst_relative_residual,
            "binary_variable_count": self.binary_variable_count,
            "fallback_count": self.fallback_count,
            "stage1_applied_value": self.stage1_applied_value,
            "mean_step_time": self.mean_step_time,
            "wall_time": self.wall_time,
            "slots": [
                {
                    "slot": r.slot,
                    "applied_tau": {k: v for k, v in sorted(r.applied_tau.items())},
                    "voltage": None if r.voltage is None else
                        [[z.real, z.imag] for z in r.voltage],
                    "pg": {str(k): v for k, v in sorted(r.pg.items())},
                    "qg": {str(k): v for k, v in sorted(r.qg.items())},
                    "generation_cost": r.generation_cost,
                    "charging_cost": r.charging_cost,
                    "horizon_end": r.horizon_end,
                    "stage1": r.stage1,
                    "stage2": r.stage2,
                    "fallbacks": r.fallbacks,
                }
                for r in self.slots
            ],
            "tasks": [
                {
                    "task_id": t.task_id,
                    "arrival": t.arrival,
                    "departure": t.departure,
                    "demand_kwh": t.demand_kwh,
                    "delivered_kwh": t.delivered_kwh,
                    "completed": t.completed,
                    "overshoot_kwh": t.overshoot_kwh,
                }
                for t in self.tasks
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# one rolling-horizon step
# ---------------------------------------------------------------------------


def _horizon_problem(scenario: Scenario, start: int, end: int, tasks,
                     remaining: dict, include_angle: bool = True) -> HorizonProblem:
    hts = [HorizonTask(t, remaining[t.task_id]) for t in tasks]
    return HorizonProblem(
        scenario.case, scenario.time, start, end, hts,
        scenario.loads_p, scenario.loads_q, scenario.prices,
        include_angle=include_angle)


def _greedy_critical(tasks, remaining, slot, slot_hours):
    """Tasks whose remaining slot count equals their remaining window."""
    critical = []
    for t in tasks:
        need = slots_for_energy(remaining[t.task_id], t, slot_hours)
        window = t.departure - max(slot, t.arrival) + 1
        if need >= window:
            critical.append(t)
    return critical


def _stage1_with_fallback(scenario, start, end, tasks, remaining, config,
                          fallbacks):
    """Normal stage-1, then the urgency ladder.

    Infeasibility ladder: pin deadline-critical tasks to charge-now and
    re-solve the rest; then shed angle constraints.  A feasible but
    non-converged solve is used as-is (round-and-repaired) after one
    retry with the critical tasks pinned.  Returns
    (stage1_result, fixed_assignments, include_angle).
    """
    hp = _horizon_problem(scenario, start, end, tasks, remaining)
    res = stage1_solve(hp, config.stage1_options())
    if res.status == "ok" and (res.converged or res.binary_clean):
        return res, {}, True

    critical = _greedy_critical(tasks, remaining, start, scenario.time.slot_hours)
    pinned: dict = {}
    for t in critical:
        for s in range(max(start, t.arrival), t.departure + 1):
            pinned[(t.task_id, s)] = 1.0
    rest = [t for t in tasks if t not in critical]

    if pinned:
        fallbacks.append("pinned deadline-critical tasks: "
                         + ",".join(t.task_id for t in critical))
        hp2 = _horizon_problem(scenario, start, end, rest, remaining)
        res2 = stage1_solve(hp2, config.stage1_options())
        if res2.status == "ok":
            if not res2.converged:
                fallbacks.append("stage-1 not binary-converged; "
                                 "using repaired schedule")
            return res2, pinned, True

    if res.status == "ok":
        fallbacks.append("stage-1 not binary-converged; using repaired schedule")
        return res, {}, True

    # infeasible even with critical tasks pinned: relax the angle rows
    fallbacks.append("shed angle constraints")
    hp3 = _horizon_problem(scenario, start, end, rest, remaining,
                           include_angle=False)
    res3 = stage1_solve(hp3, config.stage1_options())
    if res3.status == "ok":
        return res3, pinned, False
    raise EpisodeError(f"slot {start}: horizon infeasible after fallbacks "
                       f"({res.message}; {res3.message})")


def mpc_step(state: MpcState, scenario: Scenario, config: ControllerConfig):
    """Solve the horizon at the current slot and apply its first column."""
    t = state.slot
    started = _time.perf_counter()
    connected = state.connected(scenario)
    fallbacks: list = []

    if not connected:
        hp = _horizon_problem(scenario, t, t, [], state.remaining)
        s2 = stage2_solve(hp, {}, [t], config.stage2_options())
        if s2.status == "infeasible":
            raise EpisodeError(f"slot {t}: pure dispatch infeasible")
        record = _apply_slot(state, scenario, t, {}, s2, horizon_end=t,
                             stage1=None, fallbacks=fallbacks)
        record.wall_time = _time.perf_counter() - started
        state.applied.append(record)
        return record, _advance(state)

    end = max(task.departure for task in connected)
    if config.max_horizon is not None:
        end = min(end, t + config.max_horizon)
    s1, pinned, with_angle = _stage1_with_fallback(
        scenario, t, end, connected, state.remaining, config, fallbacks)
    schedule = dict(s1.schedule.values)
    schedule.update(pinned)

    hp = _horizon_problem(scenario, t, end, connected, state.remaining,
                          include_angle=with_angle)
    s2 = stage2_solve(hp, schedule, [t], config.stage2_options())
    if s2.status == "infeasible":
        fallbacks.append("stage-2 infeasible with angle constraints; shed")
        hp = _horizon_problem(scenario, t, end, connected, state.remaining,
                              include_angle=False)
        s2 = stage2_solve(hp, schedule, [t], config.stage2_options())
        if s2.status == "infeasible":
            raise EpisodeError(f"slot {t}: fixed-schedule dispatch infeasible")

    record = _apply_slot(state, scenario, t, schedule, s2, horizon_end=end,
                         stage1=s1, fallbacks=fallbacks)
    record.wall_time = _time.perf_counter() - started
    state.applied.append(record)
    return record, _advance(state)


def _apply_slot(state: MpcState, scenario: Scenario, t: int, schedule: dict,
                s2: Stage2Result, horizon_end: int,
                stage1: Stage1Result | None, fallbacks: list) -> SlotRecord:
    dt = scenario.time.slot_hours
    applied = {}
    charging_cost = 0.0
    for task in scenario.tasks:
        level = schedule.get((task.task_id, t))
        if level is None:
            continue
        applied[task.task_id] = float(round(level))
        if applied[task.task_id]:
            energy = task.slot_energy_kwh(dt)
            state.remaining[task.task_id] = max(
                0.0, state.remaining[task.task_id] - energy)
            state.delivered[task.task_id] = \
                state.delivered.get(task.task_id, 0.0) + energy
            charging_cost += scenario.prices[t - 1] * task.rate_kw * dt

    pg = {bus: s2.pg[(bus, t)] for bus in scenario.case.gen_buses}
    qg = {bus: s2.qg[(bus, t)] for bus in scenario.case.gen_buses}
    gen_cost = sum(
        dt * generation_cost_rate(scenario.case.generator_at(bus), p,
                                  scenario.case.base_mva)
        for bus, p in pg.items())
    state.total_generation_cost += gen_cost
    state.total_charging_cost += charging_cost

    stage1_info = {}
    if stage1 is not None:
        stage1_info = {
            "sdr_objective": stage1.sdr_objective,
            "final_objective": stage1.final_objective,
            "applied_slot_cost": relaxed_slot_cost(scenario, stage1, t),
            "iterations": stage1.iterations,
            "converged": stage1.converged,
            "binary_clean": stage1.binary_clean,
            "max_violation": stage1.trace[-1]["max_violation"] if stage1.trace else 0.0,
            "trace": stage1.trace,
        }
    resid = s2.residuals.get(t, (0.0, 0.0))
    stage2_info = {
        "generation_cost_horizon": s2.generation_cost,
        "total_cost_horizon": s2.total_cost,
        "residual": resid[0],
        "relative_residual": resid[1],
        "iterations": s2.iterations,
        "status": s2.status,
        "trace": s2.trace,
    }
    return SlotRecord(
        slot=t, applied_tau=applied, voltage=s2.voltages.get(t),
        pg=pg, qg=qg, generation_cost=gen_cost, charging_cost=charging_cost,
        horizon_end=horizon_end, stage1=stage1_info, stage2=stage2_info,
        fallbacks=fallbacks)


def relaxed_slot_cost(scenario: Scenario, stage1: Stage1Result, t: int) -> float:
    """Slot-t cost of the stage-1 relaxed solution (the objective is
    slot-separable, so this is its exact share)."""
    dt = scenario.time.slot_hours
    cost = sum(
        dt * generation_cost_rate(scenario.case.generator_at(bus), p,
                                  scenario.case.base_mva)
        for (bus, s), p in stage1.pg.items() if s == t)
    cost += sum(
        scenario.prices[t - 1] * scenario.task(tid).rate_kw * dt * level
        for (tid, s), level in stage1.relaxed.values.items() if s == t)
    return cost


def _advance(state: MpcState) -> MpcState:
    return MpcState(slot=state.slot + 1, remaining=state.remaining,
                    delivered=state.delivered, applied=state.applied,
                    total_generation_cost=state.total_generation_cost,
                    total_charging_cost=state.total_charging_cost)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


def run_dynamic(scenario: Scenario, config: ControllerConfig | None = None) -> EpisodeReport:
    config = config or ControllerConfig()
    started = _time.perf_counter()
    state = MpcState(slot=1,
                     remaining={t.task_id: t.demand_kwh for t in scenario.tasks})
    for _ in range(scenario.time.num_slots):
        _, state = mpc_step(state, scenario, config)
    return _report("dynamic", scenario, config, state.applied, state,
                   _time.perf_counter() - started)


def run_static(scenario: Scenario, config: ControllerConfig | None = None) -> EpisodeReport:
    """Full-information counterpart: all tasks known at slot 1."""
    config = config or ControllerConfig()
    started = _time.perf_counter()
    state = MpcState(slot=1,
                     remaining={t.task_id: t.demand_kwh for t in scenario.tasks})
    T = scenario.time.num_slots
    records: list = []

    span_end = max((t.departure for t in scenario.tasks), default=0)
    if scenario.tasks:
        fallbacks: list = []
        s1, pinned, with_angle = _stage1_with_fallback(
            scenario, 1, span_end, list(scenario.tasks), state.remaining,
            config, fallbacks)
        schedule = dict(s1.schedule.values)
        schedule.update(pinned)
        hp = _horizon_problem(scenario, 1, span_end, list(scenario.tasks),
                              state.remaining, include_angle=with_angle)
        slots = list(range(1, span_end + 1))
        s2 = stage2_solve(hp, schedule, slots, config.stage2_options())
        if s2.status == "infeasible":
            fallbacks.append("stage-2 infeasible with angle constraints; shed")
            hp = _horizon_problem(scenario, 1, span_end, list(scenario.tasks),
                                  state.remaining, include_angle=False)
            s2 = stage2_solve(hp, schedule, slots, config.stage2_options())
            if s2.status == "infeasible":
                raise EpisodeError("static dispatch infeasible")
        for t in slots:
            rec = _apply_slot(state, scenario, t, schedule, s2,
                              horizon_end=span_end,
                              stage1=s1 if t == 1 else None,
                              fallbacks=fallbacks if t == 1 else [])
            records.append(rec)

    # trailing slots with no connected tasks: per-slot dispatch
    for t in range(span_end + 1, T + 1):
        hp = _horizon_problem(scenario, t, t, [], state.remaining)
        s2 = stage2_solve(hp, {}, [t], config.stage2_options())
        if s2.status == "infeasible":
            raise EpisodeError(f"slot {t}: pure dispatch infeasible")
        records.append(_apply_slot(state, scenario, t, {}, s2,
                                   horizon_end=t, stage1=None, fallbacks=[]))

    s1_applied = None
    if scenario.tasks:
        s1_applied = sum(relaxed_slot_cost(scenario, s1, t)
                         for t in range(1, span_end + 1))
        s1_applied += sum(r.generation_cost + r.charging_cost
                          for r in records[span_end:])
    return _report("static", scenario, config, records, state,
                   _time.perf_counter() - started, stage1_applied=s1_applied)


def evaluate_schedule_cost(scenario: Scenario, report: EpisodeReport) -> float:
    """Re-dispatch the applied schedule slot by slot under one evaluator.

    The continuous dispatch decouples across slots once the charging
    decisions are fixed, so the applied schedules of two runs become
    exactly comparable: identical schedules yield identical costs
    (penalty nudges and horizon-accuracy noise in the reports do not).
    """
    from dataclasses import replace

    total = 0.0
    dt = scenario.time.slot_hours
    tasks = {t.task_id: t for t in scenario.tasks}
    for rec in report.slots:
        t = rec.slot
        fixed = {}
        hts = []
        for tid, level in rec.applied_tau.items():
            clipped = replace(tasks[tid], arrival=t, departure=t)
            hts.append(HorizonTask(clipped, clipped.slot_energy_kwh(dt) * level))
            fixed[(tid, t)] = level
        hp = HorizonProblem(
            scenario.case, scenario.time, t, t, hts,
            scenario.loads_p, scenario.loads_q, scenario.prices)
        sdr = build_sdr(hp, fixed_tau=fixed)
        sol = sdr.prog.solve()
        if sol.status in ("infeasible", "unbounded"):
            raise EpisodeError(f"slot {t}: applied schedule does not dispatch")
        total += sdr.objective_dollars(sol)
    return total


def _report(mode, scenario, config, records, state, wall,
            stage1_applied=None) -> EpisodeReport:
    outcomes = [
        TaskOutcome(
            task_id=t.task_id, arrival=t.arrival, departure=t.departure,
            demand_kwh=t.demand_kwh,
            delivered_kwh=state.delivered.get(t.task_id, 0.0))
        for t in scenario.tasks
    ]
    s1_solves = sum(1 for r in records if r.stage1)
    s1_clean = sum(1 for r in records if r.stage1 and r.stage1["binary_clean"])
    s1_iters = sum(r.stage1["iterations"] for r in records if r.stage1)
    if stage1_applied is None:
        stage1_applied = sum(
            r.stage1.get("applied_slot_cost", r.generation_cost + r.charging_cost)
            if r.stage1 else r.generation_cost + r.charging_cost
            for r in records)
    step_times = [r.wall_time for r in records if r.wall_time > 0]
    worst = max((r.stage2.get("relative_residual", 0.0) for r in records
                 if r.stage2), default=0.0)
    nbin = sum(t.departure - t.arrival + 1 for t in scenario.tasks)
    return EpisodeReport(
        mode=mode, seed=scenario.seed, case_name=scenario.case.name,
        config={
            "mu1": config.mu1, "mu2": config.mu2, "exponent": config.exponent,
            "epsilon": config.epsilon,
        },
        slots=records, tasks=outcomes,
        total_generation_cost=state.total_generation_cost,
        total_charging_cost=state.total_charging_cost,
        wall_time=wall,
        stage1_iterations=s1_iters, stage1_solves=s1_solves,
        stage1_clean_solves=s1_clean,
        stage2_worst_relative_residual=worst,
        binary_variable_count=nbin,
        fallback_count=sum(len(r.fallbacks) for r in records),
        stage1_applied_value=stage1_applied,
        mean_step_time=sum(step_times) / len(step_times) if step_times
        else wall / max(len(records), 1))
