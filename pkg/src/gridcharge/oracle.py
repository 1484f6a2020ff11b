"""Exact reference for tiny instances by exhaustive enumeration.

Every binary charging schedule is enumerated; each slot's continuous
subproblem is solved by a dense grid search over the generator-bus
voltage magnitude, with all remaining bus voltages resolved through
root-finding on the fixed-injection power-flow equations.  Nothing here
touches the SDP machinery, so the two paths share no failure modes.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .grid import GridCase, generation_cost_rate
from .scenario import ChargingSchedule, ChargingTask, TimeGrid

MAX_BUSES = 4
MAX_TASKS = 3
MAX_SLOTS = 6
MAX_ENUMERATION = 2 ** 24


class OracleError(Exception):
    pass


class OracleInfeasible(Exception):
    """Raised with a certificate naming the tasks whose windows cannot fit."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__("no feasible schedule: " + "; ".join(violations))


@dataclass(frozen=True)
class OracleInstance:
    grid: GridCase
    time: TimeGrid
    tasks: tuple[ChargingTask, ...]
    loads_p: np.ndarray          # (n_buses, T) per-unit
    loads_q: np.ndarray
    prices: np.ndarray           # (T,) $/kWh
    resolution: float = 1e-2     # initial voltage grid step, refined to 1e-4

    def __post_init__(self):
        if self.grid.n_buses > MAX_BUSES:
            raise OracleError(f"instance too large: {self.grid.n_buses} buses > {MAX_BUSES}")
        if len(self.tasks) > MAX_TASKS:
            raise OracleError(f"instance too large: {len(self.tasks)} tasks > {MAX_TASKS}")
        if self.time.num_slots > MAX_SLOTS:
            raise OracleError(f"instance too large: {self.time.num_slots} slots > {MAX_SLOTS}")
        if len(self.grid.generators) != 1:
            raise OracleError("oracle instances use exactly one generator bus")
        total = 1
        for t in self.tasks:
            total *= 2 ** len(t.window())
        if total > MAX_ENUMERATION:
            raise OracleError(f"enumeration of {total} schedules exceeds cap")


@dataclass
class OracleResult:
    cost: float
    schedule: ChargingSchedule
    voltages: dict               # slot -> complex ndarray (n_buses,)
    generation: dict             # slot -> (p_g, q_g) per-unit at the single generator
    slot_costs: dict             # slot -> generation cost, $
    charging_cost: float
    generation_cost: float


# ---------------------------------------------------------------------------
# fixed-injection power flow
# ---------------------------------------------------------------------------


def _pf_residual(z, case: GridCase, slack_idx: int, v_slack: float, rhs: np.ndarray):
    """Injection mismatch at non-slack buses for stacked (Re, Im) unknowns."""
    n = case.n_buses
    V = np.empty(n, dtype=complex)
    others = [i for i in range(n) if i != slack_idx]
    V[slack_idx] = v_slack
    V[others] = z[: len(others)] + 1j * z[len(others):]
    out = np.empty(2 * len(others))
    ids = [b.id for b in case.buses]
    for row, i in enumerate(others):
        acc = 0j
        for m, y in case.neighbors(ids[i]):
            acc += y * (V[i] - V[case.bus_index(m)])
        inj = V[i] * np.conj(acc)
        out[row] = inj.real - rhs[i].real
        out[row + len(others)] = inj.imag - rhs[i].imag
    return out


def solve_power_flow(case: GridCase, v_slack: float, rhs: np.ndarray,
                     tol: float = 1e-10):
    """Bus voltages for fixed complex injections at every non-slack bus.

    rhs[i] is the required net injection at bus position i (ignored at the
    slack generator bus).  Returns None when the solver fails to converge.
    """
    slack_idx = case.bus_index(case.generators[0].bus)
    n = case.n_buses
    others = [i for i in range(n) if i != slack_idx]
    z0 = np.concatenate([np.full(len(others), v_slack), np.zeros(len(others))])
    sol = optimize.root(_pf_residual, z0, args=(case, slack_idx, v_slack, rhs),
                        method="hybr", tol=1e-12)
    if not sol.success or np.abs(sol.fun).max() > tol:
        return None
    V = np.empty(n, dtype=complex)
    V[slack_idx] = v_slack
    V[others] = sol.x[: len(others)] + 1j * sol.x[len(others):]
    return V


def _injection(case: GridCase, V: np.ndarray, bus_id: int) -> complex:
    i = case.bus_index(bus_id)
    acc = 0j
    for m, y in case.neighbors(bus_id):
        acc += y * (V[i] - V[case.bus_index(m)])
    return V[i] * np.conj(acc)


def _check_limits(case: GridCase, V: np.ndarray, p_g: float, q_g: float,
                  tol: float) -> bool:
    gen = case.generators[0]
    if not (gen.p_min - tol <= p_g <= gen.p_max + tol):
        return False
    if not (gen.q_min - tol <= q_g <= gen.q_max + tol):
        return False
    for i, bus in enumerate(case.buses):
        v = abs(V[i])
        if not (bus.v_min - tol <= v <= bus.v_max + tol):
            return False
    for ln in case.lines:
        a = np.angle(V[case.bus_index(ln.from_bus)])
        b = np.angle(V[case.bus_index(ln.to_bus)])
        d = (a - b + math.pi) % (2 * math.pi) - math.pi
        if abs(d) > case.angle_limit(ln.from_bus, ln.to_bus) + tol:
            return False
    return True


def oracle_opf(case: GridCase, load_p: np.ndarray, load_q: np.ndarray,
               station_draw_pu: float, slot_hours: float,
               resolution: float = 1e-2):
    """Continuous single-slot generation dispatch by voltage grid search.

    Scans the generator-bus voltage magnitude over its box at `resolution`,
    then refines twice (x10 each) around the incumbent.  Returns
    (cost_dollars, V, p_g, q_g) or None when no feasible point exists.
    """
    gen = case.generators[0]
    gbus = gen.bus
    gidx = case.bus_index(gbus)
    n = case.n_buses
    rhs = np.array([complex(-load_p[i], -load_q[i]) for i in range(n)])
    box_tol = max(resolution * 1e-2, 1e-6)

    def evaluate(v_slack: float):
        V = solve_power_flow(case, v_slack, rhs)
        if V is None:
            return None
        inj = _injection(case, V, gbus)
        p_g = inj.real + load_p[gidx] + station_draw_pu
        q_g = inj.imag + load_q[gidx]
        if not _check_limits(case, V, p_g, q_g, box_tol):
            return None
        cost = slot_hours * generation_cost_rate(gen, p_g, case.base_mva)
        return cost, V, p_g, q_g

    vb = case.buses[gidx]
    best = None
    best_v = None
    step = resolution
    lo, hi = vb.v_min, vb.v_max
    for _pass in range(3):
        grid = np.arange(lo, hi + step * 0.5, step)
        for v in grid:
            res = evaluate(float(v))
            if res is not None and (best is None or res[0] < best[0]):
                best, best_v = res, float(v)
        if best is None:
            return None
        lo = max(vb.v_min, best_v - step)
        hi = min(vb.v_max, best_v + step)
        step /= 10.0
    return best


# ---------------------------------------------------------------------------
# schedule enumeration
# ---------------------------------------------------------------------------


def _feasible_patterns(task: ChargingTask, slot_hours: float):
    """All binary window patterns delivering at least the task's demand."""
    window = list(task.window())
    per_slot = task.slot_energy_kwh(slot_hours)
    need = task.demand_kwh
    out = []
    for bits in itertools.product((0, 1), repeat=len(window)):
        if sum(bits) * per_slot >= need - 1e-9:
            out.append(dict(zip(window, bits)))
    return out


def oracle_solve(inst: OracleInstance, cache_dir: Path | None = None) -> OracleResult:
    """Global optimum of the joint scheduling problem by full enumeration."""
    violations = [
        f"task {t.task_id}: needs {t.required} slots in window "
        f"[{t.arrival},{t.departure}]"
        for t in inst.tasks
        if t.required > t.departure - t.arrival + 1
    ]
    if violations:
        raise OracleInfeasible(violations)

    if cache_dir is not None:
        cached = _cache_load(inst, cache_dir)
        if cached is not None:
            return cached

    T = inst.time.num_slots
    dt = inst.time.slot_hours
    base = inst.grid.base_mva
    rate_pu = {t.task_id: t.rate_kw / 1000.0 / base for t in inst.tasks}

    patterns = [_feasible_patterns(t, dt) for t in inst.tasks]
    if any(not p for p in patterns):
        raise OracleInfeasible(["a task has no demand-covering pattern"])

    # Continuous slot cost depends on tau only through the aggregate draw.
    slot_cost_cache: dict = {}

    def slot_solution(slot: int, draw_pu: float):
        key = (slot, round(draw_pu, 12))
        if key not in slot_cost_cache:
            slot_cost_cache[key] = oracle_opf(
                inst.grid, inst.loads_p[:, slot - 1], inst.loads_q[:, slot - 1],
                draw_pu, dt, inst.resolution)
        return slot_cost_cache[key]

    best_cost = math.inf
    best_combo = None
    for combo in itertools.product(*patterns):
        gen_cost = 0.0
        chg_cost = 0.0
        ok = True
        for slot in range(1, T + 1):
            draw = sum(rate_pu[t.task_id] * combo[i].get(slot, 0)
                       for i, t in enumerate(inst.tasks))
            res = slot_solution(slot, draw)
            if res is None:
                ok = False
                break
            gen_cost += res[0]
            for i, t in enumerate(inst.tasks):
                chg_cost += (inst.prices[slot - 1] * t.rate_kw * dt
                             * combo[i].get(slot, 0))
        if ok and gen_cost + chg_cost < best_cost:
            best_cost = gen_cost + chg_cost
            best_combo = combo
    if best_combo is None:
        raise OracleInfeasible(["every schedule hits a grid limit"])

    values = {}
    for i, t in enumerate(inst.tasks):
        for slot, bit in best_combo[i].items():
            if bit:
                values[(t.task_id, slot)] = 1.0
    schedule = ChargingSchedule(values, mode="binary")

    voltages, generation, slot_costs = {}, {}, {}
    gen_cost = 0.0
    chg_cost = 0.0
    for slot in range(1, T + 1):
        draw = sum(rate_pu[t.task_id] * best_combo[i].get(slot, 0)
                   for i, t in enumerate(inst.tasks))
        cost, V, p_g, q_g = slot_solution(slot, draw)
        phase = np.exp(-1j * np.angle(V[0])) if abs(V[0]) > 0 else 1.0
        voltages[slot] = V * phase
        generation[slot] = (p_g, q_g)
        slot_costs[slot] = cost
        gen_cost += cost
        for i, t in enumerate(inst.tasks):
            chg_cost += inst.prices[slot - 1] * t.rate_kw * dt * best_combo[i].get(slot, 0)

    result = OracleResult(cost=best_cost, schedule=schedule, voltages=voltages,
                          generation=generation, slot_costs=slot_costs,
                          charging_cost=chg_cost, generation_cost=gen_cost)
    if cache_dir is not None:
        _cache_store(inst, result, cache_dir)
    return result


# ---------------------------------------------------------------------------
# seeded toy scenarios for cross-checking the main pipeline
# ---------------------------------------------------------------------------


def make_oracle_scenario(case: GridCase, seed: int, num_slots: int | None = None):
    """Deterministic toy scenario on a single-generator case.

    Two tasks at the generator bus with a 2 MW aggregate-charger rate (large
    enough that schedules move the dispatch), slot counts of 2-3, and
    strictly varying loads and prices.  Returns a Scenario whose fields the
    main pipeline consumes directly; `instance_from_scenario` converts it
    for the enumerator.
    """
    from .scenario import Profile, Scenario

    rng = np.random.default_rng(seed)
    T = num_slots if num_slots is not None else 4 + seed % 3
    grid_t = TimeGrid(num_slots=T, slot_hours=0.5)
    station = case.generators[0].bus

    rate = 2000.0
    tasks = []
    for idx, need in enumerate((2, 2 + seed % 2), start=1):
        t_a = 1 + int(rng.integers(0, 2))
        slack = 1 + int(rng.integers(0, 2))
        t_d = min(T, t_a + need - 1 + slack)
        capacity = need * rate * grid_t.slot_hours / 0.8
        tasks.append(ChargingTask(
            station=station, index=idx, arrival=t_a, departure=t_d,
            capacity_kwh=capacity, initial_soc=0.2, rate_kw=rate,
            efficiency=1.0, required=need))

    frac = 0.8 + 0.4 * rng.random(T)
    base_p = np.array([b.load_p for b in case.buses])
    base_q = np.array([b.load_q for b in case.buses])
    loads_p = np.outer(base_p, frac)
    loads_q = np.outer(base_q, frac)
    prices = np.round(0.08 + 0.10 * rng.random(T), 6)
    profile = Profile("oracle", frac, prices)
    return Scenario(case=case, time=grid_t, tasks=tuple(tasks), profile=profile,
                    loads_p=loads_p, loads_q=loads_q, prices=prices, seed=seed)


def instance_from_scenario(scn, resolution: float = 1e-2) -> OracleInstance:
    return OracleInstance(
        grid=scn.case, time=scn.time, tasks=tuple(scn.tasks),
        loads_p=scn.loads_p, loads_q=scn.loads_q, prices=scn.prices,
        resolution=resolution)


# ---------------------------------------------------------------------------
# result cache keyed by instance hash
# ---------------------------------------------------------------------------


def _instance_key(inst: OracleInstance) -> str:
    import hashlib

    payload = {
        "grid": inst.grid.name,
        "buses": [(b.id, b.v_min, b.v_max, b.load_p, b.load_q) for b in inst.grid.buses],
        "lines": [(l.from_bus, l.to_bus, l.admittance.real, l.admittance.imag)
                  for l in inst.grid.lines],
        "tasks": [(t.task_id, t.arrival, t.departure, t.capacity_kwh,
                   t.initial_soc, t.rate_kw, t.efficiency) for t in inst.tasks],
        "loads_p": inst.loads_p.round(12).tolist(),
        "loads_q": inst.loads_q.round(12).tolist(),
        "prices": inst.prices.round(12).tolist(),
        "slots": inst.time.num_slots,
        "dt": inst.time.slot_hours,
        "res": inst.resolution,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def _cache_load(inst, cache_dir: Path):
    path = Path(cache_dir) / f"oracle-{_instance_key(inst)}.json"
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    values = {(tid, int(slot)): v for tid, slot, v in doc["schedule"]}
    return OracleResult(
        cost=doc["cost"],
        schedule=ChargingSchedule(values, mode="binary"),
        voltages={int(s): np.array([complex(re, im) for re, im in V])
                  for s, V in doc["voltages"].items()},
        generation={int(s): tuple(g) for s, g in doc["generation"].items()},
        slot_costs={int(s): c for s, c in doc["slot_costs"].items()},
        charging_cost=doc["charging_cost"],
        generation_cost=doc["generation_cost"],
    )


def _cache_store(inst, result: OracleResult, cache_dir: Path):
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "cost": result.cost,
        "schedule": [[tid, slot, v] for (tid, slot), v in result.schedule.items()],
        "voltages": {str(s): [[z.real, z.imag] for z in V]
                     for s, V in result.voltages.items()},
        "generation": {str(s): list(g) for s, g in result.generation.items()},
        "slot_costs": {str(s): c for s, c in result.slot_costs.items()},
        "charging_cost": result.charging_cost,
        "generation_cost": result.generation_cost,
    }
    (cache_dir / f"oracle-{_instance_key(inst)}.json").write_text(json.dumps(doc))
