"""Gram-matrix relaxation of the per-horizon joint scheduling problem.

Voltage products are collected in one Hermitian block W(t') per slot
(W_km = V_k V_m*), which turns the quadratic power-balance equalities
into linear rows plus a PSD constraint.  Charging levels enter the
generator-bus balance as additional draw; the rank-one requirement on
W is dropped here and restored downstream by the penalty iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ComplexExpr, ConicProgram, LinExpr, ScalarRef
from .grid import GridCase, generation_cost_rate
from .scenario import ChargingTask, TimeGrid, slots_for_energy


class HorizonError(Exception):
    pass


@dataclass(frozen=True)
class HorizonTask:
    task: ChargingTask
    remaining_kwh: float

    def required_now(self, slot_hours: float) -> int:
        return slots_for_energy(self.remaining_kwh, self.task, slot_hours)

    def window_in(self, start: int, end: int) -> range:
        return range(max(start, self.task.arrival), min(end, self.task.departure) + 1)


@dataclass
class HorizonProblem:
    case: GridCase
    time: TimeGrid
    start: int
    end: int
    tasks: list          # list[HorizonTask]
    loads_p: np.ndarray  # (n_buses, T)
    loads_q: np.ndarray
    prices: np.ndarray   # (T,)
    include_angle: bool = True
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.start <= self.end <= self.time.num_slots:
            raise HorizonError(f"bad horizon [{self.start}, {self.end}]")
        kept = []
        for ht in self.tasks:
            if ht.task.departure < self.start:
                self.excluded.append(
                    f"task {ht.task.task_id} departs at {ht.task.departure} "
                    f"before horizon start {self.start}")
                continue
            if ht.task.departure > self.end:
                raise HorizonError(
                    f"task {ht.task.task_id} departs at {ht.task.departure} "
                    f"after horizon end {self.end}")
            if ht.remaining_kwh > 1e-12:
                kept.append(ht)
        self.tasks = kept
        stations = set(self.case.gen_buses)
        for ht in self.tasks:
            if ht.task.station not in stations:
                raise HorizonError(
                    f"task {ht.task.task_id}: station {ht.task.station} "
                    "is not a generator bus")

    @property
    def slots(self) -> range:
        return range(self.start, self.end + 1)

    def rate_pu(self, ht: HorizonTask) -> float:
        return ht.task.rate_kw / 1000.0 / self.case.base_mva


OBJECTIVE_SCALE = 1e-3      # solve in k$: keeps cost rows near unit magnitude


@dataclass
class SdrProgram:
    prog: ConicProgram
    hp: HorizonProblem
    w: dict                       # slot -> BlockRef
    pg: dict                      # (bus, slot) -> ScalarRef
    qg: dict                      # (bus, slot) -> ScalarRef
    tau: dict                     # (task_id, slot) -> ScalarRef
    fixed_tau: dict | None
    charging_base: float          # constant charging cost when tau is fixed
    obj_scale: float = OBJECTIVE_SCALE

    def objective_dollars(self, sol) -> float:
        """Solver objective mapped back to dollars (plus fixed charging cost)."""
        return sol.objective / self.obj_scale + self.charging_base


def build_sdr(hp: HorizonProblem, *, demand_mode: str = "energy",
              fixed_tau: dict | None = None,
              tau_bars: dict | None = None) -> SdrProgram:
    """Assemble the relaxed horizon program.

    demand_mode "energy": per-task delivered-energy coverage inequalities
    (the initializer's form).  demand_mode "counts": per-task slot-count
    equalities with tau in [0, 1] (the iteration's form); `tau_bars` maps
    task_id to its slot count, defaulting to the ceiling of the remaining
    demand.  With `fixed_tau` set, charging levels are constants in the
    balance rows, no tau variables exist, and the objective is generation
    cost only.
    """
    if demand_mode not in ("energy", "counts"):
        raise HorizonError(f"unknown demand mode {demand_mode!r}")
    case = hp.case
    dt = hp.time.slot_hours
    prog = ConicProgram()
    w: dict = {}
    pg: dict = {}
    qg: dict = {}
    tau: dict = {}

    for t in hp.slots:
        w[t] = prog.add_hermitian_block(f"W{t}", case.n_buses)
        for g in case.generators:
            pg[(g.bus, t)] = prog.add_scalar(f"pg{g.bus}_{t}", g.p_min, g.p_max)
            qg[(g.bus, t)] = prog.add_scalar(f"qg{g.bus}_{t}", g.q_min, g.q_max)

    charging_base = 0.0
    if fixed_tau is None:
        for ht in hp.tasks:
            for t in ht.window_in(hp.start, hp.end):
                tau[(ht.task.task_id, t)] = prog.add_scalar(
                    f"tau_{ht.task.task_id}_{t}", 0.0, 1.0)
    else:
        for ht in hp.tasks:
            tid = ht.task.task_id
            for t in ht.window_in(hp.start, hp.end):
                level = fixed_tau.get((tid, t), 0.0)
                charging_base += hp.prices[t - 1] * ht.task.rate_kw * dt * level

    # per-slot grid physics
    for t in hp.slots:
        W = w[t]
        for bus in case.buses:
            k = case.bus_index(bus.id)
            acc = ComplexExpr()
            for m, y in case.neighbors(bus.id):
                acc += (W.entry(k, k) - W.entry(k, case.bus_index(m))) * np.conj(y)
            if bus.id in case.gen_buses:
                draw = LinExpr()
                for ht in hp.tasks:
                    if ht.task.station != bus.id or t not in ht.window_in(hp.start, hp.end):
                        continue
                    r = hp.rate_pu(ht)
                    if fixed_tau is None:
                        draw += tau[(ht.task.task_id, t)].expr * r
                    else:
                        draw += r * fixed_tau.get((ht.task.task_id, t), 0.0)
                acc -= ComplexExpr(
                    pg[(bus.id, t)].expr - hp.loads_p[k, t - 1] - draw,
                    qg[(bus.id, t)].expr - hp.loads_q[k, t - 1],
                )
            else:
                acc += complex(hp.loads_p[k, t - 1], hp.loads_q[k, t - 1])
            prog.add_complex_equality(acc, 0j)

            prog.add_inequality(W.diag(k), bus.v_max ** 2)
            prog.add_inequality(W.diag(k) * -1.0, -bus.v_min ** 2)

        if hp.include_angle:
            for ln in case.lines:
                i = case.bus_index(ln.from_bus)
                j = case.bus_index(ln.to_bus)
                tan_lim = math.tan(case.angle_limit(ln.from_bus, ln.to_bus))
                prog.add_inequality(W.im(i, j) - W.re(i, j) * tan_lim, 0.0)
                prog.add_inequality(W.im(i, j) * -1.0 - W.re(i, j) * tan_lim, 0.0)

    # demand completion
    if fixed_tau is None:
        for ht in hp.tasks:
            window = list(ht.window_in(hp.start, hp.end))
            per_slot = ht.task.slot_energy_kwh(dt)
            total = LinExpr()
            for t in window:
                total += tau[(ht.task.task_id, t)].expr
            if demand_mode == "energy":
                prog.add_inequality(total * -per_slot, -ht.remaining_kwh)
            else:
                bar = (tau_bars or {}).get(
                    ht.task.task_id, ht.required_now(dt))
                if bar > len(window):
                    raise HorizonError(
                        f"task {ht.task.task_id}: {bar} required slots exceed "
                        f"window of {len(window)}")
                prog.add_equality(total, float(bar))

    # objective: generation cost (+ charging cost when tau is variable),
    # assembled at OBJECTIVE_SCALE to keep solver rows near unit magnitude
    scale = OBJECTIVE_SCALE
    for t in hp.slots:
        for g in case.generators:
            c2, c1, c0 = g.cost
            ref = pg[(g.bus, t)]
            if c2 > 0:
                prog.add_quadratic_cost(ref, dt * c2 * case.base_mva ** 2, scale)
            prog.add_objective(ref.expr, scale * dt * c1 * case.base_mva)
            prog.add_objective_constant(scale * dt * c0)
    if fixed_tau is None:
        for (tid, t), ref in tau.items():
            ht = next(h for h in hp.tasks if h.task.task_id == tid)
            prog.add_objective(ref.expr, scale * hp.prices[t - 1] * ht.task.rate_kw * dt)

    return SdrProgram(prog=prog, hp=hp, w=w, pg=pg, qg=qg, tau=tau,
                      fixed_tau=fixed_tau, charging_base=charging_base,
                      obj_scale=scale)


# ---------------------------------------------------------------------------
# solution bookkeeping
# ---------------------------------------------------------------------------


def tau_values(sdr: SdrProgram, sol) -> dict:
    return {key: float(np.clip(sol.scalar(ref), 0.0, 1.0))
            for key, ref in sdr.tau.items()}


def generation_values(sdr: SdrProgram, sol):
    pg = {key: sol.scalar(ref) for key, ref in sdr.pg.items()}
    qg = {key: sol.scalar(ref) for key, ref in sdr.qg.items()}
    return pg, qg


def generation_cost(hp: HorizonProblem, pg: dict) -> float:
    dt = hp.time.slot_hours
    total = 0.0
    for (bus, t), p in pg.items():
        gen = hp.case.generator_at(bus)
        total += dt * generation_cost_rate(gen, p, hp.case.base_mva)
    return total


def charging_cost(hp: HorizonProblem, tau: dict) -> float:
    dt = hp.time.slot_hours
    rates = {ht.task.task_id: ht.task.rate_kw for ht in hp.tasks}
    return sum(hp.prices[t - 1] * rates[tid] * dt * level
               for (tid, t), level in tau.items())


def horizon_objective(hp: HorizonProblem, pg: dict, tau: dict) -> float:
    return generation_cost(hp, pg) + charging_cost(hp, tau)


def recovered_balance_residual(case: GridCase, V: np.ndarray,
                               p_g: dict, q_g: dict,
                               load_p: np.ndarray, load_q: np.ndarray,
                               draw_pu: dict | None = None) -> float:
    """Max power-flow mismatch of a recovered voltage vector, per-unit.

    p_g/q_g map generator bus id to per-unit output; draw_pu maps station
    bus id to total PEV draw.
    """
    draw_pu = draw_pu or {}
    worst = 0.0
    for bus in case.buses:
        k = case.bus_index(bus.id)
        acc = 0j
        for m, y in case.neighbors(bus.id):
            acc += y * (V[k] - V[case.bus_index(m)])
        inj = V[k] * np.conj(acc)
        if bus.id in case.gen_buses:
            target = complex(
                p_g.get(bus.id, 0.0) - load_p[k] - draw_pu.get(bus.id, 0.0),
                q_g.get(bus.id, 0.0) - load_q[k],
            )
        else:
            target = complex(-load_p[k], -load_q[k])
        worst = max(worst, abs(inj - target))
    return worst
