"""Charging tasks, load/price profiles, time slotting, and fleet generation.

The serving window runs 18:00 to 06:00 the next day, uniformly divided
into T slots (default 24 x 30 min).  Arrivals are drawn from a normal
distribution with mean 20:00 h and s.d. 1.5 h, truncated to the evening
period; every generated task is feasible by construction (the required
slot count fits its charging window).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .grid import GridCase

ARRIVAL_MEAN_H = 20.0
ARRIVAL_SD_H = 1.5
ARRIVAL_LO_H = 18.0
ARRIVAL_HI_H = 24.0


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class TimeGrid:
    num_slots: int = 24
    slot_hours: float = 0.5
    start_hour: float = 18.0

    def __post_init__(self):
        if self.num_slots < 1 or self.slot_hours <= 0:
            raise ScenarioError("need num_slots >= 1 and slot_hours > 0")

    def label(self, slot: int) -> str:
        h = (self.start_hour + (slot - 1) * self.slot_hours) % 24.0
        return f"{int(h):02d}:{int(round((h % 1) * 60)):02d}"

    def slot_of_hour(self, hour: float) -> int:
        """Slot whose boundary is the first one at or after `hour`.

        Arrivals strictly inside a slot become visible at the next boundary.
        """
        frac = (hour - self.start_hour) / self.slot_hours
        return min(self.num_slots, int(math.ceil(frac - 1e-9)) + 1)


@dataclass(frozen=True)
class ChargingTask:
    station: int              # generator bus acting as charging station
    index: int                # per-station PEV number
    arrival: int              # first available slot
    departure: int            # last available slot
    capacity_kwh: float = 100.0
    initial_soc: float = 0.2
    rate_kw: float = 20.0
    efficiency: float = 1.0
    required: int = 0         # slot count to fully charge

    @property
    def task_id(self) -> str:
        return f"cs{self.station}-{self.index}"

    @property
    def demand_kwh(self) -> float:
        return self.capacity_kwh * (1.0 - self.initial_soc)

    def window(self) -> range:
        return range(self.arrival, self.departure + 1)

    def slot_energy_kwh(self, slot_hours: float) -> float:
        return self.efficiency * self.rate_kw * slot_hours


@dataclass(frozen=True)
class Profile:
    name: str
    load_fraction: np.ndarray
    price: np.ndarray            # $/kWh per slot

    def __post_init__(self):
        lf = np.asarray(self.load_fraction, dtype=float)
        pr = np.asarray(self.price, dtype=float)
        if lf.shape != pr.shape or lf.ndim != 1:
            raise ScenarioError("profile arrays must be 1-d and equally long")
        if (lf <= 0).any():
            raise ScenarioError("load fractions must be positive")
        if (pr < 0).any():
            raise ScenarioError("prices must be nonnegative")
        object.__setattr__(self, "load_fraction", lf)
        object.__setattr__(self, "price", pr)


def load_profile_csv(path) -> Profile:
    """Read a `slot,load_fraction,price` CSV."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        reader = csv.DictReader(fh)
        missing = {"slot", "load_fraction", "price"} - set(reader.fieldnames or [])
        if missing:
            raise ScenarioError(f"profile {path}: missing columns {sorted(missing)}")
        for rec in reader:
            rows.append((int(rec["slot"]), float(rec["load_fraction"]), float(rec["price"])))
    rows.sort()
    if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
        raise ScenarioError(f"profile {path}: slots must be 1..T without gaps")
    return Profile(path.stem, np.array([r[1] for r in rows]), np.array([r[2] for r in rows]))


def bundled_profile(name: str) -> Profile:
    ref = resources.files("gridcharge.data").joinpath(f"{name}.csv")
    with resources.as_file(ref) as path:
        return load_profile_csv(path)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def required_slots(capacity_kwh: float, initial_soc: float, efficiency: float,
                   rate_kw: float, slot_hours: float) -> int:
    """Smallest slot count whose delivered energy covers the remaining demand."""
    if capacity_kwh <= 0 or rate_kw <= 0 or efficiency <= 0 or slot_hours <= 0:
        raise ScenarioError("capacity, rate, efficiency, and slot length must be positive")
    if not 0.0 <= initial_soc <= 1.0:
        raise ScenarioError(f"initial SOC {initial_soc} outside [0, 1]")
    demand = capacity_kwh * (1.0 - initial_soc)
    per_slot = efficiency * rate_kw * slot_hours
    return int(math.ceil(demand / per_slot - 1e-12))


def slots_for_energy(demand_kwh: float, task: ChargingTask, slot_hours: float) -> int:
    """Remaining slot count for a partially served task."""
    if demand_kwh <= 0:
        return 0
    per_slot = task.slot_energy_kwh(slot_hours)
    return int(math.ceil(demand_kwh / per_slot - 1e-12))


def sample_arrival_hours(count: int, seed: int) -> np.ndarray:
    """Arrival wall-clock hours ~ N(20, 1.5^2) truncated to [18, 24)."""
    if count < 0:
        raise ScenarioError("count must be >= 0")
    a = (ARRIVAL_LO_H - ARRIVAL_MEAN_H) / ARRIVAL_SD_H
    b = (ARRIVAL_HI_H - ARRIVAL_MEAN_H) / ARRIVAL_SD_H
    rng = np.random.default_rng(seed)
    return stats.truncnorm.rvs(a, b, loc=ARRIVAL_MEAN_H, scale=ARRIVAL_SD_H,
                               size=count, random_state=rng)


def sample_arrivals(count: int, seed: int, grid: TimeGrid | None = None) -> list[int]:
    grid = grid or TimeGrid()
    return [grid.slot_of_hour(h) for h in sample_arrival_hours(count, seed)]


def scale_load(base_load: float, profile: Profile, grid: TimeGrid) -> np.ndarray:
    """Per-slot load P(t) = l(t) * base * T / sum(l); totals T * base."""
    lf = profile.load_fraction
    if lf.shape[0] != grid.num_slots:
        raise ScenarioError(
            f"profile covers {lf.shape[0]} slots, time grid has {grid.num_slots}")
    total = lf.sum()
    if total <= 0:
        raise ScenarioError("profile load fractions sum to zero")
    return lf * (base_load * grid.num_slots / total)


def build_fleet(case: GridCase, pevs_per_station: int, seed: int,
                grid: TimeGrid | None = None, *,
                capacity_kwh: float = 100.0, initial_soc: float = 0.2,
                rate_kw: float = 20.0, efficiency: float = 1.0,
                slack_slots: tuple[int, int] = (2, 6)) -> list[ChargingTask]:
    """One fleet: `pevs_per_station` PEVs at every generator bus.

    Departures are arrival + required slots + a uniform random slack,
    clipped to the horizon; tasks whose window cannot fit the required
    slot count are rejected with a diagnostic.
    """
    if pevs_per_station < 0:
        raise ScenarioError("pevs_per_station must be >= 0")
    grid_t = grid or TimeGrid()
    stations = case.gen_buses
    n = pevs_per_station * len(stations)
    hours = sample_arrival_hours(n, seed)
    rng = np.random.default_rng(seed + 1)
    slacks = rng.integers(slack_slots[0], slack_slots[1] + 1, size=n)

    tasks = []
    i = 0
    for station in stations:
        for idx in range(1, pevs_per_station + 1):
            t_a = grid_t.slot_of_hour(hours[i])
            need = required_slots(capacity_kwh, initial_soc, efficiency,
                                  rate_kw, grid_t.slot_hours)
            t_d = min(grid_t.num_slots, t_a + need + int(slacks[i]))
            i += 1
            if t_d - t_a + 1 < need:
                raise ScenarioError(
                    f"task cs{station}-{idx}: window [{t_a},{t_d}] too short "
                    f"for {need} required slots")
            tasks.append(ChargingTask(
                station=station, index=idx, arrival=t_a, departure=t_d,
                capacity_kwh=capacity_kwh, initial_soc=initial_soc,
                rate_kw=rate_kw, efficiency=efficiency, required=need))
    return tasks


def fleet_to_json(tasks) -> str:
    """Serialize tasks as a JSON array of records."""
    import json

    return json.dumps([
        {"station": t.station, "index": t.index, "arrival": t.arrival,
         "departure": t.departure, "capacity_kwh": t.capacity_kwh,
         "initial_soc": t.initial_soc, "rate_kw": t.rate_kw,
         "efficiency": t.efficiency, "required": t.required}
        for t in tasks
    ], indent=1)


def load_fleet_json(path, slot_hours: float = 0.5) -> list:
    """Read a fleet file written by fleet_to_json (or hand-authored)."""
    import json

    path = Path(path)
    try:
        docs = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"fleet file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"fleet file {path}: invalid JSON ({exc})") from None
    if not isinstance(docs, list):
        raise ScenarioError(f"fleet file {path}: expected a JSON array")
    tasks = []
    for i, rec in enumerate(docs):
        for key in ("station", "index", "arrival", "departure"):
            if key not in rec:
                raise ScenarioError(f"fleet record {i}: missing field {key!r}")
        task = ChargingTask(
            station=int(rec["station"]), index=int(rec["index"]),
            arrival=int(rec["arrival"]), departure=int(rec["departure"]),
            capacity_kwh=float(rec.get("capacity_kwh", 100.0)),
            initial_soc=float(rec.get("initial_soc", 0.2)),
            rate_kw=float(rec.get("rate_kw", 20.0)),
            efficiency=float(rec.get("efficiency", 1.0)),
            required=int(rec.get("required", 0)))
        if task.required == 0 and task.initial_soc < 1.0:
            need = required_slots(task.capacity_kwh, task.initial_soc,
                                  task.efficiency, task.rate_kw, slot_hours)
            task = replace(task, required=need)
        if task.arrival > task.departure:
            raise ScenarioError(
                f"fleet record {i}: arrival {task.arrival} after departure")
        if task.required > task.departure - task.arrival + 1:
            raise ScenarioError(
                f"fleet record {i}: window too short for {task.required} slots")
        tasks.append(task)
    return tasks


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass
class ChargingSchedule:
    """Per-task per-slot charging levels; relaxed in [0,1] or binary."""

    values: dict                      # (task_id, slot) -> level
    mode: str = "relaxed"             # "relaxed" | "binary"

    def get(self, task_id: str, slot: int) -> float:
        return self.values.get((task_id, slot), 0.0)

    def task_sum(self, task_id: str) -> float:
        return sum(v for (tid, _), v in self.values.items() if tid == task_id)

    def max_binary_violation(self) -> float:
        if not self.values:
            return 0.0
        return max(abs(v - round(v)) for v in self.values.values())

    def items(self):
        return self.values.items()

    def validate(self, tasks: list[ChargingTask]):
        windows = {t.task_id: set(t.window()) for t in tasks}
        for (tid, slot), v in self.values.items():
            if tid not in windows:
                raise ScenarioError(f"schedule references unknown task {tid}")
            if slot not in windows[tid]:
                raise ScenarioError(f"task {tid}: slot {slot} outside charging window")
            if not -1e-9 <= v <= 1.0 + 1e-9:
                raise ScenarioError(f"task {tid} slot {slot}: level {v} outside [0,1]")
            if self.mode == "binary" and abs(v - round(v)) > 1e-12:
                raise ScenarioError(f"task {tid} slot {slot}: non-binary level {v}")


# ---------------------------------------------------------------------------
# full scenario bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    case: GridCase
    time: TimeGrid
    tasks: tuple[ChargingTask, ...]
    profile: Profile
    loads_p: np.ndarray       # (n_buses, T), per-unit
    loads_q: np.ndarray
    prices: np.ndarray        # (T,), $/kWh
    seed: int

    def task(self, task_id: str) -> ChargingTask:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ScenarioError(f"unknown task {task_id}")


def make_scenario(case: GridCase, profile: Profile, pevs_per_station: int,
                  seed: int, grid: TimeGrid | None = None,
                  tasks: list | None = None, **fleet_kwargs) -> Scenario:
    grid_t = grid or TimeGrid()
    if tasks is None:
        tasks = build_fleet(case, pevs_per_station, seed, grid_t, **fleet_kwargs)
    else:
        stations = set(case.gen_buses)
        for task in tasks:
            if task.station not in stations:
                raise ScenarioError(
                    f"task {task.task_id}: station {task.station} is not a "
                    "generator bus")
            if task.departure > grid_t.num_slots:
                raise ScenarioError(
                    f"task {task.task_id}: departure {task.departure} beyond "
                    f"the {grid_t.num_slots}-slot horizon")
    n = case.n_buses
    loads_p = np.zeros((n, grid_t.num_slots))
    loads_q = np.zeros((n, grid_t.num_slots))
    for i, bus in enumerate(case.buses):
        loads_p[i] = scale_load(bus.load_p, profile, grid_t)
        loads_q[i] = scale_load(bus.load_q, profile, grid_t) if bus.load_q else 0.0
    return Scenario(case=case, time=grid_t, tasks=tuple(tasks), profile=profile,
                    loads_p=loads_p, loads_q=loads_q,
                    prices=profile.price.copy(), seed=seed)
