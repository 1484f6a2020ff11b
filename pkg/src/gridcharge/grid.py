"""Residential grid model: buses, lines, generators, and case-file ingestion.

Cases live in a JSON schema mirroring MATPOWER's bus/gen/branch tables;
see docs/case-format.md for the column mapping.  All electrical
quantities are per-unit on base_mva except generator cost coefficients,
which apply to MW.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

DEFAULT_ANGLE_LIMIT = math.pi / 6


class CaseError(Exception):
    """Raised when a case file fails schema or invariant validation."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    v_min: float
    v_max: float
    load_p: float = 0.0       # per-unit active base load
    load_q: float = 0.0       # per-unit reactive base load


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    admittance: complex       # series admittance y_km, per-unit siemens


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: tuple[float, float, float]    # (c2, c1, c0): $/MW^2 h, $/MWh, $/h


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    buses: tuple[BusSpec, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    angle_limits: dict = field(default_factory=dict, hash=False)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def gen_buses(self) -> tuple[int, ...]:
        return tuple(g.bus for g in self.generators)

    def bus(self, k: int) -> BusSpec:
        return self._bus_map[k]

    def bus_index(self, k: int) -> int:
        """0-based position of bus id k (case files use 1-based ids)."""
        return self._bus_pos[k]

    def generator_at(self, k: int) -> Generator:
        for g in self.generators:
            if g.bus == k:
                return g
        raise CaseError(f"bus {k} has no generator")

    def angle_limit(self, k: int, m: int) -> float:
        key = (min(k, m), max(k, m))
        return self.angle_limits.get(key, DEFAULT_ANGLE_LIMIT)

    def __post_init__(self):
        bus_map = {b.id: b for b in self.buses}
        object.__setattr__(self, "_bus_map", bus_map)
        object.__setattr__(
            self, "_bus_pos", {b.id: i for i, b in enumerate(self.buses)}
        )
        neighbors: dict[int, list] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            neighbors[ln.from_bus].append((ln.to_bus, ln.admittance))
            neighbors[ln.to_bus].append((ln.from_bus, ln.admittance))
        object.__setattr__(self, "_neighbors", neighbors)

    def neighbors(self, k: int):
        try:
            return list(self._neighbors[k])
        except KeyError:
            raise CaseError(f"unknown bus {k}") from None


def admittance_neighbors(case: GridCase, k: int):
    """Buses m adjacent to k together with the line admittance y_km."""
    return case.neighbors(k)


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------


def _require(cond: bool, message: str):
    if not cond:
        raise CaseError(message)


def _parse_case(doc: dict, name: str) -> GridCase:
    for key in ("base_mva", "buses", "lines", "generators"):
        _require(key in doc, f"case {name}: missing top-level key {key!r}")

    base_mva = float(doc["base_mva"])
    _require(base_mva > 0, f"case {name}: base_mva must be positive")

    buses = []
    seen = set()
    for i, rec in enumerate(doc["buses"]):
        for key in ("id", "v_min", "v_max"):
            _require(key in rec, f"bus record {i}: missing field {key!r}")
        bid = int(rec["id"])
        _require(bid >= 1, f"bus {bid}: id must be >= 1")
        _require(bid not in seen, f"bus {bid}: duplicate id")
        seen.add(bid)
        v_min, v_max = float(rec["v_min"]), float(rec["v_max"])
        _require(0 < v_min <= v_max, f"bus {bid}: need 0 < v_min <= v_max")
        buses.append(
            BusSpec(bid, v_min, v_max,
                    float(rec.get("load_p", 0.0)), float(rec.get("load_q", 0.0)))
        )

    lines = []
    for i, rec in enumerate(doc["lines"]):
        for key in ("from", "to", "y_re", "y_im"):
            _require(key in rec, f"line record {i}: missing field {key!r}")
        f, t = int(rec["from"]), int(rec["to"])
        _require(f in seen, f"line {i}: endpoint {f} is not a declared bus")
        _require(t in seen, f"line {i}: endpoint {t} is not a declared bus")
        _require(f != t, f"line {i}: self-loop at bus {f}")
        y = complex(float(rec["y_re"]), float(rec["y_im"]))
        _require(abs(y) > 0 and math.isfinite(abs(y)),
                 f"line {i} ({f},{t}): admittance must be finite and nonzero")
        lines.append(Line(f, t, y))

    gens = []
    gen_buses = set()
    for i, rec in enumerate(doc["generators"]):
        for key in ("bus", "p_min", "p_max", "q_min", "q_max", "cost"):
            _require(key in rec, f"generator record {i}: missing field {key!r}")
        bus = int(rec["bus"])
        _require(bus in seen, f"generator {i}: bus {bus} is not declared")
        _require(bus not in gen_buses, f"generator {i}: duplicate generator at bus {bus}")
        gen_buses.add(bus)
        p_min, p_max = float(rec["p_min"]), float(rec["p_max"])
        q_min, q_max = float(rec["q_min"]), float(rec["q_max"])
        _require(p_min <= p_max, f"generator at bus {bus}: p_min > p_max")
        _require(q_min <= q_max, f"generator at bus {bus}: q_min > q_max")
        cost = tuple(float(c) for c in rec["cost"])
        _require(len(cost) == 3, f"generator at bus {bus}: cost must be (c2, c1, c0)")
        _require(cost[0] >= 0, f"generator at bus {bus}: c2 must be >= 0")
        gens.append(Generator(bus, p_min, p_max, q_min, q_max, cost))
    _require(len(gens) >= 1, f"case {name}: at least one generator required")

    angle_limits = {}
    line_keys = {(min(l.from_bus, l.to_bus), max(l.from_bus, l.to_bus)) for l in lines}
    for i, rec in enumerate(doc.get("angle_limits", [])):
        for key in ("from", "to", "max_rad"):
            _require(key in rec, f"angle_limit record {i}: missing field {key!r}")
        f, t = int(rec["from"]), int(rec["to"])
        key = (min(f, t), max(f, t))
        _require(key in line_keys, f"angle_limit {i}: no line ({f},{t})")
        lim = float(rec["max_rad"])
        _require(0 < lim < math.pi / 2, f"angle_limit {i}: max_rad must be in (0, pi/2)")
        angle_limits[key] = lim

    return GridCase(
        name=str(doc.get("name", name)),
        base_mva=base_mva,
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        angle_limits=angle_limits,
    )


def load_case(path) -> GridCase:
    """Load and validate a JSON grid case from a file path."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CaseError(f"case file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CaseError(f"case file {path}: invalid JSON ({exc})") from None
    return _parse_case(doc, path.stem)


def bundled_case(name: str) -> GridCase:
    """Load one of the packaged cases: case3, case9, case14, case30, case57."""
    ref = resources.files("gridcharge.data").joinpath(f"{name}.json")
    with resources.as_file(ref) as path:
        return load_case(path)


def serialize_case(case: GridCase) -> dict:
    """Dictionary form that _parse_case reads back to an identical GridCase."""
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [
            {"id": b.id, "v_min": b.v_min, "v_max": b.v_max,
             "load_p": b.load_p, "load_q": b.load_q}
            for b in case.buses
        ],
        "lines": [
            {"from": l.from_bus, "to": l.to_bus,
             "y_re": l.admittance.real, "y_im": l.admittance.imag}
            for l in case.lines
        ],
        "generators": [
            {"bus": g.bus, "p_min": g.p_min, "p_max": g.p_max,
             "q_min": g.q_min, "q_max": g.q_max, "cost": list(g.cost)}
            for g in case.generators
        ],
        "angle_limits": [
            {"from": k, "to": m, "max_rad": lim}
            for (k, m), lim in sorted(case.angle_limits.items())
        ],
    }


def generation_cost_rate(gen: Generator, p_pu: float, base_mva: float) -> float:
    """Cost rate f(P) in $/h for per-unit output p_pu."""
    c2, c1, c0 = gen.cost
    p_mw = p_pu * base_mva
    return c2 * p_mw * p_mw + c1 * p_mw + c0
