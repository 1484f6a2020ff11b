"""Enumeration oracle: power flow, search, feasibility certificates."""

import numpy as np
import pytest

from gridcharge.grid import _parse_case
from gridcharge.oracle import (
    OracleError,
    OracleInfeasible,
    OracleInstance,
    instance_from_scenario,
    make_oracle_scenario,
    oracle_opf,
    oracle_solve,
    solve_power_flow,
)
from gridcharge.relaxation import recovered_balance_residual
from gridcharge.scenario import ChargingTask, TimeGrid

from conftest import toy_task


def two_bus_case():
    doc = {
        "base_mva": 100.0,
        "buses": [{"id": 1, "v_min": 0.95, "v_max": 1.05},
                  {"id": 2, "v_min": 0.95, "v_max": 1.05,
                   "load_p": 0.4, "load_q": 0.1}],
        "lines": [{"from": 1, "to": 2, "y_re": 2.0, "y_im": -6.0}],
        "generators": [{"bus": 1, "p_min": 0.0, "p_max": 2.0, "q_min": -2.0,
                        "q_max": 2.0, "cost": [0.4, 20.0, 5.0]}],
    }
    return _parse_case(doc, "case2")


def _instance(case, tasks, T=3, seed=1):
    rng = np.random.default_rng(seed)
    frac = 0.8 + 0.4 * rng.random(T)
    base_p = np.array([b.load_p for b in case.buses])
    base_q = np.array([b.load_q for b in case.buses])
    return OracleInstance(
        grid=case, time=TimeGrid(num_slots=T, slot_hours=0.5),
        tasks=tuple(tasks), loads_p=np.outer(base_p, frac),
        loads_q=np.outer(base_q, frac),
        prices=np.round(0.08 + 0.1 * rng.random(T), 6))


# --- power flow ---------------------------------------------------------------

def test_power_flow_satisfies_injections(case3):
    loads_p = np.array([0.0, 0.30, 0.25])
    loads_q = np.array([0.0, 0.10, 0.08])
    rhs = np.array([0j, complex(-0.30, -0.10), complex(-0.25, -0.08)])
    V = solve_power_flow(case3, 1.02, rhs)
    assert V is not None
    assert abs(V[0] - 1.02) < 1e-12
    # generator absorbs the slack; residual should vanish everywhere
    inj1 = V[0] * np.conj(sum(y * (V[0] - V[case3.bus_index(m)])
                              for m, y in case3.neighbors(1)))
    resid = recovered_balance_residual(
        case3, V, {1: inj1.real + loads_p[0]}, {1: inj1.imag + loads_q[0]},
        loads_p, loads_q)
    assert resid < 1e-9


def test_power_flow_diverges_gracefully(case3):
    # absurd load has no high-voltage solution
    rhs = np.array([0j, complex(-500.0, -100.0), 0j])
    assert solve_power_flow(case3, 1.0, rhs) is None


def test_oracle_opf_feasibility_limits():
    case = two_bus_case()
    loads_p = np.array([0.0, 0.4])
    loads_q = np.array([0.0, 0.1])
    res = oracle_opf(case, loads_p, loads_q, 0.0, 0.5)
    assert res is not None
    cost, V, p_g, q_g = res
    assert 0.95 - 1e-4 <= abs(V[1]) <= 1.05 + 1e-4
    assert p_g >= 0.4                      # load plus losses
    # infeasible draw: beyond generator capacity
    assert oracle_opf(case, loads_p, loads_q, 5.0, 0.5) is None


# --- enumeration ----------------------------------------------------------------

def test_forced_unique_schedule():
    case = two_bus_case()
    task = ChargingTask(station=1, index=1, arrival=1, departure=2,
                        capacity_kwh=1000.0, initial_soc=0.2, rate_kw=1000.0,
                        efficiency=1.0, required=2)
    inst = _instance(case, [task], T=3)
    res = oracle_solve(inst)
    assert sorted(res.schedule.values) == [("cs1-1", 1), ("cs1-1", 2)]


def test_infeasible_window_certificate():
    case = two_bus_case()
    task = ChargingTask(station=1, index=1, arrival=1, departure=2,
                        capacity_kwh=5000.0, initial_soc=0.2, rate_kw=1000.0,
                        efficiency=1.0, required=8)
    inst = _instance(case, [task], T=3)
    with pytest.raises(OracleInfeasible) as err:
        oracle_solve(inst)
    assert "cs1-1" in str(err.value)


def test_size_guards(case3, case9):
    with pytest.raises(OracleError, match="buses"):
        _instance(case9, [], T=3)
    tasks = [toy_task(arrival=1, departure=3, required=1) for _ in range(4)]
    with pytest.raises(OracleError, match="tasks"):
        _instance(case3, tasks, T=3)
    with pytest.raises(OracleError, match="slots"):
        _instance(case3, [], T=8)


def test_single_generator_guard():
    doc = {
        "base_mva": 100.0,
        "buses": [{"id": i, "v_min": 0.95, "v_max": 1.05} for i in (1, 2, 3)],
        "lines": [{"from": 1, "to": 2, "y_re": 2.0, "y_im": -6.0},
                  {"from": 2, "to": 3, "y_re": 2.0, "y_im": -6.0}],
        "generators": [
            {"bus": 1, "p_min": 0, "p_max": 2, "q_min": -2, "q_max": 2,
             "cost": [0.1, 10, 0]},
            {"bus": 3, "p_min": 0, "p_max": 2, "q_min": -2, "q_max": 2,
             "cost": [0.1, 10, 0]},
        ],
    }
    case = _parse_case(doc, "twogen")
    with pytest.raises(OracleError, match="one generator"):
        _instance(case, [], T=2)


def test_charging_prefers_cheap_slots(case3):
    # one task, one required slot, strictly increasing prices: slot 1 wins
    task = toy_task(arrival=1, departure=3, required=1)
    inst = _instance(case3, [task], T=3, seed=2)
    inst = OracleInstance(
        grid=inst.grid, time=inst.time, tasks=inst.tasks,
        loads_p=np.repeat(inst.loads_p[:, :1], 3, axis=1),
        loads_q=np.repeat(inst.loads_q[:, :1], 3, axis=1),
        prices=np.array([0.05, 0.10, 0.15]))
    res = oracle_solve(inst)
    assert list(res.schedule.values) == [("cs1-1", 1)]


def test_cache_roundtrip(tmp_path, case3):
    scn = make_oracle_scenario(case3, seed=4)
    inst = instance_from_scenario(scn)
    first = oracle_solve(inst, cache_dir=tmp_path)
    assert any(p.name.startswith("oracle-") for p in tmp_path.iterdir())
    second = oracle_solve(inst, cache_dir=tmp_path)
    assert second.cost == first.cost
    assert second.schedule.values == first.schedule.values
    for slot in first.voltages:
        assert np.allclose(second.voltages[slot], first.voltages[slot])


def test_make_oracle_scenario_feasible_and_deterministic(case3):
    for seed in range(5):
        scn = make_oracle_scenario(case3, seed=seed)
        assert 4 <= scn.time.num_slots <= 6
        assert len(scn.tasks) == 2
        for task in scn.tasks:
            assert task.required <= task.departure - task.arrival + 1
            assert task.departure <= scn.time.num_slots
    a = make_oracle_scenario(case3, seed=3)
    b = make_oracle_scenario(case3, seed=3)
    assert a.tasks == b.tasks
    assert np.array_equal(a.prices, b.prices)
