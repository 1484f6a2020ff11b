import numpy as np
import pytest

from gridcharge.grid import bundled_case
from gridcharge.oracle import make_oracle_scenario
from gridcharge.scenario import ChargingTask, TimeGrid


@pytest.fixture(scope="session")
def case3():
    return bundled_case("case3")


@pytest.fixture(scope="session")
def case9():
    return bundled_case("case9")


@pytest.fixture(scope="session")
def oracle_scenario(case3):
    return make_oracle_scenario(case3, seed=7)


def toy_loads(case, T, seed=0, scale=1.0):
    """Per-slot load arrays with strictly varying fractions."""
    rng = np.random.default_rng(seed)
    frac = (0.8 + 0.4 * rng.random(T)) * scale
    base_p = np.array([b.load_p for b in case.buses])
    base_q = np.array([b.load_q for b in case.buses])
    return np.outer(base_p, frac), np.outer(base_q, frac)


def toy_task(station=1, arrival=1, departure=4, required=2, rate_kw=2000.0):
    capacity = required * rate_kw * 0.5 / 0.8
    return ChargingTask(station=station, index=1, arrival=arrival,
                        departure=departure, capacity_kwh=capacity,
                        initial_soc=0.2, rate_kw=rate_kw, efficiency=1.0,
                        required=required)
