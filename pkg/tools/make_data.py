"""Regenerate the bundled case files and synthetic profiles in src/gridcharge/data."""

import json
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "gridcharge" / "data"


def y_of(r, x):
    y = 1.0 / complex(r, x)
    return round(y.real, 10), round(y.imag, 10)


def case(name, base, vlim, loads, gens, branches):
    v_min, v_max = vlim
    bus_ids = sorted({b for br in branches for b in br[:2]} | set(loads) | {g[0] for g in gens})
    buses = []
    for bid in bus_ids:
        p, q = loads.get(bid, (0.0, 0.0))
        buses.append({"id": bid, "v_min": v_min, "v_max": v_max,
                      "load_p": round(p / base, 8), "load_q": round(q / base, 8)})
    lines = []
    for (f, t, r, x) in branches:
        yre, yim = y_of(r, x)
        lines.append({"from": f, "to": t, "y_re": yre, "y_im": yim})
    generators = []
    for (bus, pmin, pmax, qmin, qmax, cost) in gens:
        generators.append({"bus": bus, "p_min": pmin / base, "p_max": pmax / base,
                           "q_min": qmin / base, "q_max": qmax / base, "cost": list(cost)})
    doc = {"name": name, "base_mva": base, "buses": buses,
           "lines": lines, "generators": generators}
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(name, len(buses), "buses,", len(lines), "lines,", len(generators), "gens")


# --- case3: 3-bus radial oracle fixture (1 generator, 2 lines) --------------
case(
    "case3", 100.0, (0.95, 1.05),
    loads={2: (30.0, 10.0), 3: (25.0, 8.0)},
    gens=[(1, 0.0, 200.0, -200.0, 200.0, (0.5, 25.0, 10.0))],
    branches=[(1, 2, 0.03, 0.10), (1, 3, 0.04, 0.12)],
)

# --- case9: WSCC 9-bus (MATPOWER case9; shunts dropped, series y only) ------
case(
    "case9", 100.0, (0.9, 1.1),
    loads={5: (90.0, 30.0), 7: (100.0, 35.0), 9: (125.0, 50.0)},
    gens=[
        (1, 10.0, 250.0, -300.0, 300.0, (0.11, 5.0, 150.0)),
        (2, 10.0, 300.0, -300.0, 300.0, (0.085, 1.2, 600.0)),
        (3, 10.0, 270.0, -300.0, 300.0, (0.1225, 1.0, 335.0)),
    ],
    branches=[
        (1, 4, 0.0, 0.0576), (4, 5, 0.017, 0.092), (5, 6, 0.039, 0.17),
        (3, 6, 0.0, 0.0586), (6, 7, 0.0119, 0.1008), (7, 8, 0.0085, 0.072),
        (8, 2, 0.0, 0.0625), (8, 9, 0.032, 0.161), (9, 4, 0.01, 0.085),
    ],
)

# --- case14: IEEE 14-bus (MATPOWER case14) -----------------------------------
case(
    "case14", 100.0, (0.94, 1.06),
    loads={2: (21.7, 12.7), 3: (94.2, 19.0), 4: (47.8, -3.9), 5: (7.6, 1.6),
           6: (11.2, 7.5), 9: (29.5, 16.6), 10: (9.0, 5.8), 11: (3.5, 1.8),
           12: (6.1, 1.6), 13: (13.5, 5.8), 14: (14.9, 5.0)},
    gens=[
        (1, 0.0, 332.4, 0.0, 10.0, (0.0430293, 20.0, 0.0)),
        (2, 0.0, 140.0, -40.0, 50.0, (0.25, 20.0, 0.0)),
        (3, 0.0, 100.0, 0.0, 40.0, (0.01, 40.0, 0.0)),
        (6, 0.0, 100.0, -6.0, 24.0, (0.01, 40.0, 0.0)),
        (8, 0.0, 100.0, -6.0, 24.0, (0.01, 40.0, 0.0)),
    ],
    branches=[
        (1, 2, 0.01938, 0.05917), (1, 5, 0.05403, 0.22304),
        (2, 3, 0.04699, 0.19797), (2, 4, 0.05811, 0.17632),
        (2, 5, 0.05695, 0.17388), (3, 4, 0.06701, 0.17103),
        (4, 5, 0.01335, 0.04211), (4, 7, 0.0, 0.20912),
        (4, 9, 0.0, 0.55618), (5, 6, 0.0, 0.25202),
        (6, 11, 0.09498, 0.1989), (6, 12, 0.12291, 0.25581),
        (6, 13, 0.06615, 0.13027), (7, 8, 0.0, 0.17615),
        (7, 9, 0.0, 0.11001), (9, 10, 0.03181, 0.0845),
        (9, 14, 0.12711, 0.27038), (10, 11, 0.08205, 0.19207),
        (12, 13, 0.22092, 0.19988), (13, 14, 0.17093, 0.34802),
    ],
)

# --- case30: IEEE 30-bus (MATPOWER case30 structure) -------------------------
case(
    "case30", 100.0, (0.95, 1.05),
    loads={2: (21.7, 12.7), 3: (2.4, 1.2), 4: (7.6, 1.6), 7: (22.8, 10.9),
           8: (30.0, 30.0), 10: (5.8, 2.0), 12: (11.2, 7.5), 14: (6.2, 1.6),
           15: (8.2, 2.5), 16: (3.5, 1.8), 17: (9.0, 5.8), 18: (3.2, 0.9),
           19: (9.5, 3.4), 20: (2.2, 0.7), 21: (17.5, 11.2), 23: (3.2, 1.6),
           24: (8.7, 6.7), 26: (3.5, 2.3), 29: (2.4, 0.9), 30: (10.6, 1.9)},
    gens=[
        (1, 0.0, 80.0, -20.0, 150.0, (0.02, 2.0, 0.0)),
        (2, 0.0, 80.0, -20.0, 60.0, (0.0175, 1.75, 0.0)),
        (22, 0.0, 50.0, -15.0, 62.5, (0.0625, 1.0, 0.0)),
        (27, 0.0, 55.0, -15.0, 48.7, (0.00834, 3.25, 0.0)),
        (23, 0.0, 30.0, -10.0, 40.0, (0.025, 3.0, 0.0)),
        (13, 0.0, 40.0, -15.0, 44.7, (0.025, 3.0, 0.0)),
    ],
    branches=[
        (1, 2, 0.0192, 0.0575), (1, 3, 0.0452, 0.1652), (2, 4, 0.057, 0.1737),
        (3, 4, 0.0132, 0.0379), (2, 5, 0.0472, 0.1983), (2, 6, 0.0581, 0.1763),
        (4, 6, 0.0119, 0.0414), (5, 7, 0.046, 0.116), (6, 7, 0.0267, 0.082),
        (6, 8, 0.012, 0.042), (6, 9, 0.001, 0.208), (6, 10, 0.001, 0.556),
        (9, 11, 0.001, 0.208), (9, 10, 0.001, 0.11), (4, 12, 0.001, 0.256),
        (12, 13, 0.001, 0.14), (12, 14, 0.1231, 0.2559), (12, 15, 0.0662, 0.1304),
        (12, 16, 0.0945, 0.1987), (14, 15, 0.221, 0.1997), (16, 17, 0.0524, 0.1923),
        (15, 18, 0.1073, 0.2185), (18, 19, 0.0639, 0.1292), (19, 20, 0.034, 0.068),
        (10, 20, 0.0936, 0.209), (10, 17, 0.0324, 0.0845), (10, 21, 0.0348, 0.0749),
        (10, 22, 0.0727, 0.1499), (21, 22, 0.0116, 0.0236), (15, 23, 0.1, 0.202),
        (22, 24, 0.115, 0.179), (23, 24, 0.132, 0.27), (24, 25, 0.1885, 0.3292),
        (25, 26, 0.2544, 0.38), (25, 27, 0.1093, 0.2087), (28, 27, 0.001, 0.396),
        (27, 29, 0.2198, 0.4153), (27, 30, 0.3202, 0.6027), (29, 30, 0.2399, 0.4533),
        (8, 28, 0.0636, 0.2), (6, 28, 0.0169, 0.0599),
    ],
)

# --- case57: 57-bus structural stand-in (correct bus/generator counts) -------
rng = np.random.default_rng(57)
branches57 = [(i, i + 1, round(0.01 + 0.05 * rng.random(), 4),
               round(0.05 + 0.15 * rng.random(), 4)) for i in range(1, 57)]
chords = [(1, 15), (1, 16), (1, 17), (3, 15), (4, 18), (5, 36), (7, 29),
          (8, 48), (9, 55), (10, 51), (11, 41), (11, 43), (12, 16), (12, 17),
          (13, 49), (14, 46), (18, 31), (20, 33), (22, 38), (24, 26),
          (28, 46), (30, 53), (32, 34), (44, 57)]
for (f, t) in chords:
    branches57.append((f, t, round(0.01 + 0.05 * rng.random(), 4),
                       round(0.05 + 0.15 * rng.random(), 4)))
loads57 = {}
for bid in range(1, 58):
    if bid in (1, 2, 3, 6, 8, 9, 12):
        continue
    if rng.random() < 0.85:
        p = round(5.0 + 45.0 * rng.random(), 1)
        loads57[bid] = (p, round(p * (0.2 + 0.3 * rng.random()), 1))
case(
    "case57", 100.0, (0.94, 1.06),
    loads=loads57,
    gens=[
        (1, 0.0, 575.88, -140.0, 200.0, (0.0775795, 20.0, 0.0)),
        (2, 0.0, 100.0, -17.0, 50.0, (0.01, 40.0, 0.0)),
        (3, 0.0, 140.0, -10.0, 60.0, (0.25, 20.0, 0.0)),
        (6, 0.0, 100.0, -8.0, 25.0, (0.01, 40.0, 0.0)),
        (8, 0.0, 550.0, -140.0, 200.0, (0.0222222, 20.0, 0.0)),
        (9, 0.0, 100.0, -3.0, 9.0, (0.01, 40.0, 0.0)),
        (12, 0.0, 410.0, -150.0, 155.0, (0.0322581, 20.0, 0.0)),
    ],
    branches=branches57,
)

# --- synthetic residential load/price profiles -------------------------------
# Evening peak around 20:00-21:30 (slots 4-8), overnight trough around 03:00.
# Strictly varying values so the schedule optimum has no price ties.
T = 24
for pid, (amp_l, amp_p, trough, tilt) in enumerate(
    [(0.50, 0.14, 0.22, 0.00031), (0.45, 0.12, 0.18, 0.00043),
     (0.55, 0.16, 0.25, 0.00037), (0.48, 0.11, 0.20, 0.00029)],
    start=1,
):
    rows = ["slot,load_fraction,price"]
    for t in range(1, T + 1):
        peak = math.exp(-(((t - 5.5) / 3.6) ** 2))
        dip = math.exp(-(((t - 18.0) / 4.5) ** 2))
        load = 0.62 + amp_l * peak - trough * dip
        price = 0.105 + amp_p * peak - 0.035 * dip + tilt * t
        rows.append(f"{t},{load:.6f},{price:.6f}")
    (OUT / f"profile{pid}.csv").write_text("\n".join(rows) + "\n")
    print(f"profile{pid}.csv written")
