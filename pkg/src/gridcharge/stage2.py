"""Stage 2: recover rank-one voltage blocks for a fixed binary schedule.

With the charging decisions substituted into the balance rows, the
remaining obstruction is rank(W) = 1.  Trace(W) - lambda_max(W) is zero
exactly on rank-one PSD matrices; each pass replaces lambda_max by the
Rayleigh quotient along the previous top eigenvector (a linear minorant)
and re-solves, which never increases the true penalized objective.  On
termination one extra solve at a much larger internal weight pins the
trailing eigenvalues to the solver floor before the voltage is read off
as sqrt(lambda_max) times the top eigenvector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import SolveOptions
from .relaxation import HorizonProblem, build_sdr, generation_values


class Stage2Error(Exception):
    pass


# interior-point solutions satisfy the cone only up to feasibility tolerance
PSD_SLACK = 1e-5


@dataclass
class Stage2Options:
    mu2: float = 10.0
    epsilon: float = 1e-4
    max_iter: int = 30
    polish_mu: float = 1000.0      # internal weight for the extraction pass
    solve: SolveOptions = field(default_factory=SolveOptions)


@dataclass
class Stage2Result:
    status: str                    # ok | infeasible | stalled
    voltages: dict                 # slot -> complex ndarray, bus-1 phase zeroed
    pg: dict                       # (bus, slot) -> per-unit
    qg: dict
    blocks: dict                   # slot -> W ndarray
    residuals: dict                # slot -> (absolute, relative) rank residual
    generation_cost: float | None  # $ over the horizon
    total_cost: float | None       # generation + fixed charging cost
    trace: list
    iterations: int
    message: str = ""


def write_trace_csv(trace: list, fh) -> None:
    """Emit iteration rows: `kappa,generation_cost,penalized,residual`."""
    fh.write("kappa,generation_cost,penalized,surrogate,worst_residual\n")
    for row in trace:
        fh.write(f"{row['kappa']},{row['generation_cost']:.10g},"
                 f"{row['penalized']:.10g},{row.get('surrogate', 0.0):.10g},"
                 f"{row['worst_residual']:.10g}\n")


def rank_residual(W: np.ndarray, tol: float = 1e-8) -> float:
    """Trace(W) - lambda_max(W); zero iff rank(W) <= 1 for PSD W."""
    W = np.asarray(W)
    eig = np.linalg.eigvalsh(W)
    scale = max(1.0, float(eig[-1]))
    if eig[0] < -tol * scale:
        raise Stage2Error(f"matrix is not PSD: min eigenvalue {eig[0]:.3e}")
    return float(np.real(np.trace(W)) - eig[-1])


def _top_eigvec(W: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(W)
    if W.shape[0] > 1 and eigval[-1] - eigval[-2] < 1e-10 * max(1.0, eigval[-1]):
        # degenerate top eigenvalue: linearization direction not unique
        import logging
        logging.getLogger(__name__).warning(
            "near-degenerate top eigenvalue (gap %.2e); penalty direction "
            "follows eigensolver ordering", eigval[-1] - eigval[-2])
    return eigvec[:, -1]


def extract_voltage(W: np.ndarray) -> np.ndarray:
    """sqrt(lambda_max) * top eigenvector, rotated so bus 1 has zero phase."""
    eigval, eigvec = np.linalg.eigh(W)
    V = np.sqrt(max(eigval[-1], 0.0)) * eigvec[:, -1]
    if abs(V[0]) > 0:
        V = V * np.exp(-1j * np.angle(V[0]))
    return V


def stage2_solve(hp: HorizonProblem, fixed_tau: dict,
                 penalized_slots: list | None = None,
                 opts: Stage2Options | None = None) -> Stage2Result:
    """Fixed-schedule dispatch with rank-one recovery at the penalized slots.

    Dynamic steps penalize only the slot being applied; the static mode
    passes every horizon slot.
    """
    opts = opts or Stage2Options()
    slots = list(penalized_slots) if penalized_slots is not None else [hp.start]
    for s in slots:
        if not hp.start <= s <= hp.end:
            raise Stage2Error(f"penalized slot {s} outside horizon")

    sdr = build_sdr(hp, fixed_tau=fixed_tau)
    sol = sdr.prog.solve(opts.solve)
    if sol.status in ("infeasible", "unbounded"):
        return Stage2Result(
            status="infeasible", voltages={}, pg={}, qg={}, blocks={},
            residuals={}, generation_cost=None, total_cost=None, trace=[],
            iterations=0, message=f"fixed-schedule program {sol.status}")

    builder, solution = sdr, sol
    blocks = {t: sol.blocks[f"W{t}"] for t in hp.slots}
    trace = []
    kappa = 0

    def residual_state():
        out = {}
        for t in slots:
            W = blocks[t]
            tr = float(np.real(np.trace(W)))
            r = rank_residual(W, tol=PSD_SLACK)
            out[t] = (r, r / tr if tr > 0 else 0.0)
        return out

    def surrogate_penalty(w_dirs, weight):
        return weight * sum(
            float(np.real(np.trace(blocks[t])))
            - float(np.real(w_dirs[t].conj() @ blocks[t] @ w_dirs[t]))
            for t in slots)

    gen_cost = sdr.objective_dollars(sol) - sdr.charging_base
    residuals = residual_state()
    trace.append({
        "kappa": 0, "generation_cost": gen_cost,
        "penalized": gen_cost + opts.mu2 * sum(r for r, _ in residuals.values()),
        "worst_residual": max(r for r, _ in residuals.values()),
    })

    # iterate only while some penalized slot is not yet rank-one
    pending = any(r > opts.epsilon for r, _ in residuals.values())
    stalled = False
    while pending and kappa < opts.max_iter:
        w_dirs = {t: _top_eigvec(blocks[t]) for t in slots}
        it = build_sdr(hp, fixed_tau=fixed_tau)
        for t in slots:
            Wref = it.w[t]
            it.prog.add_objective(
                Wref.trace() - Wref.quad_form(w_dirs[t]), opts.mu2 * it.obj_scale)
        sol = it.prog.solve(opts.solve)
        if sol.status in ("infeasible", "unbounded"):
            return Stage2Result(
                status="infeasible", voltages={}, pg={}, qg={}, blocks=blocks,
                residuals=residuals, generation_cost=None, total_cost=None,
                trace=trace, iterations=kappa,
                message=f"penalized pass {kappa} {sol.status}")
        builder, solution = it, sol
        blocks = {t: sol.blocks[f"W{t}"] for t in hp.slots}
        kappa += 1
        penalty_dollars = surrogate_penalty(w_dirs, opts.mu2)
        gen_cost = it.objective_dollars(sol) - it.charging_base - penalty_dollars
        residuals = residual_state()
        surrogate = penalty_dollars / opts.mu2
        trace.append({
            "kappa": kappa, "generation_cost": gen_cost,
            "penalized": gen_cost + opts.mu2 * sum(r for r, _ in residuals.values()),
            "surrogate": surrogate,
            "worst_residual": max(r for r, _ in residuals.values()),
        })
        pending = surrogate > opts.epsilon
    if pending:
        stalled = True

    # extraction polish: same minorant, heavy internal weight, one solve;
    # unnecessary when the blocks are already rank-one to extraction grade
    worst_rel = max(rel for _, rel in residuals.values())
    if opts.polish_mu > opts.mu2 and worst_rel > 1e-7:
        w_dirs = {t: _top_eigvec(blocks[t]) for t in slots}
        it = build_sdr(hp, fixed_tau=fixed_tau)
        for t in slots:
            Wref = it.w[t]
            it.prog.add_objective(
                Wref.trace() - Wref.quad_form(w_dirs[t]),
                opts.polish_mu * it.obj_scale)
        psol = it.prog.solve(opts.solve)
        if psol.status == "optimal":
            new_blocks = {t: psol.blocks[f"W{t}"] for t in hp.slots}
            worst_old = max(rank_residual(blocks[t], tol=PSD_SLACK) for t in slots)
            worst_new = max(rank_residual(new_blocks[t], tol=PSD_SLACK) for t in slots)
            if worst_new <= worst_old:
                builder, solution = it, psol
                blocks = new_blocks
                penalty_dollars = surrogate_penalty(w_dirs, opts.polish_mu)
                gen_cost = it.objective_dollars(psol) - it.charging_base \
                    - penalty_dollars
                residuals = residual_state()

    pg, qg = generation_values(builder, solution)
    voltages = {t: extract_voltage(blocks[t]) for t in slots}
    total = gen_cost + sdr.charging_base
    return Stage2Result(
        status="stalled" if stalled else "ok",
        voltages=voltages, pg=pg, qg=qg, blocks=blocks, residuals=residuals,
        generation_cost=gen_cost, total_cost=total, trace=trace,
        iterations=kappa,
        message="rank residual stalled above epsilon" if stalled else "")
