"""Unit fixtures for the conic solve layer: analytic optima and embedding."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcharge.conic import (
    ConicError,
    ConicProgram,
    SolveOptions,
    hermitian_embed,
)

TOL = 1e-6


def rel_close(a, b, tol=TOL):
    return abs(a - b) <= tol * max(1.0, abs(b))


# ---------------------------------------------------------------------------
# analytic fixtures (criterion: >= 10 hand-built SDP/SOCP problems)
# ---------------------------------------------------------------------------


def test_min_trace_with_pinned_corner():
    # min Trace(W) s.t. W11 = 1, W >= 0 (2x2 Hermitian): optimum diag(1, 0).
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 2)
    prog.add_equality(W.diag(0), 1.0)
    prog.add_objective(W.trace())
    sol = prog.solve()
    assert sol.status == "optimal"
    assert rel_close(sol.objective, 1.0)
    assert np.allclose(sol.blocks["W"], np.diag([1.0, 0.0]), atol=1e-6)


def test_lp_corner_solution():
    # min 2a - b, a in [0, 1], b in [0, 1] -> a = 0, b = 1, objective -1.
    prog = ConicProgram()
    a = prog.add_scalar("a", 0.0, 1.0)
    b = prog.add_scalar("b", 0.0, 1.0)
    prog.add_objective(a.expr * 2.0 - b.expr)
    sol = prog.solve()
    assert sol.status == "optimal"
    assert rel_close(sol.objective, -1.0)
    assert abs(sol.scalars["a"]) < 1e-7 and abs(sol.scalars["b"] - 1.0) < 1e-7


def test_lp_with_equality_tie():
    # min a + 3b s.t. a + b = 2, a <= 1.5, b >= 0 -> a = 1.5, b = 0.5, obj 3.
    prog = ConicProgram()
    a = prog.add_scalar("a", ub=1.5)
    b = prog.add_scalar("b", lb=0.0)
    prog.add_equality(a.expr + b.expr, 2.0)
    prog.add_objective(a.expr + b.expr * 3.0)
    sol = prog.solve()
    assert rel_close(sol.objective, 3.0)
    assert abs(sol.scalars["a"] - 1.5) < 1e-6


def test_quadratic_epigraph_unconstrained_minimum():
    # min 2(x - 3)^2 expanded: 2x^2 - 12x + 18 -> x = 3, objective 0.
    # Objective accuracy is certified by the gap; the argmin on the flat
    # bottom is only accurate to its square root.
    prog = ConicProgram()
    x = prog.add_scalar("x")
    prog.add_quadratic_cost(x, 2.0)
    prog.add_objective(x.expr, -12.0)
    prog.add_objective_constant(18.0)
    sol = prog.solve()
    assert sol.status == "optimal"
    assert abs(sol.scalars["x"] - 3.0) < 5e-4
    assert abs(sol.objective) < 1e-6


def test_quadratic_epigraph_with_active_bound():
    # min x^2 with x >= 2 -> x = 2, objective 4.
    prog = ConicProgram()
    x = prog.add_scalar("x", lb=2.0)
    prog.add_quadratic_cost(x, 1.0)
    sol = prog.solve()
    assert rel_close(sol.objective, 4.0)
    assert abs(sol.scalars["x"] - 2.0) < 1e-6


def test_hyperbolic_epigraph_inverse():
    # min s + g s.t. s*g >= 1, g <= 4 -> s = 1/g; min g + 1/g at g = 1: obj 2.
    prog = ConicProgram()
    s = prog.add_scalar("s", lb=0.0)
    g = prog.add_scalar("g", lb=0.0, ub=4.0)
    prog.add_hyperbolic_lower_bound(s, g.expr)
    prog.add_objective(s.expr + g.expr)
    sol = prog.solve()
    assert rel_close(sol.objective, 2.0, 1e-5)
    assert abs(sol.scalars["g"] - 1.0) < 1e-4


def test_hyperbolic_epigraph_pinned_denominator():
    # min s s.t. s*g >= 1, g = 0.25 -> s = 4.
    prog = ConicProgram()
    s = prog.add_scalar("s", lb=0.0)
    g = prog.add_scalar("g")
    prog.add_equality(g.expr, 0.25)
    prog.add_hyperbolic_lower_bound(s, g.expr)
    prog.add_objective(s.expr)
    sol = prog.solve()
    assert rel_close(sol.objective, 4.0, 1e-5)


def test_complex_offdiagonal_sdp():
    # min W00 + W11 s.t. Im W01 = 0.5, W >= 0.
    # W = [[a, ic], [-ic, b]] with c = 0.5 needs ab >= 1/4: min a + b = 1.
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 2)
    prog.add_equality(W.im(0, 1), 0.5)
    prog.add_objective(W.trace())
    sol = prog.solve()
    assert rel_close(sol.objective, 1.0, 1e-5)
    Wv = sol.blocks["W"]
    assert abs(Wv[0, 1].imag - 0.5) < 1e-6
    assert np.linalg.eigvalsh(Wv).min() > -1e-7


def test_largest_eigenvalue_via_dual_sdp():
    # max <A, W> s.t. Trace W = 1, W >= 0 equals lambda_max(A).
    A = np.array([[2.0, 1.0 + 0.5j], [1.0 - 0.5j, -1.0]])
    lam = np.linalg.eigvalsh(A).max()
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 2)
    prog.add_equality(W.trace(), 1.0)
    # <A, W> = sum_ij conj(A_ij) W_ij is real for Hermitian A, W.
    obj = W.diag(0) * A[0, 0].real + W.diag(1) * A[1, 1].real
    obj += W.re(0, 1) * (2 * A[0, 1].real) + W.im(0, 1) * (2 * A[0, 1].imag)
    prog.add_objective(obj, -1.0)  # maximize via minimizing the negative
    sol = prog.solve()
    assert rel_close(-sol.objective, lam, 1e-6)


def test_quad_form_objective_matches_rayleigh():
    # min Trace W - w^H W w s.t. W00 = 1, W >= 0: any feasible W has value >= 0;
    # optimum 0 at W = diag(1,0) when w = e0.
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 2)
    w = np.array([1.0, 0.0])
    prog.add_equality(W.diag(0), 1.0)
    prog.add_objective(W.trace() - W.quad_form(w))
    sol = prog.solve()
    assert abs(sol.objective) < 1e-6


def test_psd_feasibility_box():
    # min -W01 (real part) s.t. diag = 1, W >= 0 (2x2 real sym):
    # correlation matrix, max off-diagonal is 1.
    prog = ConicProgram()
    W = prog.add_symmetric_block("W", 2)
    prog.add_equality(W.diag(0), 1.0)
    prog.add_equality(W.diag(1), 1.0)
    prog.add_objective(W.re(0, 1), -1.0)
    sol = prog.solve()
    assert rel_close(-sol.objective, 1.0, 1e-5)


def test_infeasible_program_certificate():
    prog = ConicProgram()
    x = prog.add_scalar("x", lb=0.0, ub=1.0)
    prog.add_equality(x.expr, 2.0)
    prog.add_objective(x.expr)
    sol = prog.solve()
    assert sol.status == "infeasible"
    assert sol.objective is None


def test_unbounded_program_certificate():
    prog = ConicProgram()
    x = prog.add_scalar("x")
    prog.add_objective(x.expr)
    sol = prog.solve()
    assert sol.status == "unbounded"


def test_weak_duality_at_solution():
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 3)
    for i in range(3):
        prog.add_equality(W.diag(i), 1.0 + 0.5 * i)
    prog.add_objective(W.re(0, 1) + W.im(1, 2) * 0.3 + W.trace())
    sol = prog.solve()
    assert sol.status == "optimal"
    assert sol.duality_gap is not None and sol.duality_gap < 1e-6


def test_solver_determinism():
    def run():
        prog = ConicProgram()
        W = prog.add_hermitian_block("W", 3)
        x = prog.add_scalar("x", 0.0, 2.0)
        prog.add_equality(W.diag(0) + x.expr, 1.5)
        prog.add_equality(W.re(0, 2), 0.2)
        prog.add_objective(W.trace() + x.expr * 0.7)
        return prog.solve()

    a, b = run(), run()
    assert a.iterations == b.iterations
    assert abs(a.objective - b.objective) <= 1e-12 * max(1.0, abs(b.objective))


# ---------------------------------------------------------------------------
# Hermitian embedding
# ---------------------------------------------------------------------------


def test_embed_identity():
    assert np.array_equal(hermitian_embed(np.eye(2)), np.eye(4))


def test_embed_hand_eigenvalues():
    # [[1, i], [-i, 1]] has eigenvalues {0, 2}; embedding doubles them.
    H = np.array([[1.0, 1j], [-1j, 1.0]])
    E = hermitian_embed(H)
    eig = np.sort(np.linalg.eigvalsh(E))
    assert np.allclose(eig, [0.0, 0.0, 2.0, 2.0], atol=1e-12)


def test_embed_rejects_non_hermitian():
    with pytest.raises(ConicError):
        hermitian_embed(np.array([[0.0, 1.0], [0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
def test_embed_spectrum_doubling(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = A @ A.conj().T          # Hermitian PSD
    E = hermitian_embed(H)
    eH = np.sort(np.linalg.eigvalsh(H))
    eE = np.sort(np.linalg.eigvalsh(E))
    assert np.allclose(eE, np.repeat(eH, 2), atol=1e-8 * max(1.0, eH.max()))
    assert eE.min() > -1e-10 * max(1.0, eH.max())


def test_block_solution_is_psd_and_hermitian():
    prog = ConicProgram()
    W = prog.add_hermitian_block("W", 4)
    prog.add_equality(W.trace(), 4.0)
    prog.add_equality(W.re(0, 3), 0.4)
    prog.add_equality(W.im(1, 2), -0.3)
    prog.add_objective(W.diag(0) - W.re(1, 3))
    sol = prog.solve()
    Wv = sol.blocks["W"]
    assert np.abs(Wv - Wv.conj().T).max() < 1e-12
    assert np.linalg.eigvalsh(Wv).min() > -1e-7


def test_dump_program_lists_structure():
    from gridcharge.conic import dump_program

    prog = ConicProgram()
    x = prog.add_scalar("rate", 0.0, 1.0)
    W = prog.add_hermitian_block("W", 2)
    prog.add_equality(W.diag(0) + x.expr * 2.0, 1.0)
    prog.add_inequality(W.im(0, 1), 0.5)
    prog.add_objective(W.trace())
    text = dump_program(prog)
    assert "x[rate] in [0, 1]" in text
    assert "W hermitian 2x2 >= 0" in text
    assert "eq 1" in text and "ineq 1" in text
    assert "+2*x[rate]" in text
    assert "W.im[0,1]" in text
