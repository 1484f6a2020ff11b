"""Conic programs over Hermitian PSD blocks and bounded real variables.

A ConicProgram holds Hermitian matrix blocks constrained to the PSD cone,
scalar variables with box bounds, real/complex affine equality rows,
affine inequality rows, and a linear objective with optional convex
quadratic terms.  Complex rows are split into real and imaginary parts,
and each Hermitian block enters the solver through its real symmetric
embedding [[Re, -Im], [Im, Re]].  The search itself is delegated to the
Clarabel primal-dual path-following interior-point solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

_SQRT2 = math.sqrt(2.0)


class ConicError(Exception):
    """Raised for ill-formed programs or invalid solver inputs."""


# ---------------------------------------------------------------------------
# affine expressions
#
# Parameter keys:
#   ("x", i)        scalar variable i
#   ("d", b, i)     diagonal entry i of block b (real)
#   ("r", b, i, j)  real part of off-diagonal (i, j), i < j
#   ("m", b, i, j)  imaginary part of off-diagonal (i, j), i < j
# ---------------------------------------------------------------------------


class LinExpr:
    """Real affine expression: sum of coeff * param plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms: dict = dict(terms) if terms else {}
        self.const = float(const)

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, key, coeff: float) -> None:
        if coeff == 0.0:
            return
        c = self.terms.get(key, 0.0) + coeff
        if c == 0.0:
            self.terms.pop(key, None)
        else:
            self.terms[key] = c

    def __add__(self, other):
        out = self.copy()
        out += other
        return out

    def __iadd__(self, other):
        if isinstance(other, LinExpr):
            for k, c in other.terms.items():
                self.add_term(k, c)
            self.const += other.const
        elif isinstance(other, (int, float)):
            self.const += float(other)
        else:
            return NotImplemented
        return self

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, LinExpr) else -other)

    def __rsub__(self, other):
        return (self * -1.0) + other

    __radd__ = __add__

    def __mul__(self, a: float):
        a = float(a)
        return LinExpr({k: c * a for k, c in self.terms.items()}, self.const * a)

    __rmul__ = __mul__

    def value(self, lookup) -> float:
        return self.const + sum(c * lookup[k] for k, c in self.terms.items())


class ComplexExpr:
    """Complex affine expression held as a (real, imag) pair of LinExpr."""

    __slots__ = ("re", "im")

    def __init__(self, re: LinExpr | None = None, im: LinExpr | None = None):
        self.re = re if re is not None else LinExpr()
        self.im = im if im is not None else LinExpr()

    def __add__(self, other):
        out = ComplexExpr(self.re.copy(), self.im.copy())
        out += other
        return out

    def __iadd__(self, other):
        if isinstance(other, ComplexExpr):
            self.re += other.re
            self.im += other.im
        elif isinstance(other, LinExpr):
            self.re += other
        elif isinstance(other, complex):
            self.re += other.real
            self.im += other.imag
        elif isinstance(other, (int, float)):
            self.re += float(other)
        else:
            return NotImplemented
        return self

    def __sub__(self, other):
        return self + (other * (-1.0))

    def __mul__(self, a):
        if isinstance(a, (int, float)):
            return ComplexExpr(self.re * a, self.im * a)
        if isinstance(a, complex):
            # (re + i im)(ar + i ai)
            return ComplexExpr(
                self.re * a.real - self.im * a.imag,
                self.re * a.imag + self.im * a.real,
            )
        return NotImplemented

    __rmul__ = __mul__


@dataclass(frozen=True)
class ScalarRef:
    name: str
    key: tuple

    @property
    def expr(self) -> LinExpr:
        return LinExpr({self.key: 1.0})


class BlockRef:
    """Handle to a Hermitian (or real symmetric) PSD matrix block."""

    def __init__(self, name: str, index: int, dim: int, hermitian: bool):
        self.name = name
        self.index = index
        self.dim = dim
        self.hermitian = hermitian

    def diag(self, i: int) -> LinExpr:
        return LinExpr({("d", self.index, i): 1.0})

    def re(self, i: int, j: int) -> LinExpr:
        if i == j:
            return self.diag(i)
        a, b = (i, j) if i < j else (j, i)
        return LinExpr({("r", self.index, a, b): 1.0})

    def im(self, i: int, j: int) -> LinExpr:
        if i == j:
            return LinExpr()
        if not self.hermitian:
            return LinExpr()
        sign = 1.0 if i < j else -1.0
        a, b = (i, j) if i < j else (j, i)
        return LinExpr({("m", self.index, a, b): sign})

    def entry(self, i: int, j: int) -> ComplexExpr:
        """W[i, j] as a complex affine expression (W[j, i] is its conjugate)."""
        return ComplexExpr(self.re(i, j), self.im(i, j))

    def trace(self) -> LinExpr:
        expr = LinExpr()
        for i in range(self.dim):
            expr += self.diag(i)
        return expr

    def quad_form(self, w: np.ndarray) -> LinExpr:
        """w^H W w as a real linear expression in the block parameters."""
        w = np.asarray(w, dtype=complex)
        if w.shape != (self.dim,):
            raise ConicError(f"eigenvector length {w.shape} != block dim {self.dim}")
        expr = LinExpr()
        for i in range(self.dim):
            expr.add_term(("d", self.index, i), float(abs(w[i]) ** 2))
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                a = np.conj(w[i]) * w[j]
                expr.add_term(("r", self.index, i, j), 2.0 * float(a.real))
                if self.hermitian:
                    expr.add_term(("m", self.index, i, j), -2.0 * float(a.imag))
        return expr


# ---------------------------------------------------------------------------
# program container and solution
# ---------------------------------------------------------------------------


@dataclass
class SolveOptions:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    verbose: bool = False


@dataclass
class ConicSolution:
    status: str                      # optimal | infeasible | unbounded | max_iter
    objective: float | None
    scalars: dict
    blocks: dict                     # name -> Hermitian ndarray
    duality_gap: float | None
    residual: float | None
    iterations: int
    raw_status: str = ""
    _params: dict = field(default_factory=dict, repr=False)

    def scalar(self, ref: ScalarRef) -> float:
        return self.scalars[ref.name]

    def expr_value(self, expr: LinExpr) -> float:
        return expr.value(self._params)


class ConicProgram:
    """Builder for one conic program; single-use (build, solve, discard)."""

    def __init__(self):
        self._scalars: list[tuple[str, float, float]] = []
        self._scalar_index: dict[str, int] = {}
        self._blocks: list[BlockRef] = []
        self._block_names: set[str] = set()
        self._eq: list[tuple[LinExpr, float]] = []
        self._ineq: list[tuple[LinExpr, float]] = []
        self._obj = LinExpr()
        self._quad_count = 0

    # -- variables ----------------------------------------------------------

    def add_scalar(self, name: str, lb: float = -np.inf, ub: float = np.inf) -> ScalarRef:
        if name in self._scalar_index:
            raise ConicError(f"duplicate scalar variable {name!r}")
        if lb > ub:
            raise ConicError(f"scalar {name!r}: lower bound {lb} > upper bound {ub}")
        self._scalar_index[name] = len(self._scalars)
        self._scalars.append((name, float(lb), float(ub)))
        return ScalarRef(name, ("x", len(self._scalars) - 1))

    def _add_block(self, name: str, dim: int, hermitian: bool) -> BlockRef:
        if name in self._block_names:
            raise ConicError(f"duplicate block {name!r}")
        if dim < 1:
            raise ConicError(f"block {name!r}: dimension must be >= 1")
        self._block_names.add(name)
        ref = BlockRef(name, len(self._blocks), dim, hermitian)
        self._blocks.append(ref)
        return ref

    def add_hermitian_block(self, name: str, dim: int) -> BlockRef:
        return self._add_block(name, dim, hermitian=True)

    def add_symmetric_block(self, name: str, dim: int) -> BlockRef:
        return self._add_block(name, dim, hermitian=False)

    # -- constraints and objective -------------------------------------------

    def add_equality(self, expr: LinExpr, rhs: float = 0.0) -> None:
        self._eq.append((expr, float(rhs)))

    def add_complex_equality(self, expr: ComplexExpr, rhs: complex = 0j) -> None:
        rhs = complex(rhs)
        self._eq.append((expr.re, rhs.real))
        self._eq.append((expr.im, rhs.imag))

    def add_inequality(self, expr: LinExpr, ub: float = 0.0) -> None:
        """Constrain expr <= ub."""
        self._ineq.append((expr, float(ub)))

    def add_objective(self, expr: LinExpr, coeff: float = 1.0) -> None:
        self._obj += expr * coeff

    def add_objective_constant(self, c: float) -> None:
        self._obj += float(c)

    def add_quadratic_cost(self, ref: ScalarRef, coeff: float,
                           obj_scale: float = 1.0) -> None:
        """Add obj_scale * coeff * ref**2 to the objective via a PSD epigraph.

        Uses the balanced rotated form [[a, w], [w, s]] with s = sqrt(coeff)
        and w = sqrt(coeff) * ref, so a * s >= w^2 gives a >= sqrt(coeff)*ref^2
        and the block entries stay within a few orders of each other.
        """
        if coeff < 0:
            raise ConicError(f"quadratic cost coefficient must be >= 0, got {coeff}")
        if coeff == 0.0:
            return
        s = math.sqrt(coeff)
        blk = self.add_symmetric_block(f"_quad{self._quad_count}", 2)
        self._quad_count += 1
        self.add_equality(blk.re(0, 1) - ref.expr * s, 0.0)
        self.add_equality(blk.diag(1), s)
        self._obj += blk.diag(0) * (s * obj_scale)

    def add_hyperbolic_lower_bound(self, s: ScalarRef, g: LinExpr) -> None:
        """Enforce s * g >= 1 with s, g >= 0 (epigraph of 1/g).

        Encoded as the 2x2 PSD block [[s, 1], [1, g]].
        """
        blk = self.add_symmetric_block(f"_hyp{self._quad_count}", 2)
        self._quad_count += 1
        self.add_equality(blk.diag(0) - s.expr, 0.0)
        self.add_equality(blk.re(0, 1), 1.0)
        self.add_equality(blk.diag(1) - g, 0.0)

    # -- compilation ----------------------------------------------------------

    def _param_layout(self):
        """Assign a flat index to every parameter; return (count, key->index)."""
        index: dict = {}
        pos = 0
        for i in range(len(self._scalars)):
            index[("x", i)] = pos
            pos += 1
        for blk in self._blocks:
            n = blk.dim
            for i in range(n):
                index[("d", blk.index, i)] = pos
                pos += 1
            for i in range(n):
                for j in range(i + 1, n):
                    index[("r", blk.index, i, j)] = pos
                    pos += 1
            if blk.hermitian:
                for i in range(n):
                    for j in range(i + 1, n):
                        index[("m", blk.index, i, j)] = pos
                        pos += 1
        return pos, index

    @staticmethod
    def _embed_triplets(blk: BlockRef):
        """Yield (row, key, coeff) for svec of the block's PSD-cone matrix.

        Hermitian blocks go through the real embedding [[R, -I], [I, R]] of
        dimension 2n; real symmetric blocks map directly.  Rows follow the
        scaled upper-triangle column-major convention (off-diagonal * sqrt2).
        """
        n = blk.dim
        b = blk.index
        if not blk.hermitian:
            row = 0
            for c in range(n):
                for r in range(c + 1):
                    scale = 1.0 if r == c else _SQRT2
                    key = ("d", b, r) if r == c else ("r", b, r, c)
                    yield row, key, scale
                    row += 1
            return
        d = 2 * n
        row = 0
        for c in range(d):
            for r in range(c + 1):
                scale = 1.0 if r == c else _SQRT2
                if c < n:                       # upper-left: Re
                    if r == c:
                        yield row, ("d", b, r), scale
                    else:
                        yield row, ("r", b, r, c), scale
                elif r < n:                     # upper-right: -Im
                    c2 = c - n
                    if r < c2:
                        yield row, ("m", b, r, c2), -scale
                    elif r > c2:
                        yield row, ("m", b, c2, r), scale
                    # r == c2: -Im[r, r] = 0
                else:                           # lower-right: Re
                    r2, c2 = r - n, c - n
                    if r2 == c2:
                        yield row, ("d", b, r2), scale
                    else:
                        yield row, ("r", b, r2, c2), scale
                row += 1

    def solve(self, opts: SolveOptions | None = None) -> ConicSolution:
        opts = opts or SolveOptions()
        nparams, pindex = self._param_layout()
        if nparams == 0:
            raise ConicError("program has no variables")

        rows_i, cols_i, vals = [], [], []
        b_vec = []
        cones = []
        row = 0

        def push(expr: LinExpr, rhs: float):
            nonlocal row
            for key, c in expr.terms.items():
                rows_i.append(row)
                cols_i.append(pindex[key])
                vals.append(c)
            b_vec.append(rhs - expr.const)
            row += 1

        for expr, rhs in self._eq:
            push(expr, rhs)
        if self._eq:
            cones.append(clarabel.ZeroConeT(len(self._eq)))

        n_ineq = 0
        for expr, ub in self._ineq:
            push(expr, ub)
            n_ineq += 1
        for i, (name, lb, ub) in enumerate(self._scalars):
            e = LinExpr({("x", i): 1.0})
            if np.isfinite(ub):
                push(e, ub)
                n_ineq += 1
            if np.isfinite(lb):
                push(e * -1.0, -lb)
                n_ineq += 1
        if n_ineq:
            cones.append(clarabel.NonnegativeConeT(n_ineq))

        for blk in self._blocks:
            start = row
            for r, key, coeff in self._embed_triplets(blk):
                rows_i.append(start + r)
                cols_i.append(pindex[key])
                vals.append(-coeff)
            d = 2 * blk.dim if blk.hermitian else blk.dim
            nrows = d * (d + 1) // 2
            b_vec.extend([0.0] * nrows)
            row = start + nrows
            cones.append(clarabel.PSDTriangleConeT(d))

        A = sparse.csc_matrix(
            (vals, (rows_i, cols_i)), shape=(row, nparams), dtype=float
        )
        b = np.asarray(b_vec, dtype=float)
        q = np.zeros(nparams)
        for key, c in self._obj.terms.items():
            q[pindex[key]] += c
        P = sparse.csc_matrix((nparams, nparams))

        settings = clarabel.DefaultSettings()
        settings.verbose = opts.verbose
        settings.tol_gap_abs = opts.tol_gap
        settings.tol_gap_rel = opts.tol_gap
        settings.tol_feas = opts.tol_feas
        settings.max_iter = opts.max_iter
        settings.max_threads = 1            # reproducible runs

        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        raw = solver.solve()
        status = _map_status(str(raw.status))

        if status in ("infeasible", "unbounded"):
            return ConicSolution(
                status=status, objective=None, scalars={}, blocks={},
                duality_gap=None, residual=None,
                iterations=raw.iterations, raw_status=str(raw.status),
            )

        x = np.asarray(raw.x)
        params = {key: x[i] for key, i in pindex.items()}
        scalars = {name: params[("x", i)] for i, (name, _, _) in enumerate(self._scalars)}
        blocks = {}
        for blk in self._blocks:
            n = blk.dim
            W = np.zeros((n, n), dtype=complex if blk.hermitian else float)
            for i in range(n):
                W[i, i] = params[("d", blk.index, i)]
            for i in range(n):
                for j in range(i + 1, n):
                    v = params[("r", blk.index, i, j)]
                    if blk.hermitian:
                        v = v + 1j * params[("m", blk.index, i, j)]
                    W[i, j] = v
                    W[j, i] = np.conj(v)
            blocks[blk.name] = W

        obj = float(raw.obj_val) + self._obj.const
        gap = abs(float(raw.obj_val) - float(raw.obj_val_dual))
        return ConicSolution(
            status=status,
            objective=obj,
            scalars=scalars,
            blocks=blocks,
            duality_gap=gap,
            residual=max(float(raw.r_prim), float(raw.r_dual)),
            iterations=raw.iterations,
            raw_status=str(raw.status),
            _params=params,
        )


def _map_status(raw: str) -> str:
    if raw in ("Solved", "AlmostSolved"):
        return "optimal"
    if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return "infeasible"
    if raw in ("DualInfeasible", "AlmostDualInfeasible"):
        return "unbounded"
    return "max_iter"


def dump_program(prog: ConicProgram) -> str:
    """Human-readable listing for cross-checking against external solvers.

    Format: one header line per section (`vars`, `blocks`, `min`, `eq`,
    `ineq`), then one line per item.  Parameters print as `x[name]`,
    `B.d[i]`, `B.re[i,j]`, `B.im[i,j]`; rows print as coefficient*param
    sums with the bound on the right.
    """

    def param(key):
        if key[0] == "x":
            return f"x[{prog._scalars[key[1]][0]}]"
        blk = prog._blocks[key[1]]
        if key[0] == "d":
            return f"{blk.name}.d[{key[2]}]"
        part = "re" if key[0] == "r" else "im"
        return f"{blk.name}.{part}[{key[2]},{key[3]}]"

    def render(expr: LinExpr):
        terms = [f"{c:+.12g}*{param(k)}" for k, c in sorted(expr.terms.items())]
        if expr.const:
            terms.append(f"{expr.const:+.12g}")
        return " ".join(terms) if terms else "0"

    lines = [f"vars {len(prog._scalars)}"]
    for name, lb, ub in prog._scalars:
        lines.append(f"  x[{name}] in [{lb:.12g}, {ub:.12g}]")
    lines.append(f"blocks {len(prog._blocks)}")
    for blk in prog._blocks:
        kind = "hermitian" if blk.hermitian else "symmetric"
        lines.append(f"  {blk.name} {kind} {blk.dim}x{blk.dim} >= 0")
    lines.append(f"min {render(prog._obj)}")
    lines.append(f"eq {len(prog._eq)}")
    for expr, rhs in prog._eq:
        lines.append(f"  {render(expr)} == {rhs:.12g}")
    lines.append(f"ineq {len(prog._ineq)}")
    for expr, ub in prog._ineq:
        lines.append(f"  {render(expr)} <= {ub:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Hermitian embedding
# ---------------------------------------------------------------------------


def hermitian_embed(H: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Real symmetric embedding [[Re H, -Im H], [Im H, Re H]] of a Hermitian H.

    The embedding is PSD iff H is, and carries H's eigenvalues with doubled
    multiplicity.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConicError(f"expected a square matrix, got shape {H.shape}")
    scale = max(1.0, float(np.abs(H).max()) if H.size else 1.0)
    if np.abs(H - H.conj().T).max() > tol * scale:
        raise ConicError("matrix is not Hermitian within tolerance")
    R, I = H.real.astype(float), H.imag.astype(float)
    return np.block([[R, -I], [I, R]])
