"""Small linear-program model and solvers.

Two backends sit behind :func:`solve`:

* ``"tableau"`` - a dense two-phase tableau simplex using Bland's rule.
  No dependencies beyond numpy, deterministic, fine for a few hundred
  variables.
* ``"highs"`` - scipy's HiGHS dual simplex, used by the engines when the
  same LP has to be re-solved thousands of times per run.

Both return an :class:`LpSolution` that has been checked against the
model's constraints and bounds.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-7
BOUND_TOL = 1e-9
_PIVOT_TOL = 1e-9


class LpFormatError(ValueError):
    """Raised for a malformed linear program (shape or bound mismatch)."""


class LpSolverError(RuntimeError):
    """Raised when a backend fails for reasons other than infeasibility/unboundedness."""


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``minimize c @ x`` subject to ``A[i] @ x (relations[i]) b[i]`` and ``lower <= x <= upper``.

    ``A`` may be a dense array or a scipy sparse matrix. Missing bounds
    default to ``x >= 0``.
    """

    c: np.ndarray
    A: np.ndarray | sp.spmatrix
    relations: tuple[Relation, ...]
    b: np.ndarray
    lower: np.ndarray = field(default=None)  # type: ignore[assignment]
    upper: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1:
            raise LpFormatError(f"objective must be a vector, got shape {c.shape}")
        n = c.shape[0]
        if sp.issparse(self.A):
            A = sp.csr_matrix(self.A, dtype=float)
        else:
            A = np.asarray(self.A, dtype=float)
            if A.size == 0:
                A = A.reshape(0, n)
        if A.ndim != 2:
            raise LpFormatError(f"constraint matrix must be 2-D, got {A.ndim}-D")
        m = A.shape[0]
        if A.shape[1] != n:
            raise LpFormatError(
                f"constraint rows have {A.shape[1]} coefficients, expected {n} (one per variable)"
            )
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape[0] != m:
            raise LpFormatError(f"{m} constraint rows but {b.shape[0]} right-hand sides")
        try:
            rel = tuple(Relation(r) for r in self.relations)
        except ValueError as exc:
            raise LpFormatError(str(exc)) from None
        if len(rel) != m:
            raise LpFormatError(f"{m} constraint rows but {len(rel)} relations")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape[0] != n or upper.shape[0] != n:
            raise LpFormatError("bound vectors must have one entry per variable")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise LpFormatError("bounds must not be NaN")
        bad = np.flatnonzero(lower > upper)
        if bad.size:
            raise LpFormatError(f"lower > upper for variable(s) {bad.tolist()}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
            raise LpFormatError("objective and right-hand sides must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "relations", rel)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.b.shape[0]

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else self.A

    def violation(self, x: np.ndarray) -> tuple[float, float]:
        """Worst constraint violation and worst bound violation at ``x``."""
        ax = self.A @ x
        worst = 0.0
        for rel, lhs, rhs in zip(self.relations, ax, self.b):
            if rel is Relation.LE:
                v = lhs - rhs
            elif rel is Relation.GE:
                v = rhs - lhs
            else:
                v = abs(lhs - rhs)
            worst = max(worst, v)
        bound = max(0.0, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst, bound


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    objective: float
    x: np.ndarray

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LpSolution):
            return NotImplemented
        return (
            self.status is other.status
            and (self.objective == other.objective or (np.isnan(self.objective) and np.isnan(other.objective)))
            and self.x.shape == other.x.shape
            and bool(np.array_equal(self.x, other.x))
        )


def solve(lp: LinearProgram, method: str = "tableau") -> LpSolution:
    """Solve ``lp``; ``method`` is ``"tableau"`` or ``"highs"``."""
    if not isinstance(lp, LinearProgram):
        raise LpFormatError(f"expected LinearProgram, got {type(lp).__name__}")
    if method == "tableau":
        sol = _solve_tableau(lp)
    elif method == "highs":
        sol = _solve_highs(lp)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if sol.optimal:
        # clip sub-tolerance bound noise so the returned point is inside the box
        x = np.minimum(np.maximum(sol.x, lp.lower), lp.upper)
        cons, _ = lp.violation(x)
        if cons > FEAS_TOL * max(1.0, float(np.max(np.abs(lp.b), initial=0.0))):
            raise LpSolverError(f"{method} returned a point violating constraints by {cons:.3g}")
        sol = LpSolution(LpStatus.OPTIMAL, float(lp.c @ x), x)
    return sol


# ---------------------------------------------------------------------------
# HiGHS backend
# ---------------------------------------------------------------------------


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    A = sp.csr_matrix(lp.A) if sp.issparse(lp.A) else lp.A
    rel = np.array([r.value for r in lp.relations])
    le, ge, eq = rel == "<=", rel == ">=", rel == "=="
    ub_rows = [A[le], -A[ge]]
    if sp.issparse(A):
        A_ub = sp.vstack(ub_rows, format="csr")
    else:
        A_ub = np.vstack(ub_rows)
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]])
    A_eq, b_eq = A[eq], lp.b[eq]
    kwargs = {}
    if A_ub.shape[0]:
        kwargs.update(A_ub=A_ub, b_ub=b_ub)
    if A_eq.shape[0]:
        kwargs.update(A_eq=A_eq, b_eq=b_eq)
    bounds = np.column_stack([lp.lower, lp.upper])
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi) for lo, hi in bounds]
    res = linprog(lp.c, bounds=bounds, method="highs-ds", **kwargs)
    if res.status == 0:
        return LpSolution(LpStatus.OPTIMAL, float(res.fun), np.asarray(res.x, dtype=float))
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, float("nan"), np.full(lp.n_vars, np.nan))
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, float("-inf"), np.full(lp.n_vars, np.nan))
    raise LpSolverError(f"HiGHS failed: {res.message}")


# ---------------------------------------------------------------------------
# Dense tableau simplex
# ---------------------------------------------------------------------------


def _standard_form(lp: LinearProgram):
    """Rewrite as ``min c'y, A'y rel b', y >= 0``; returns the map ``x = x0 + M y``."""
    n = lp.n_vars
    cols: list[np.ndarray] = []
    x0 = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []  # (standard column, upper limit)
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        e = np.zeros(n)
        if np.isfinite(lo):
            x0[j] = lo
            e[j] = 1.0
            cols.append(e)
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            x0[j] = hi
            e[j] = -1.0
            cols.append(e)
        else:
            e[j] = 1.0
            cols.append(e)
            cols.append(-e)
    M = np.column_stack(cols) if cols else np.zeros((n, 0))
    A = lp.dense_A()
    As = A @ M
    bs = lp.b - A @ x0
    rels = list(lp.relations)
    if extra_rows:
        U = np.zeros((len(extra_rows), M.shape[1]))
        for r, (col, lim) in enumerate(extra_rows):
            U[r, col] = 1.0
        As = np.vstack([As, U])
        bs = np.concatenate([bs, [lim for _, lim in extra_rows]])
        rels += [Relation.LE] * len(extra_rows)
    return As, bs, rels, lp.c @ M, float(lp.c @ x0), x0, M


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    basis[row] = col


def _bland(T: np.ndarray, basis: list[int], allowed: int) -> bool:
    """Run simplex iterations on tableau ``T`` (last row = reduced costs).

    Only the first ``allowed`` columns may enter. Returns False if unbounded.
    """
    m = T.shape[0] - 1
    while True:
        red = T[-1, :allowed]
        entering = np.flatnonzero(red < -_PIVOT_TOL)
        if entering.size == 0:
            return True
        col = int(entering[0])
        column = T[:m, col]
        pos = np.flatnonzero(column > _PIVOT_TOL)
        if pos.size == 0:
            return False
        ratios = T[pos, -1] / column[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        row = min(ties, key=lambda r: basis[r])
        _pivot(T, basis, int(row), col)


def _solve_tableau(lp: LinearProgram) -> LpSolution:
    n = lp.n_vars
    A, b, rels, c, c0, x0, M = _standard_form(lp)
    m, ny = A.shape

    # slack / surplus columns
    n_slack = sum(r is not Relation.EQ for r in rels)
    S = np.zeros((m, n_slack))
    k = 0
    for i, r in enumerate(rels):
        if r is Relation.LE:
            S[i, k] = 1.0
            k += 1
        elif r is Relation.GE:
            S[i, k] = -1.0
            k += 1
    A = np.hstack([A, S])
    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)
    nv = ny + n_slack

    basis: list[int] = []
    art_rows: list[int] = []
    for i in range(m):
        unit = [j for j in range(ny, nv) if A[i, j] == 1.0 and np.count_nonzero(A[:, j]) == 1]
        if unit:
            basis.append(unit[0])
        else:
            basis.append(-1)
            art_rows.append(i)
    n_art = len(art_rows)
    T = np.zeros((m + 1, nv + n_art + 1))
    T[:m, :nv] = A
    T[:m, -1] = b
    for k, i in enumerate(art_rows):
        T[i, nv + k] = 1.0
        basis[i] = nv + k

    if n_art:
        # phase 1: minimize the sum of artificials
        T[-1, nv : nv + n_art] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        _bland(T, basis, nv + n_art)
        if -T[-1, -1] > FEAS_TOL * max(1.0, float(np.max(b, initial=0.0))):
            return LpSolution(LpStatus.INFEASIBLE, float("nan"), np.full(n, np.nan))
        # drive remaining artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= nv:
                cand = np.flatnonzero(np.abs(T[i, :nv]) > _PIVOT_TOL)
                if cand.size:
                    _pivot(T, basis, i, int(cand[0]))
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, np.s_[nv : nv + n_art], axis=1)
        m = len(basis)

    # phase 2
    T[-1] = 0.0
    T[-1, :ny] = c
    for i, j in enumerate(basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    if not _bland(T, basis, nv):
        return LpSolution(LpStatus.UNBOUNDED, float("-inf"), np.full(n, np.nan))
    y = np.zeros(nv)
    for i, j in enumerate(basis):
        y[j] = T[i, -1]
    x = x0 + M @ y[:ny]
    return LpSolution(LpStatus.OPTIMAL, float(lp.c @ x), x)


def from_rows(
    c: Sequence[float],
    rows: Sequence[tuple[Sequence[float], str | Relation, float]],
    lower: Sequence[float] | None = None,
    upper: Sequence[float] | None = None,
) -> LinearProgram:
    """Build a :class:`LinearProgram` from ``(coefficients, relation, rhs)`` rows."""
    n = len(c)
    for i, r in enumerate(rows):
        if len(r[0]) != n:
            raise LpFormatError(f"row {i} has {len(r[0])} coefficients, expected {n}")
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n) if rows else np.zeros((0, n))
    return LinearProgram(
        c=np.asarray(c, dtype=float),
        A=A,
        relations=tuple(r[1] for r in rows),
        b=np.array([r[2] for r in rows], dtype=float),
        lower=None if lower is None else np.asarray(lower, dtype=float),
        upper=None if upper is None else np.asarray(upper, dtype=float),
    )
