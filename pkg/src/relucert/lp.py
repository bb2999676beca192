"""Self-contained dense two-phase primal simplex with a wall-clock budget.

Problems are stated with per-variable bounds (infinities allowed) and
mixed <= / = / >= constraints, maximizing a linear objective. Internally
everything is rewritten over non-negative variables: finite lower bounds
are shifted out, upper-bounded-only variables are flipped, free variables
are split. Bland's rule guarantees termination; the budget exists for
problems too large to wait for.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalFailure

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-11
COST_TOL = 1e-9

LE, EQ, GE = "<=", "=", ">="


@dataclass
class LPProblem:
    """maximize objective . x subject to bounds and constraints."""

    num_vars: int
    bounds: list  # per var (lo, hi); use -inf/+inf for unbounded sides
    constraints: list = field(default_factory=list)  # (coeffs, rel, rhs)
    objective: Optional[np.ndarray] = None
    objective_offset: float = 0.0

    def add_constraint(self, coeffs: Sequence[float], rel: str, rhs: float) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.num_vars,):
            raise ValueError(
                f"constraint over {coeffs.shape} vars, expected {self.num_vars}"
            )
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        self.constraints.append((coeffs, rel, float(rhs)))


@dataclass(frozen=True)
class LPOutcome:
    status: str  # "optimal" | "infeasible" | "unbounded" | "timed_out"
    point: Optional[np.ndarray] = None
    value: Optional[float] = None

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIMED_OUT = "timed_out"


class _Budget:
    def __init__(self, seconds: Optional[float]):
        self.deadline = None if seconds is None else time.monotonic() + seconds

    def exceeded(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline


class _TimedOut(Exception):
    pass


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _run_simplex(tableau: np.ndarray, basis: np.ndarray, budget: _Budget) -> str:
    """Minimize the cost row (last row) in place. Bland's anti-cycling rule."""
    m = tableau.shape[0] - 1
    while True:
        if budget.exceeded():
            raise _TimedOut()
        cost = tableau[-1, :-1]
        candidates = np.flatnonzero(cost < -COST_TOL)
        if candidates.size == 0:
            return OPTIMAL
        col = int(candidates[0])  # Bland: smallest improving index
        column = tableau[:m, col]
        rhs = tableau[:m, -1]
        ratios = np.full(m, np.inf)
        ok = column > PIVOT_TOL
        if not np.any(ok):
            if np.any(column > 0):
                raise NumericalFailure(
                    f"all pivots in column {col} below {PIVOT_TOL}"
                )
            return UNBOUNDED
        ratios[ok] = rhs[ok] / column[ok]
        best = ratios.min()
        # Bland tie-break: among minimal ratios, leave the smallest basis var
        tied = np.flatnonzero(np.isclose(ratios, best, rtol=0.0, atol=1e-12))
        row = int(tied[np.argmin(basis[tied])])
        _pivot(tableau, basis, row, col)


def solve(problem: LPProblem, budget: Optional[float] = 30.0) -> LPOutcome:
    """Two-phase primal simplex. Budget in seconds; None disables it."""
    clock = _Budget(budget)
    n = problem.num_vars
    objective = (
        np.zeros(n) if problem.objective is None else np.asarray(problem.objective, float)
    )

    # Rewrite over non-negative columns. column_map[j] = (var, sign, shift):
    # original x_var = sign * u_j + shift (free vars get two columns).
    columns: list[tuple[int, float, float]] = []
    extra_upper: list[tuple[int, float]] = []  # (column, upper bound on u)
    var_cols: list[list[int]] = []
    for j in range(n):
        lo, hi = problem.bounds[j]
        lo, hi = float(lo), float(hi)
        if lo > hi:
            return LPOutcome(status=INFEASIBLE)
        if np.isfinite(lo):
            col = len(columns)
            columns.append((j, 1.0, lo))
            var_cols.append([col])
            if np.isfinite(hi):
                extra_upper.append((col, hi - lo))
        elif np.isfinite(hi):
            col = len(columns)
            columns.append((j, -1.0, hi))
            var_cols.append([col])
        else:
            c1, c2 = len(columns), len(columns) + 1
            columns.append((j, 1.0, 0.0))
            columns.append((j, -1.0, 0.0))
            var_cols.append([c1, c2])

    n_cols = len(columns)

    def to_u_space(coeffs: np.ndarray) -> tuple[np.ndarray, float]:
        row = np.zeros(n_cols)
        shift = 0.0
        for col, (var, sign, off) in enumerate(columns):
            row[col] = coeffs[var] * sign
            shift += coeffs[var] * off
        return row, shift

    rows = []
    rels = []
    rhss = []
    for coeffs, rel, rhs in problem.constraints:
        row, shift = to_u_space(np.asarray(coeffs, dtype=float))
        rows.append(row)
        rels.append(rel)
        rhss.append(rhs - shift)
    for col, ub in extra_upper:
        row = np.zeros(n_cols)
        row[col] = 1.0
        rows.append(row)
        rels.append(LE)
        rhss.append(ub)

    m = len(rows)
    A = np.array(rows) if rows else np.zeros((0, n_cols))
    b = np.array(rhss)
    rels = list(rels)
    # normalize to b >= 0
    for i in range(m):
        if b[i] < 0:
            A[i] = -A[i]
            b[i] = -b[i]
            rels[i] = {LE: GE, GE: LE, EQ: EQ}[rels[i]]

    n_slack = sum(1 for r in rels if r == LE)
    n_surplus = sum(1 for r in rels if r == GE)
    n_art = sum(1 for r in rels if r in (EQ, GE))
    total = n_cols + n_slack + n_surplus + n_art

    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :n_cols] = A
    tableau[:m, -1] = b
    basis = np.zeros(m, dtype=int)
    s_idx, p_idx, a_idx = n_cols, n_cols + n_slack, n_cols + n_slack + n_surplus
    art_cols = []
    for i, rel in enumerate(rels):
        if rel == LE:
            tableau[i, s_idx] = 1.0
            basis[i] = s_idx
            s_idx += 1
        elif rel == GE:
            tableau[i, p_idx] = -1.0
            tableau[i, a_idx] = 1.0
            basis[i] = a_idx
            art_cols.append(a_idx)
            p_idx += 1
            a_idx += 1
        else:
            tableau[i, a_idx] = 1.0
            basis[i] = a_idx
            art_cols.append(a_idx)
            a_idx += 1

    try:
        if art_cols:
            # Phase 1: minimize the sum of artificials
            tableau[-1, art_cols] = 1.0
            for i in range(m):
                if basis[i] in art_cols:
                    tableau[-1] -= tableau[i]
            status = _run_simplex(tableau, basis, clock)
            if status != OPTIMAL or tableau[-1, -1] < -FEAS_TOL:
                if status == UNBOUNDED:
                    raise NumericalFailure("phase 1 unbounded")
                return LPOutcome(status=INFEASIBLE)
            # drive remaining artificials out of the basis
            keep_rows = np.ones(m, dtype=bool)
            for i in range(m):
                if basis[i] in art_cols:
                    row = tableau[i, :n_cols + n_slack + n_surplus]
                    pivots = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                    if pivots.size:
                        _pivot(tableau, basis, i, int(pivots[0]))
                    else:
                        keep_rows[i] = False  # redundant constraint
            tableau[:, art_cols] = 0.0
            if not np.all(keep_rows):
                tableau = np.vstack([tableau[:m][keep_rows], tableau[-1:]])
                basis = basis[keep_rows]
                m = int(keep_rows.sum())

        # Phase 2: minimize -objective in u-space
        obj_row, obj_shift = to_u_space(objective)
        tableau[-1, :] = 0.0
        tableau[-1, :n_cols] = -obj_row
        for i in range(m):
            coef = tableau[-1, basis[i]]
            if abs(coef) > 0:
                tableau[-1] -= coef * tableau[i]
        status = _run_simplex(tableau, basis, clock)
    except _TimedOut:
        return LPOutcome(status=TIMED_OUT)
    if status == UNBOUNDED:
        return LPOutcome(status=UNBOUNDED)

    u = np.zeros(total)
    u[basis] = tableau[:m, -1]
    x = np.zeros(n)
    for col, (var, sign, off) in enumerate(columns):
        x[var] += sign * u[col] + off
    value = float(objective @ x) + problem.objective_offset
    _check_feasible(problem, x)
    return LPOutcome(status=OPTIMAL, point=x, value=value)


def _check_feasible(problem: LPProblem, x: np.ndarray) -> None:
    for j, (lo, hi) in enumerate(problem.bounds):
        if x[j] < lo - FEAS_TOL or x[j] > hi + FEAS_TOL:
            raise NumericalFailure(f"solution violates bound on variable {j}")
    for coeffs, rel, rhs in problem.constraints:
        lhs = float(np.asarray(coeffs) @ x)
        if rel == LE and lhs > rhs + FEAS_TOL:
            raise NumericalFailure("solution violates a <= constraint")
        if rel == GE and lhs < rhs - FEAS_TOL:
            raise NumericalFailure("solution violates a >= constraint")
        if rel == EQ and abs(lhs - rhs) > FEAS_TOL:
            raise NumericalFailure("solution violates an = constraint")
