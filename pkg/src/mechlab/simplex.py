"""Revised primal simplex on the dual of an inequality-form LP.

The primal problem is

    maximize c.x  subject to  G_j . x <= h_j  for every row j,  x free,

and the solver works on its dual

    minimize h.y  subject to  G^T y = c,  y >= 0,

whose columns are the primal rows.  The simplex multipliers of a dual basis
are a primal point x, and the reduced cost of dual column j is the primal
slack h_j - G_j . x.  Pricing therefore only needs the slacks of all rows,
which a row source computes in vectorized form, and the constraint matrix
is never stored.  The basis inverse is kept explicitly (its size is the
number of primal variables) and refactorized periodically.

Pricing is Dantzig (most violated row).  After a run of pivots without
strict objective decrease the solver switches to Bland's rule (smallest
violated row index, smallest basic index on ratio ties) until the objective
moves again, which rules out cycling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

PIVOT_TOL = 1e-9
OPTIMALITY_TOL = 1e-11
REFACTOR_EVERY = 64
STALL_PIVOTS = 50
MAX_PIVOTS = 200_000


class SolverFailure(RuntimeError):
    """Numerical breakdown or iteration limit; the result must not be used."""


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


class RowSource(Protocol):
    """Rows G_j . x <= h_j supplied on demand."""

    n_vars: int
    n_rows: int

    def slacks(self, x: np.ndarray) -> np.ndarray:
        """h - G x for all rows, in row order."""

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero pattern (indices, values) of row j."""

    def rhs(self, j: int) -> float:
        ...


@dataclass
class SimplexResult:
    status: Status
    x: np.ndarray
    objective: float
    dual_objective: float
    basis: list[int]
    pivots: int
    bland_pivots: int


@dataclass
class DenseRows:
    """Row source backed by a dense matrix; used for small problems and tests."""

    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.n_rows, self.n_vars = self.G.shape

    def slacks(self, x):
        return self.h - self.G @ x

    def column(self, j):
        idx = np.flatnonzero(self.G[j])
        return idx, self.G[j, idx]

    def rhs(self, j):
        return float(self.h[j])


def box_basis(c: np.ndarray, upper_rows: Sequence[int], lower_rows: Sequence[int]) -> list[int]:
    """Dual-feasible start when row upper_rows[i] is x_i <= u and lower_rows[i] is -x_i <= -l."""
    return [int(upper_rows[i]) if ci >= 0 else int(lower_rows[i]) for i, ci in enumerate(c)]


def _basis_matrix(rows: RowSource, basis: Sequence[int], size: int) -> np.ndarray:
    B = np.zeros((size, size))
    for k, j in enumerate(basis):
        idx, vals = rows.column(j)
        B[idx, k] = vals
    return B


def solve(
    rows: RowSource,
    c: np.ndarray,
    basis: Sequence[int],
    pivot_tol: float = PIVOT_TOL,
    opt_tol: float = OPTIMALITY_TOL,
    max_pivots: int = MAX_PIVOTS,
) -> SimplexResult:
    """Maximize c.x over the rows, starting from a dual-feasible ``basis``.

    ``basis`` lists one row per variable such that the basis matrix is
    nonsingular and G_B^T y = c has a nonnegative solution.
    """
    c = np.asarray(c, dtype=float)
    size = rows.n_vars
    basis = [int(j) for j in basis]
    if len(basis) != size:
        raise SolverFailure(f"basis has {len(basis)} rows for {size} variables")
    h_B = np.array([rows.rhs(j) for j in basis])

    def refactor():
        B = _basis_matrix(rows, basis, size)
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise SolverFailure("singular basis") from None
        return Binv, Binv @ c

    Binv, y_B = refactor()
    if np.any(y_B < -1e-9):
        raise SolverFailure("starting basis is not dual feasible")
    y_B = np.maximum(y_B, 0.0)

    in_basis = np.zeros(rows.n_rows, dtype=bool)
    in_basis[basis] = True
    obj = float(h_B @ y_B)
    stall = 0
    bland = False
    pivots = bland_pivots = 0
    since_refactor = 0

    while True:
        x = Binv.T @ h_B
        s = rows.slacks(x)
        s[in_basis] = 0.0
        violated = s < -opt_tol
        if not violated.any():
            break
        if pivots >= max_pivots:
            raise SolverFailure(f"no convergence after {pivots} pivots")
        j = int(np.argmax(violated)) if bland else int(np.argmin(s))

        idx, vals = rows.column(j)
        d = Binv[:, idx] @ vals
        eligible = d > pivot_tol
        if not eligible.any():
            # dual unbounded along this column: the primal row set is infeasible
            return SimplexResult(Status.INFEASIBLE, x, float("nan"), float("-inf"), basis, pivots, bland_pivots)
        ratios = np.full(size, np.inf)
        ratios[eligible] = y_B[eligible] / d[eligible]
        theta = ratios.min()
        ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
        r = int(min(ties, key=lambda k: basis[k])) if len(ties) > 1 else int(ties[0])
        theta = max(ratios[r], 0.0)

        # pivot
        piv = d[r]
        y_B -= theta * d
        y_B[r] = theta
        y_B = np.maximum(y_B, 0.0)
        row_r = Binv[r] / piv
        Binv -= np.outer(d, row_r)
        Binv[r] = row_r
        in_basis[basis[r]] = False
        basis[r] = j
        in_basis[j] = True
        h_B[r] = rows.rhs(j)

        pivots += 1
        bland_pivots += bland
        since_refactor += 1
        if since_refactor >= REFACTOR_EVERY:
            Binv, y_B = refactor()
            y_B = np.maximum(y_B, 0.0)
            since_refactor = 0

        new_obj = float(h_B @ y_B)
        if new_obj < obj - 1e-13 * max(1.0, abs(obj)):
            stall = 0
            bland = False
        else:
            stall += 1
            if stall >= STALL_PIVOTS:
                bland = True
        obj = min(obj, new_obj)

    Binv, y_B = refactor()
    x = Binv.T @ h_B
    return SimplexResult(Status.OPTIMAL, x, float(c @ x), float(h_B @ y_B), basis, pivots, bland_pivots)
