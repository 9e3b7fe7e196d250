"""Exact optimal mechanisms on a discrete type grid.

Types are the lattice points of an n x n grid that lie in the support.
Each node carries the mass of its lattice cell (the rectangle of points
closer to it than to any other lattice point) clipped to the support.  The
variables per node are (q1, q2, t) and the rows, all of the form
G_j . x <= h_j, come in this order:

* incentive compatibility for every ordered pair (k, l), k != l:
  v_k . q_l - t_l <= v_k . q_k - t_k;
* participation: v_k . q_k - t_k >= 0;
* feasibility per node: q2 >= 0, q2 <= q1, q1 <= 1;
* optional extra rows (fixing q1, tying q1 = q2).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .densities import Density, Domain, fosd_tilt
from .quadrature import clip_polygon
from .simplex import SimplexResult, SolverFailure, Status, solve

MAX_GRID = 25
DEFAULT_GRID = 15
FEASIBILITY_TOL = 1e-7
TIE_TOL = 1e-12

__all__ = [
    "GridTooLarge",
    "SolverFailure",
    "TypeGrid",
    "LPInstance",
    "LPSolution",
    "build_lp",
    "solve_lp",
    "deterministic_gap",
    "monotonicity_check",
    "is_nondecreasing",
    "discrete_revenue",
    "best_deterministic",
    "candidate_prices",
    "first_unit_rounding_loss",
    "equal_units_loss",
    "max_violation",
]


class GridTooLarge(ValueError):
    pass


def _num(x) -> str:
    """Shortest round-tripping text for a number (numpy scalars included)."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# type grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeGrid:
    domain: Domain
    n: int
    nodes: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,)

    @property
    def m(self) -> int:
        return len(self.nodes)

    @classmethod
    def build(cls, density: Density, n: int) -> "TypeGrid":
        nodes, cells = lattice(density.domain, n)
        mass = np.array([_cell_mass(density, c) for c in cells])
        return cls(density.domain, n, nodes, mass / mass.sum())

    @classmethod
    def from_nodes(cls, domain: Domain, nodes, weights) -> "TypeGrid":
        """Arbitrary types and weights (weights are normalized)."""
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        w = np.asarray(weights, dtype=float)
        return cls(domain, 0, nodes, w / w.sum())


def lattice(domain: Domain, n: int):
    """Support lattice points in row-major order (v2 rows outer) and their cells."""
    a = domain.a
    h = 1.0 / (n - 1)
    nodes, cells = [], []
    support = domain.polygon()
    for i in range(n):
        for j in range(n):
            if domain.is_dmv:
                # row i is v2 = i a h, column j is v1 = j h
                if i > j:
                    continue
                x, y, hx, hy = j * h, i * a * h, h, a * h
            else:
                # row i is v2 = i h, column j is v1 = j a h
                if j > i:
                    continue
                x, y, hx, hy = j * a * h, i * h, a * h, h
            box = [
                (x - hx / 2, y - hy / 2),
                (x + hx / 2, y - hy / 2),
                (x + hx / 2, y + hy / 2),
                (x - hx / 2, y + hy / 2),
            ]
            cell = support
            for k in range(4):
                p, q = box[k], box[(k + 1) % 4]
                # keep the side of edge p->q containing the box interior
                nrm = (q[1] - p[1], p[0] - q[0])
                cell = clip_polygon(cell, nrm, nrm[0] * p[0] + nrm[1] * p[1])
            nodes.append((x, y))
            cells.append(cell)
    return np.array(nodes), cells


def _cell_mass(density: Density, cell) -> float:
    if len(cell) < 3:
        return 0.0
    return density.integrate_region(cell, tol=1e-12)


# ---------------------------------------------------------------------------
# LP instance
# ---------------------------------------------------------------------------


@dataclass
class LPInstance:
    """Rows of the discrete mechanism design LP; see the module docstring.

    ``extra`` holds additional rows as (indices, coefficients, rhs).
    """

    grid: TypeGrid
    extra: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.m = self.grid.m
        self.n_vars = 3 * self.m
        self.n_ic = self.m * (self.m - 1)
        self.n_base = self.n_ic + 4 * self.m
        self.n_rows = self.n_base + len(self.extra)
        v = self.grid.nodes
        self._v1 = v[:, 0]
        self._v2 = v[:, 1]

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        c[2::3] = self.grid.weights
        return c

    # row bookkeeping -------------------------------------------------------

    def ic_row(self, k: int, l: int) -> int:
        return k * (self.m - 1) + (l if l < k else l - 1)

    def ic_pair(self, j: int) -> tuple[int, int]:
        k, r = divmod(j, self.m - 1)
        return k, (r if r < k else r + 1)

    def row_name(self, j: int) -> str:
        if j < self.n_ic:
            k, l = self.ic_pair(j)
            return f"ic_{k}_{l}"
        j -= self.n_ic
        if j < self.m:
            return f"ir_{j}"
        j -= self.m
        if j < 3 * self.m:
            k, kind = divmod(j, 3)
            return f"{('q2nonneg', 'q2leqq1', 'q1leq1')[kind]}_{k}"
        return f"extra_{j - 3 * self.m}"

    def column(self, j: int):
        m = self.m
        if j < self.n_ic:
            k, l = self.ic_pair(j)
            vk1, vk2 = self._v1[k], self._v2[k]
            idx = np.array([3 * k, 3 * k + 1, 3 * k + 2, 3 * l, 3 * l + 1, 3 * l + 2])
            vals = np.array([-vk1, -vk2, 1.0, vk1, vk2, -1.0])
            return idx, vals
        j -= self.n_ic
        if j < m:
            return np.array([3 * j, 3 * j + 1, 3 * j + 2]), np.array([-self._v1[j], -self._v2[j], 1.0])
        j -= m
        if j < 3 * m:
            k, kind = divmod(j, 3)
            if kind == 0:
                return np.array([3 * k + 1]), np.array([-1.0])
            if kind == 1:
                return np.array([3 * k, 3 * k + 1]), np.array([-1.0, 1.0])
            return np.array([3 * k]), np.array([1.0])
        idx, vals, _ = self.extra[j - 3 * m]
        return np.asarray(idx), np.asarray(vals, dtype=float)

    def rhs(self, j: int) -> float:
        if j < self.n_base:
            return 1.0 if j >= self.n_ic + self.m and (j - self.n_ic - self.m) % 3 == 2 else 0.0
        return float(self.extra[j - self.n_base][2])

    def slacks(self, x: np.ndarray) -> np.ndarray:
        q1, q2, t = x[0::3], x[1::3], x[2::3]
        v1, v2 = self._v1, self._v2
        u = v1 * q1 + v2 * q2 - t
        # ic slack (k, l): u_k - (v_k . q_l - t_l)
        S = u[:, None] - (v1[:, None] * q1[None, :] + v2[:, None] * q2[None, :] - t[None, :])
        off = ~np.eye(self.m, dtype=bool)
        parts = [S[off], u, np.column_stack([q2, q1 - q2, 1.0 - q1]).ravel()]
        if self.extra:
            parts.append(np.array([rhs - vals @ x[idx] for idx, vals, rhs in self.extra]))
        return np.concatenate(parts)

    def start_basis(self) -> list[int]:
        """Participation, q2 <= q1 and q1 <= 1 at every node (full surplus extraction)."""
        out = []
        for k in range(self.m):
            b = self.n_ic + self.m + 3 * k
            out += [b + 2, b + 1, self.n_ic + k]
        return out

    # constraint helpers --------------------------------------------------------

    def with_equal_units(self) -> "LPInstance":
        """Adds q1 <= q2 at every node, so q1 = q2."""
        rows = [(np.array([3 * k, 3 * k + 1]), np.array([1.0, -1.0]), 0.0) for k in range(self.m)]
        return LPInstance(self.grid, self.extra + rows)

    def with_fixed_q1(self, q1: Sequence[float]) -> "LPInstance":
        rows = []
        for k, val in enumerate(q1):
            rows.append((np.array([3 * k]), np.array([1.0]), float(val)))
            rows.append((np.array([3 * k]), np.array([-1.0]), -float(val)))
        return LPInstance(self.grid, self.extra + rows)

    # export ------------------------------------------------------------------

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(G, h, c) as dense arrays; only sensible for small grids."""
        G = np.zeros((self.n_rows, self.n_vars))
        h = np.zeros(self.n_rows)
        for j in range(self.n_rows):
            idx, vals = self.column(j)
            G[j, idx] = vals
            h[j] = self.rhs(j)
        return G, h, self.objective

    def to_lp_text(self) -> str:
        """Plain-text LP interchange format (objective, rows, bounds)."""
        names = [f"{kind}_{k}" for k in range(self.m) for kind in ("q1", "q2", "t")]
        out = io.StringIO()
        out.write("\\ discrete mechanism design LP\n")
        out.write(f"\\ nodes {self.m}\n")
        for k, (x, y) in enumerate(self.grid.nodes):
            out.write(f"\\ node {k} {_num(x)} {_num(y)} {_num(self.grid.weights[k])}\n")
        out.write("Maximize\n obj:")
        for k in range(self.m):
            out.write(f" + {_num(self.grid.weights[k])} t_{k}")
        out.write("\nSubject To\n")
        for j in range(self.n_rows):
            idx, vals = self.column(j)
            terms = " ".join(f"{'+' if v >= 0 else '-'} {_num(abs(v))} {names[i]}" for i, v in zip(idx, vals))
            out.write(f" {self.row_name(j)}: {terms} <= {_num(self.rhs(j))}\n")
        out.write("Bounds\n")
        for name in names:
            out.write(f" {name} free\n")
        out.write("End\n")
        return out.getvalue()


def build_lp(density: Density, n: int = DEFAULT_GRID) -> LPInstance:
    if not 2 <= n <= MAX_GRID:
        raise GridTooLarge(f"grid size must be in [2, {MAX_GRID}], got {n}")
    return LPInstance(TypeGrid.build(density, n))


# ---------------------------------------------------------------------------
# solution
# ---------------------------------------------------------------------------


@dataclass
class LPSolution:
    objective: float
    q1: np.ndarray
    q2: np.ndarray
    t: np.ndarray
    status: Status
    max_violation: float
    pivots: int = 0
    grid: TypeGrid | None = None

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("v1,v2,q1,q2,t\n")
        for (v1, v2), a, b, c in zip(self.grid.nodes, self.q1, self.q2, self.t):
            out.write(",".join(_num(x) for x in (v1, v2, a, b, c)) + "\n")
        return out.getvalue()

    def to_dict(self):
        return {
            "objective": self.objective,
            "status": self.status.value,
            "max_violation": self.max_violation,
            "pivots": self.pivots,
        }


def max_violation(instance: LPInstance, x: np.ndarray) -> float:
    """Largest violation over all rows, recomputed row by row from the sparse rows."""
    worst = 0.0
    for j in range(instance.n_rows):
        idx, vals = instance.column(j)
        worst = max(worst, float(vals @ x[idx]) - instance.rhs(j))
    return worst


def solve_lp(instance: LPInstance) -> LPSolution:
    """Optimal discrete mechanism; raises SolverFailure rather than return a bad point."""
    res: SimplexResult = solve(instance, instance.objective, instance.start_basis())
    if res.status is not Status.OPTIMAL:
        raise SolverFailure(f"solver ended with status {res.status.value}")
    x = res.x
    viol = max_violation(instance, x)
    if not math.isfinite(res.objective) or viol > FEASIBILITY_TOL:
        raise SolverFailure(f"solution violates constraints by {viol:.3g}")
    if abs(res.objective - res.dual_objective) > 1e-8 * max(1.0, abs(res.objective)):
        raise SolverFailure(f"duality gap {res.objective - res.dual_objective:.3g} at termination")
    return LPSolution(res.objective, x[0::3].copy(), x[1::3].copy(), x[2::3].copy(), res.status, viol, res.pivots, instance.grid)


# ---------------------------------------------------------------------------
# deterministic benchmark
# ---------------------------------------------------------------------------


def discrete_revenue(grid: TypeGrid, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Revenue of posted prices on the grid with seller-favorable ties (vectorized over prices)."""
    p1 = np.asarray(p1, dtype=float)[:, None]
    p2 = np.asarray(p2, dtype=float)[:, None]
    v1, v2 = grid.nodes[:, 0][None, :], grid.nodes[:, 1][None, :]
    u_one = v1 - p1
    u_both = v1 + v2 - p1 - p2
    best = np.maximum(0.0, np.maximum(u_one, u_both))
    bundle = p2 <= 0.0
    takes_both = u_both >= best - TIE_TOL
    takes_one = ~takes_both & ~bundle & (u_one >= best - TIE_TOL)
    pay = np.where(takes_both, p1 + p2, np.where(takes_one, p1, 0.0))
    return pay @ grid.weights


def candidate_prices(grid: TypeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Price pairs containing a revenue maximizer over all deterministic menus.

    With the buyers' choices fixed, revenue is nondecreasing in both prices,
    so a maximizer sits at a vertex of the arrangement of the indifference
    lines p1 = v1, p2 = v2, p1 + p2 = v1 + v2 and p2 = 0.  The list also has
    p2 above every v2 (first unit only).
    """
    a1 = np.unique(grid.nodes[:, 0])
    a2 = np.unique(grid.nodes[:, 1])
    s = np.unique(grid.nodes.sum(axis=1))
    big = float(a2.max()) + 1.0
    P1 = [np.repeat(a1, len(a2)), np.repeat(a1, len(s)), s[None, :].repeat(len(a2), 0).ravel() - np.repeat(a2, len(s))]
    P2 = [np.tile(a2, len(a1)), np.tile(s, len(a1)) - np.repeat(a1, len(s)), np.repeat(a2, len(s))]
    P1 += [a1, s, a1]
    P2 += [np.zeros_like(a1), np.zeros_like(s), np.full_like(a1, big)]
    p1 = np.concatenate(P1)
    p2 = np.concatenate(P2)
    keep = (p1 >= 0) & (p2 >= 0)
    pairs = np.unique(np.column_stack([p1[keep], p2[keep]]), axis=0)
    return pairs[:, 0], pairs[:, 1]


@dataclass(frozen=True)
class GapReport:
    lp_value: float
    best_det_on_grid: float
    gap: float
    det_prices: tuple[float, float]
    n: int
    m: int
    solution: LPSolution | None = None

    def to_dict(self):
        return {
            "lp_value": self.lp_value,
            "best_det_on_grid": self.best_det_on_grid,
            "gap": self.gap,
            "det_prices": list(self.det_prices),
            "n": self.n,
            "m": self.m,
        }


def best_deterministic(grid: TypeGrid) -> tuple[float, tuple[float, float]]:
    p1, p2 = candidate_prices(grid)
    rev = np.concatenate([discrete_revenue(grid, p1[i : i + 4096], p2[i : i + 4096]) for i in range(0, len(p1), 4096)])
    k = int(np.argmax(rev))
    return float(rev[k]), (float(p1[k]), float(p2[k]))


def deterministic_gap(density: Density, n: int = DEFAULT_GRID, instance: LPInstance | None = None) -> GapReport:
    inst = instance or build_lp(density, n)
    sol = solve_lp(inst)
    det, prices = best_deterministic(inst.grid)
    return GapReport(sol.objective, det, sol.objective - det, prices, inst.grid.n, inst.m, sol)


def first_unit_rounding_loss(instance: LPInstance, solution: LPSolution) -> float:
    """Objective lost when q1 is rounded to {0, 1} and the rest re-solved."""
    rounded = np.where(solution.q1 >= 0.5, 1.0, 0.0)
    return solution.objective - solve_lp(instance.with_fixed_q1(rounded)).objective


def equal_units_loss(instance: LPInstance, solution: LPSolution | None = None) -> float:
    """Objective lost by forcing q1 = q2 at every node."""
    base = solution.objective if solution is not None else solve_lp(instance).objective
    return base - solve_lp(instance.with_equal_units()).objective


# ---------------------------------------------------------------------------
# revenue monotonicity under tilting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonotonicityRow:
    theta: float
    lp_value: float


def monotonicity_check(
    density: Density,
    thetas: Iterable[float],
    n: int = DEFAULT_GRID,
    map_fn: Callable = map,
    tilt: Callable[[Density, float], Density] = fosd_tilt,
) -> list[MonotonicityRow]:
    """Discrete optimal revenue along the tilted family; rows in the given order."""
    thetas = [float(t) for t in thetas]

    def run(theta):
        return MonotonicityRow(theta, solve_lp(build_lp(tilt(density, theta), n)).objective)

    return list(map_fn(run, thetas))


def is_nondecreasing(rows: Sequence[MonotonicityRow], tol: float = 1e-7) -> bool:
    ordered = sorted(rows, key=lambda r: r.theta)
    return all(b.lp_value >= a.lp_value - tol for a, b in zip(ordered, ordered[1:]))
