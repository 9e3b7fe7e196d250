"""Optimal deterministic prices, first-order checks, and bundle prices.

The deterministic search runs in two stages.  A 200 x 200 coarse scan of
the price square uses a histogram of the density, where each price pair
costs two table lookups.  Each regime's coarse winner is then refined by
coordinate golden-section search on the exact polygon revenue, and points
inside a regime are polished by solving the first-order conditions.  Regimes
are parametrized so that every search box stays inside one of them:

* Interior: (p1, r) with p2 = r a p1, 0 < r < 1;
* SeparateEdge: (p1, s) with p2 = a p1 + s a (1 - p1), plus the line
  p2 = a p1 searched on its own;
* Bundle: a single price for both units (p2 = 0).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, root

from .densities import Density, SumDistribution, Marginals, UniformTriangle
from .mechanisms import DeterministicMechanism, revenue_direct
from .phi_sc import PhiEvaluator, WrongOrientation, phi
from .quadrature import integrate_1d

COARSE_GRID = 200
HISTOGRAM_CELLS = 800
PRICE_TOL = 1e-7
MAX_CYCLES = 40
BOUNDARY_SNAP = 2e-7
FIXED_POINT_TOL = 1e-8
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class OnBoundary(ValueError):
    """Raised when first-order conditions are requested on a regime boundary."""


class Regime(str, enum.Enum):
    INTERIOR = "Interior"
    SEPARATE_EDGE = "SeparateEdge"
    BUNDLE = "Bundle"


def classify(p1: float, p2: float, a: float) -> Regime:
    if p2 == 0.0:
        return Regime.BUNDLE
    return Regime.INTERIOR if a * p1 > p2 else Regime.SEPARATE_EDGE


@dataclass(frozen=True)
class Candidate:
    p1: float
    p2: float
    revenue: float
    regime: Regime

    def __post_init__(self):
        for name in ("p1", "p2", "revenue"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self):
        return {"p1": self.p1, "p2": self.p2, "revenue": self.revenue, "regime": self.regime.value}


@dataclass
class OptResult:
    best: DeterministicMechanism
    revenue: float
    regime: Regime
    candidates: list[Candidate] = field(default_factory=list)
    foc_residuals: tuple[float, float] | None = None

    def to_dict(self):
        return {
            "p1": self.best.p1,
            "p2": self.best.p2,
            "revenue": self.revenue,
            "regime": self.regime.value,
            "candidates": [c.to_dict() for c in self.candidates],
            "foc_residuals": None if self.foc_residuals is None else list(self.foc_residuals),
        }


# ---------------------------------------------------------------------------
# one-dimensional search
# ---------------------------------------------------------------------------


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = PRICE_TOL):
    """Maximize a unimodal ``f`` on [lo, hi]; returns (x, f(x)) for the best point seen."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    best = max((fc, -c, c), (fd, -d, d))
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
            best = max(best, (fc, -c, c))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
            best = max(best, (fd, -d, d))
    return float(best[2]), float(best[0])


def coordinate_ascent(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    lower: Sequence[float],
    upper: Sequence[float],
    step: Sequence[float],
    tol: float = PRICE_TOL,
    max_cycles: int = MAX_CYCLES,
):
    """Cyclic golden-section ascent in boxes around the current point.

    Box half-widths start at ``step`` and shrink to a few times the last
    move; a search that ends on its box edge keeps the width so the next
    cycle can follow the slope.  Never returns a point worse than ``x0``.
    """
    x = np.array(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    h = np.array(step, dtype=float)
    fx = f(x)
    for _ in range(max_cycles):
        moved = np.zeros_like(x)
        at_edge = False
        for i in range(x.size):
            lo = max(lower[i], x[i] - h[i])
            hi = min(upper[i], x[i] + h[i])
            if hi - lo <= tol:
                continue

            def along(t, i=i):
                y = x.copy()
                y[i] = t
                return f(y)

            t, ft = golden_section(along, lo, hi, tol)
            if ft > fx:
                moved[i] = abs(t - x[i])
                x[i], fx = t, ft
            edge = (t - lo < 2 * tol and lo > lower[i]) or (hi - t < 2 * tol and hi < upper[i])
            at_edge = at_edge or edge
            if not edge:
                h[i] = max(4.0 * moved[i], 10.0 * tol)
        if np.all(moved < tol) and not at_edge:
            break
    return x, fx


# ---------------------------------------------------------------------------
# coarse stage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RevenueHistogram:
    """Cell masses of a density on a regular mesh, for fast approximate revenue.

    Each cell is sampled at 2 x 2 midpoints; samples outside the support
    get zero weight and the total is normalized to one.  ``tails[j, i]`` is
    the mass of sample row j at x index >= i and ``below[j, i]`` sums
    ``tails`` over the rows under j.
    """

    xs: np.ndarray
    ys: np.ndarray
    tails: np.ndarray
    below: np.ndarray

    @classmethod
    def from_density(cls, density: Density, cells: int = HISTOGRAM_CELLS) -> "RevenueHistogram":
        h1, h2 = density.domain.box
        k = 2 * cells
        xs = (np.arange(k) + 0.5) * h1 / k
        ys = (np.arange(k) + 0.5) * h2 / k
        X, Y = np.meshgrid(xs, ys)
        inside = density.domain.contains(X, Y)
        with np.errstate(invalid="ignore", divide="ignore"):
            W = np.where(inside, density.pdf(X, Y), 0.0)
        W = np.where(np.isfinite(W), W, 0.0)
        W /= W.sum()
        tails = np.zeros((k, k + 1))
        tails[:, :k] = np.cumsum(W[:, ::-1], axis=1)[:, ::-1]
        below = np.zeros((k + 1, k + 1))
        below[1:] = np.cumsum(tails, axis=0)
        return cls(xs, ys, tails, below)

    def _both(self, s: np.ndarray, j2: int) -> np.ndarray:
        # mass with y index >= j2 and x + y >= s
        idx = np.searchsorted(self.xs, s[:, None] - self.ys[None, j2:], side="left")
        rows = np.arange(j2, len(self.ys))[None, :]
        return self.tails[rows, idx].sum(axis=1)

    def revenue_grid(self, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
        """Approximate revenue for all pairs; result has shape (len(p2), len(p1))."""
        p1 = np.asarray(p1, dtype=float)
        out = np.empty((len(p2), len(p1)))
        i1 = np.searchsorted(self.xs, p1, side="left")
        for j, q in enumerate(p2):
            j2 = int(np.searchsorted(self.ys, q, side="left"))
            one = self.below[j2, i1] if q > 0 else np.zeros_like(p1)
            s = p1 + q
            out[j] = p1 * one + s * self._both(s, j2)
        return out

    def revenue_pairs(self, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
        """Approximate revenue at the pairs (p1[k], p2[k])."""
        return np.array([self.revenue_grid(np.array([x]), [y])[0, 0] for x, y in zip(p1, p2)])


# ---------------------------------------------------------------------------
# deterministic optimization
# ---------------------------------------------------------------------------


def _exact(density: Density, p1: float, p2: float) -> float:
    return revenue_direct(density, DeterministicMechanism(max(p1, 0.0), max(p2, 0.0)))


def _polish(density: Density, p1: float, p2: float, ev: PhiEvaluator) -> tuple[float, float, float] | None:
    """Solve the first-order conditions from a searched point.

    Revenue is flat near its maximum, so searching on revenue alone leaves
    prices accurate only to about the square root of the revenue accuracy.
    The residuals vanish at the optimum and are accurate to quadrature
    tolerance.  Returns None unless the root stays in the same case and
    does not lose revenue.
    """
    try:
        case = check_necessary_conditions(density, p1, p2, ev).case
    except OnBoundary:
        return None

    def residuals(z):
        try:
            rep = check_necessary_conditions(density, float(z[0]), float(z[1]), ev)
        except OnBoundary:
            return [1.0, 1.0]
        return list(rep.residuals) if rep.case == case else [1.0, 1.0]

    sol = root(residuals, [p1, p2], method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(r) for r in residuals(sol.x)) > 1e-10:
        return None
    q1, q2 = float(sol.x[0]), float(sol.x[1])
    rev = _exact(density, q1, q2)
    if rev < _exact(density, p1, p2) - 1e-12:
        return None
    return q1, q2, rev


def optimize_deterministic(density: Density, coarse: int = COARSE_GRID, tol: float = PRICE_TOL) -> OptResult:
    """Best posted prices (p1 for one unit, p1 + p2 for both) for a DMV density."""
    if not density.domain.is_dmv:
        raise WrongOrientation("deterministic search covers the DMV support; use imv_bundle_price")
    a = density.a
    hist = RevenueHistogram.from_density(density)
    p1s = np.linspace(0.0, 1.0, coarse)
    p2s = np.linspace(0.0, a, coarse)
    table = hist.revenue_grid(p1s, p2s[1:])
    P1, P2 = np.meshgrid(p1s, p2s[1:])
    dp1, dp2 = p1s[1], p2s[1]

    bundle_prices = np.linspace(0.0, 1.0 + a, 2 * coarse)
    bundle_table = hist.revenue_grid(bundle_prices, np.array([0.0]))[0]

    candidates: list[Candidate] = []
    ev = PhiEvaluator(density)

    # bundle: one price for both units
    b0 = bundle_prices[int(np.argmax(bundle_table))]
    b, rb = golden_section(
        lambda t: _exact(density, t, 0.0),
        max(0.0, b0 - 2 * bundle_prices[1]),
        min(1.0 + a, b0 + 2 * bundle_prices[1]),
        tol,
    )
    candidates.append(Candidate(b, 0.0, rb, Regime.BUNDLE))

    # interior: 0 < p2 < a p1
    mask = P2 < a * P1
    if mask.any():
        k = np.argmax(np.where(mask, table, -np.inf))
        p1c, p2c = P1.flat[k], P2.flat[k]
        x, r = coordinate_ascent(
            lambda z: _exact(density, z[0], z[1] * a * z[0]),
            [p1c, p2c / (a * p1c)],
            [0.0, 0.0],
            [1.0, 1.0],
            [2 * dp1, 2 * dp2 / (a * p1c)],
            tol,
        )
        if BOUNDARY_SNAP < x[1] < 1.0 - BOUNDARY_SNAP and x[0] > BOUNDARY_SNAP:
            q1, q2 = x[0], x[1] * a * x[0]
            polished = _polish(density, q1, q2, ev)
            # a root on the p2 = 0 or p2 = a p1 boundary belongs to another regime
            if polished is not None and BOUNDARY_SNAP < polished[1] / (a * polished[0]) < 1.0 - BOUNDARY_SNAP:
                q1, q2, r = polished
            candidates.append(Candidate(q1, q2, r, Regime.INTERIOR))

    # the line p2 = a p1
    k = int(np.argmax(hist.revenue_pairs(p1s[1:], a * p1s[1:])))
    t0 = p1s[1 + k]
    t, r = golden_section(lambda t: _exact(density, t, a * t), max(0.0, t0 - 2 * dp1), min(1.0, t0 + 2 * dp1), tol)
    if t > 0:
        candidates.append(Candidate(t, a * t, r, Regime.SEPARATE_EDGE))

    # separate sales: a p1 < p2 <= a
    mask = (P2 > a * P1) & (P1 < 1.0)
    if mask.any():
        k = np.argmax(np.where(mask, table, -np.inf))
        p1c, p2c = P1.flat[k], P2.flat[k]
        span = a * (1.0 - p1c)

        def sep(z):
            return _exact(density, z[0], a * z[0] + z[1] * a * (1.0 - z[0]))

        x, r = coordinate_ascent(
            sep,
            [p1c, (p2c - a * p1c) / span],
            [0.0, 0.0],
            [1.0, 1.0],
            [2 * dp1, 2 * dp2 / span],
            tol,
        )
        if x[1] > BOUNDARY_SNAP:
            q1, q2 = x[0], a * x[0] + x[1] * a * (1.0 - x[0])
            polished = _polish(density, q1, q2, ev) if x[1] < 1.0 - BOUNDARY_SNAP else None
            if polished is not None and polished[0] < 1.0 and (
                BOUNDARY_SNAP < (polished[1] - a * polished[0]) / (a * (1.0 - polished[0])) < 1.0 - BOUNDARY_SNAP
            ):
                q1, q2, r = polished
            candidates.append(Candidate(q1, q2, r, Regime.SEPARATE_EDGE))

    best = max(candidates, key=lambda c: (c.revenue, c.p1, c.p2))
    foc = None
    if best.regime is Regime.INTERIOR or (
        best.regime is Regime.SEPARATE_EDGE and a * best.p1 < best.p2 < a and 0 < best.p1 < 1
    ):
        try:
            foc = check_necessary_conditions(density, best.p1, best.p2, ev).residuals
        except OnBoundary:
            foc = None
    return OptResult(DeterministicMechanism(best.p1, best.p2), best.revenue, best.regime, candidates, foc)


# ---------------------------------------------------------------------------
# first-order conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NecessaryReport:
    """Residuals of the first-order conditions at given prices.

    ``case`` is "interior" (a p1 > p2) or "separate" (a p1 < p2).  For the
    interior case the sign values are phi(p1, p2) (must be <= 0) and
    phi(p1, 0) (must be >= 0); they are None in the separate case.
    """

    case: str
    residuals: tuple[float, float]
    phi_at_prices: float | None = None
    phi_at_zero: float | None = None

    def signs_ok(self, tol: float = 1e-8) -> bool:
        if self.case != "interior":
            return True
        return self.phi_at_prices <= tol and self.phi_at_zero >= -tol

    def to_dict(self):
        return {
            "case": self.case,
            "residuals": list(self.residuals),
            "phi_at_prices": self.phi_at_prices,
            "phi_at_zero": self.phi_at_zero,
        }


def check_necessary_conditions(
    density: Density, p1: float, p2: float, ev: PhiEvaluator | None = None, tol: float = 1e-12
) -> NecessaryReport:
    """First-order conditions for optimal prices strictly inside the price domain."""
    a = density.a
    if not (0.0 < p1 < 1.0 and 0.0 < p2 < a):
        raise OnBoundary(f"prices ({p1}, {p2}) are not interior")
    if abs(a * p1 - p2) <= 1e-12:
        raise OnBoundary("a p1 = p2 lies between the regimes")
    if a * p1 < p2:
        m = Marginals(density)
        r1 = p1 - (1.0 - m.cdf1(p1)) / m.pdf1(p1)
        r2 = p2 - (1.0 - m.cdf2(p2)) / m.pdf2(p2)
        return NecessaryReport("separate", (float(r1), float(r2)))

    ev = ev or PhiEvaluator(density)
    alpha = (p1 + p2) / (1.0 + a)
    s = (1.0 + a) * alpha
    first = integrate_1d(lambda y: phi(ev, np.full_like(y, p1), y), 0.0, p2, tol=tol)
    second = integrate_1d(lambda y: phi(ev, s - y, y), p2, a * alpha, tol=tol)
    second += integrate_1d(lambda y: phi(ev, y / a, y), a * alpha, a, tol=tol)
    return NecessaryReport(
        "interior",
        (float(first), float(second)),
        float(phi(ev, p1, p2)),
        float(phi(ev, p1, 0.0)),
    )


# ---------------------------------------------------------------------------
# uniform closed forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformSolution:
    unbundled: tuple[float, float] | None
    bundle: float
    regime: Regime
    unbundled_revenue: float | None
    bundle_revenue: float

    def to_dict(self):
        return {
            "unbundled": None if self.unbundled is None else list(self.unbundled),
            "bundle": self.bundle,
            "regime": self.regime.value,
            "unbundled_revenue": self.unbundled_revenue,
            "bundle_revenue": self.bundle_revenue,
        }


def uniform_closed_form(a: float) -> UniformSolution:
    """Interior and bundle candidates for the uniform triangle, winner by revenue.

    The interior candidate exists for a >= 1/3 (its p2 is negative below).
    """
    if a <= 0:
        raise ValueError("a must be positive")
    density = UniformTriangle(a)
    bundle = math.sqrt((1.0 + a) / 3.0)
    rb = _exact(density, bundle, 0.0)
    p2 = (2.0 * a - math.sqrt(a * (1.0 + a))) / 3.0
    if p2 < 0:
        return UniformSolution(None, bundle, Regime.BUNDLE, None, rb)
    pair = (2.0 / 3.0, max(p2, 0.0))
    ru = _exact(density, *pair)
    regime = Regime.INTERIOR if ru > rb else Regime.BUNDLE
    return UniformSolution(pair, bundle, regime, ru, rb)


# ---------------------------------------------------------------------------
# IMV bundle price
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BundleResult:
    price: float
    revenue: float
    regular: bool
    residual: float

    def to_dict(self):
        return {"price": self.price, "revenue": self.revenue, "regular": self.regular, "residual": self.residual}


def imv_bundle_price(density: Density, n: int = 200) -> BundleResult:
    """Bundle price B = (1 - T(B)) / tau(B) for the sum w = v1 + v2.

    Regularity is checked as an increasing virtual value w - (1 - T)/tau on
    an interior grid.  Without it, w (1 - T(w)) is maximized directly: a
    grid scan followed by golden-section refinement to 1e-7.
    """
    dist = SumDistribution(density)
    w_max = dist.w_max
    ws = np.linspace(0.0, w_max, n + 1)[1:-1]
    T = np.asarray(dist.cdf(ws))
    tau = np.asarray(dist.pdf(ws))
    with np.errstate(divide="ignore", invalid="ignore"):
        virtual = ws - (1.0 - T) / tau
    ok = tau > 0
    regular = bool(ok.all() and np.all(np.diff(virtual) >= -1e-9))

    def resid(w):
        return w * dist.pdf(w) - (1.0 - dist.cdf(w))

    if regular:
        h = ws * tau - (1.0 - T)
        k = int(np.argmax(h >= 0)) if np.any(h >= 0) else None
        if k is not None and k > 0:
            price = brentq(resid, ws[k - 1], ws[k], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return BundleResult(price, price * (1.0 - dist.cdf(price)), True, float(abs(resid(price))))

    rev = ws * (1.0 - T)
    w0 = ws[int(np.argmax(rev))]
    step = ws[1] - ws[0]
    price, r = golden_section(lambda w: w * (1.0 - dist.cdf(w)), max(0.0, w0 - step), min(w_max, w0 + step))
    return BundleResult(price, r, regular, float(abs(resid(price))))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    param: float
    p1: float
    p2: float
    regime: Regime
    revenue: float

    def as_tuple(self):
        return (self.param, self.p1, self.p2, self.regime.value, self.revenue)


SWEEP_HEADER = ("param", "p1", "p2", "regime", "revenue")


def sweep(
    factory: Callable[[float], Density],
    lo: float,
    hi: float,
    n: int,
    map_fn: Callable = map,
) -> list[SweepRow]:
    """Optimize over ``n`` evenly spaced parameter values; ``factory`` builds each density."""
    if n < 2:
        raise ValueError("a sweep needs n >= 2")
    values = [float(v) for v in np.linspace(lo, hi, n)]

    def run(v):
        res = optimize_deterministic(factory(v))
        return SweepRow(v, res.best.p1, res.best.p2, res.regime, res.revenue)

    return list(map_fn(run, values))
