"""Deterministic and step line mechanisms, their transforms, and revenue.

A line mechanism sells the first unit for sure to every type on the right
edge v1 = 1 and is pinned down by the buyer payoff u(1, v2) along that edge:

    u(1, v2) = (1 - t10) + int_0^v2 q2(1, y) dy,
    u(v1, v2) = max(0, u(1, v2) - (1 - v1)).

Here q2(1, .) is a right-continuous increasing step function given by
breakpoints ``(b_k, q_k)``: q2 = q_k on [b_k, b_{k+1}) and 0 before b_1.

Revenue is computed by three routes: the menu route integrates the
transfer over explicit best-response polygons, the phi route uses the
decomposition into the regions below and above the diagonal point a alpha,
and the payoff route evaluates the envelope identity from a payoff grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .densities import Density, Domain, Orientation, bilinear, intersect_convex
from .phi_sc import PhiEvaluator, WrongOrientation, phi
from .quadrature import (
    clip_polygon,
    integrate_1d,
    integrate_polygon,
    integrate_trapezoid,
    integrate_triangles,
)

ALPHA_TOL = 1e-12
TIE_TOL = 1e-12
REVENUE_TOL = 1e-11
MAX_STEPS = 64


class MechanismError(ValueError):
    """Invalid mechanism parameters."""


class BadCut(ValueError):
    """Straightening point outside (lower v2, a alpha]."""


@dataclass(frozen=True)
class MenuItem:
    q1: float
    q2: float
    t: float


NULL_ITEM = MenuItem(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DeterministicMechanism:
    """Posted prices: p1 for the first unit, p1 + p2 for both.

    p2 = 0 is a bundle at price p1.  Prices are not capped at the support so
    that bundle prices above the largest first value remain expressible.
    """

    p1: float
    p2: float

    def __post_init__(self):
        if not (math.isfinite(self.p1) and math.isfinite(self.p2)) or self.p1 < 0 or self.p2 < 0:
            raise MechanismError(f"prices must be finite and nonnegative, got ({self.p1}, {self.p2})")

    @property
    def is_bundle(self) -> bool:
        return self.p2 == 0.0

    def menu(self) -> list[MenuItem]:
        items = [MenuItem(1.0, 1.0, self.p1 + self.p2)]
        if not self.is_bundle:
            items.insert(0, MenuItem(1.0, 0.0, self.p1))
        return items

    def payoff(self, v1, v2):
        return best_response(self.menu(), v1, v2)[1]

    def to_line(self, a: float = 1.0) -> "StepLineMechanism":
        """The same mechanism as a line mechanism on the DMV support (needs p1 <= 1)."""
        if self.p1 > 1.0:
            raise MechanismError("a line mechanism needs p1 <= 1")
        steps = [(self.p2, 1.0)] if self.p2 <= a else []
        return StepLineMechanism(self.p1, tuple(steps), a)

    def to_dict(self):
        return {"kind": "deterministic", "p1": self.p1, "p2": self.p2}


@dataclass(frozen=True)
class StepLineMechanism:
    t10: float
    steps: tuple = ()
    a: float = 1.0

    def __post_init__(self):
        steps = tuple((float(b), float(q)) for b, q in self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "t10", float(self.t10))
        if not 0.0 <= self.t10 <= 1.0:
            raise MechanismError(f"t10 must lie in [0, 1], got {self.t10}")
        if len(steps) > MAX_STEPS:
            raise MechanismError(f"at most {MAX_STEPS} steps are supported")
        b = np.array([s[0] for s in steps])
        q = np.array([s[1] for s in steps])
        if steps:
            if b[0] < 0 or b[-1] > self.a or np.any(np.diff(b) <= 0):
                raise MechanismError("breakpoints must be strictly increasing in [0, a]")
            if q[0] < 0 or q[-1] > 1 or np.any(np.diff(q) <= 0):
                raise MechanismError("step levels must be strictly increasing in [0, 1]")
        # u(1, b_k) for each breakpoint
        u = [1.0 - self.t10]
        prev_b, prev_q = 0.0, 0.0
        for bk, qk in steps:
            u.append(u[-1] + prev_q * (bk - prev_b))
            prev_b, prev_q = bk, qk
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_u_at_b", np.array(u[1:]))

    # -- boundary functions --------------------------------------------------

    def q2_edge(self, v2):
        """q2(1, v2), right-continuous."""
        v2 = np.asarray(v2, dtype=float)
        k = np.searchsorted(self._b, v2, side="right") - 1
        out = np.where(k >= 0, self._q[np.maximum(k, 0)] if self._q.size else 0.0, 0.0)
        return out if out.ndim else float(out)

    def u_edge(self, v2):
        """u(1, v2)."""
        v2 = np.asarray(v2, dtype=float)
        k = np.searchsorted(self._b, v2, side="right") - 1
        if self._b.size == 0:
            out = np.full_like(v2, 1.0 - self.t10)
        else:
            kk = np.maximum(k, 0)
            on_step = self._u_at_b[kk] + self._q[kk] * (v2 - self._b[kk])
            out = np.where(k >= 0, on_step, 1.0 - self.t10)
        return out if out.ndim else float(out)

    def t_edge(self, v2):
        """t(1, v2) = 1 + v2 q2(1, v2) - u(1, v2); constant on each step."""
        v2 = np.asarray(v2, dtype=float)
        out = 1.0 + v2 * np.asarray(self.q2_edge(v2)) - np.asarray(self.u_edge(v2))
        return out if out.ndim else float(out)

    def payoff(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        out = np.maximum(0.0, np.asarray(self.u_edge(v2)) - (1.0 - v1))
        return out if out.ndim else float(out)

    def allocation(self, v1, v2):
        """(q1, q2, t) at v: the outcome of (1, v2) when it is individually rational."""
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        buys = np.asarray(self.u_edge(v2)) - (1.0 - v1) >= 0.0
        q2 = np.where(buys, self.q2_edge(v2), 0.0)
        t = np.where(buys, self.t_edge(v2), 0.0)
        return buys.astype(float), q2, t

    def menu(self) -> list[MenuItem]:
        items = []
        if self._b.size == 0 or self._b[0] > 0:
            items.append(MenuItem(1.0, 0.0, self.t10))
        for bk, qk in self.steps:
            items.append(MenuItem(1.0, qk, float(self.t_edge(bk))))
        return items

    def breakpoints(self) -> np.ndarray:
        return self._b.copy()

    def to_dict(self):
        return {"kind": "line", "t10": self.t10, "steps": [list(s) for s in self.steps], "a": self.a}


Mechanism = Union[DeterministicMechanism, StepLineMechanism]


def payoff_line(m: StepLineMechanism, v) -> float:
    return float(m.payoff(v[0], v[1]))


def best_response(menu: Sequence[MenuItem], v1, v2):
    """Seller-favorable best response over ``menu`` plus the null item.

    Returns (item index or -1 for null, payoff, transfer) arrays.  Among
    items within ``TIE_TOL`` of the best payoff the highest transfer wins.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    items = [NULL_ITEM] + list(menu)
    q1 = np.array([it.q1 for it in items])
    q2 = np.array([it.q2 for it in items])
    t = np.array([it.t for it in items])
    pay = v1[..., None] * q1 + v2[..., None] * q2 - t
    best = pay.max(axis=-1, keepdims=True)
    near = pay >= best - TIE_TOL
    choice = np.argmax(np.where(near, t, -np.inf), axis=-1)
    return choice - 1, best[..., 0], t[choice]


# ---------------------------------------------------------------------------
# alpha, diagnostics and the no-trade boundary
# ---------------------------------------------------------------------------


def alpha_of(m: StepLineMechanism) -> float:
    """Fixed point alpha = 1 - u(1, a alpha), by bisection on [0, 1]."""
    lo, hi = 0.0, 1.0
    if m.u_edge(0.0) >= 1.0:
        return 0.0
    while hi - lo > ALPHA_TOL:
        mid = 0.5 * (lo + hi)
        if mid + m.u_edge(m.a * mid) - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class MechanismDiagnostics:
    alpha: float
    v2_lower: float
    v2_upper: float
    qbar2: float
    is_constrained: bool
    is_semi_deterministic: bool

    def to_dict(self):
        return dict(self.__dict__)


def _close(x, y, tol=1e-12):
    return abs(x - y) <= tol


def diagnostics(m: StepLineMechanism) -> MechanismDiagnostics:
    """alpha, the support of the random second-unit region, and class membership.

    The lower point is inf{v2 : q2(1, v2) > 0} and the upper point is
    sup{v2 : q2(1, v2) < 1}, both taken over [0, a] with inf of the empty set = a.
    """
    alpha = alpha_of(m)
    a = m.a
    b, q = m._b, m._q
    pos = np.nonzero(q > 0)[0]
    lower = float(b[pos[0]]) if pos.size else a
    full = np.nonzero(q >= 1.0)[0]
    upper = float(b[full[0]]) if full.size else a
    cut = a * alpha
    if alpha > 0:
        qbar = float(m.q2_edge(np.nextafter(cut, -np.inf)))
    else:
        qbar = 0.0
    q_at = float(m.q2_edge(cut))
    above = [qk for bk, qk in m.steps if bk > cut]
    cond_i = _close(q_at, qbar) and all(_close(qk, qbar) or _close(qk, 1.0) for qk in above)
    constrained = cond_i or _close(q_at, 1.0)
    levels = set(float(x) for x in q)
    if m._b.size == 0 or m._b[0] > 0:
        levels.add(0.0)
    semi = constrained and all(
        _close(x, 0.0) or _close(x, q_at) or _close(x, 1.0) for x in levels
    )
    return MechanismDiagnostics(alpha, lower, upper, qbar, constrained, semi)


def z0_boundary(m: StepLineMechanism, n: int = 101) -> np.ndarray:
    """Sampled boundary {(1 - u(1, v2), v2) : 0 <= v2 <= a alpha} of the no-trade region."""
    if n < 2:
        raise ValueError("need at least two boundary points")
    alpha = alpha_of(m)
    v2 = np.linspace(0.0, m.a * alpha, n)
    return np.column_stack([1.0 - np.asarray(m.u_edge(v2)), v2])


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def straighten(m: StepLineMechanism, v2s: float) -> StepLineMechanism:
    """Flatten u(1, .) below ``v2s``: u^s(1, v2) = max(u(1, v2), u(1, v2s))."""
    d = diagnostics(m)
    if not (d.v2_lower < v2s <= m.a * d.alpha + ALPHA_TOL):
        raise BadCut(f"cut {v2s} outside ({d.v2_lower}, {m.a * d.alpha}]")
    t10 = 1.0 - float(m.u_edge(v2s))
    q_here = float(m.q2_edge(v2s))
    steps = [(v2s, q_here)] + [(b, q) for b, q in m.steps if b > v2s]
    return StepLineMechanism(min(max(t10, 0.0), 1.0), tuple(steps), m.a)


def cover(m: StepLineMechanism) -> StepLineMechanism:
    """Project onto a semi-deterministic shape below a alpha; unchanged above."""
    alpha = alpha_of(m)
    cut = m.a * alpha
    q_star = float(m.q2_edge(cut))
    t_star = float(m.t_edge(cut))
    above = [(b, q) for b, q in m.steps if b > cut]
    if q_star <= 0.0:
        return StepLineMechanism(m.t10, tuple(above), m.a)
    c = (t_star - m.t10) / q_star
    c = min(max(c, 0.0), cut)
    return StepLineMechanism(m.t10, ((c, q_star),) + tuple(above), m.a)


# ---------------------------------------------------------------------------
# random mechanisms for property checks
# ---------------------------------------------------------------------------


def random_line_mechanism(
    rng: np.random.Generator,
    a: float = 1.0,
    max_steps: int = 5,
    constrained: bool = True,
    t10_range: tuple[float, float] = (0.3, 1.0),
) -> StepLineMechanism:
    """Draw a valid step line mechanism with a positive second-unit level below a alpha.

    With ``constrained`` the steps above a alpha are replaced by one of the
    admissible shapes: keep the level reached at a alpha, jump to 1 later, or
    jump to 1 exactly at a alpha.
    """
    while True:
        t10 = float(rng.uniform(*t10_range))
        k = int(rng.integers(1, max_steps + 1))
        b = np.sort(rng.uniform(0.0, a, size=k))
        if rng.random() < 0.25:
            b[0] = 0.0
        q = np.sort(rng.uniform(0.02, 0.98, size=k))
        if np.any(np.diff(b) <= 1e-9) or np.any(np.diff(q) <= 1e-9):
            continue
        m = StepLineMechanism(t10, tuple(zip(b, q)), a)
        if not constrained:
            return m
        alpha = alpha_of(m)
        cut = a * alpha
        below = tuple((bk, qk) for bk, qk in m.steps if bk < cut)
        if alpha <= 0 or not below:
            continue
        qbar = below[-1][1]
        choice = rng.integers(3)
        if choice == 1 and cut < a:
            c = float(rng.uniform(cut, a))
            if c > cut:
                below = below + ((c, 1.0),)
        elif choice == 2:
            below = below + ((cut, 1.0),)
        out = StepLineMechanism(t10, below, a)
        if qbar > 0 and diagnostics(out).is_constrained:
            return out


# ---------------------------------------------------------------------------
# revenue
# ---------------------------------------------------------------------------


def _region(support, menu, k):
    """Polygon of types choosing item k (index into ``[NULL] + menu``)."""
    items = [NULL_ITEM] + list(menu)
    me = items[k]
    poly = list(support)
    for j, other in enumerate(items):
        if j == k or not poly:
            continue
        # payoff_other - payoff_me <= 0
        n1 = other.q1 - me.q1
        n2 = other.q2 - me.q2
        poly = clip_polygon(poly, (n1, n2), other.t - me.t)
    return poly


def menu_revenue(density: Density, menu: Sequence[MenuItem], tol: float = REVENUE_TOL) -> float:
    """Expected transfer under the best response to ``menu``, region by region."""
    menu = _dedupe(menu)
    support = density.domain.polygon()
    total = 0.0
    for k, item in enumerate(menu, start=1):
        if item.t == 0.0:
            continue
        poly = _region(support, menu, k)
        if len(poly) >= 3:
            total += item.t * integrate_polygon(density.pdf, poly, tol=tol)
    return total


def _dedupe(menu):
    seen = {}
    for it in menu:
        key = (it.q1, it.q2)
        if key not in seen or it.t < seen[key].t:
            seen[key] = it
    return list(seen.values())


def revenue_direct(density: Density, mechanism: Mechanism, tol: float = REVENUE_TOL) -> float:
    if isinstance(mechanism, StepLineMechanism) and not density.domain.is_dmv:
        raise WrongOrientation("line mechanisms live on the DMV support")
    return menu_revenue(density, mechanism.menu(), tol)


def revenue_lemma4(
    density: Density,
    m: StepLineMechanism | DeterministicMechanism,
    ev: PhiEvaluator | None = None,
    tol: float = REVENUE_TOL,
) -> float:
    """Revenue through phi: below a alpha the region right of the no-trade
    boundary; above it the whole strip plus a diagonal payoff-weighted term."""
    if not density.domain.is_dmv:
        raise WrongOrientation("the phi decomposition applies to DMV densities")
    if isinstance(m, DeterministicMechanism):
        m = m.to_line(density.a)
    ev = ev or PhiEvaluator(density)
    a = density.a
    cut = a * alpha_of(m)
    f = lambda x, y: np.asarray(phi(ev, x, y))  # noqa: E731
    knots = np.unique(np.concatenate([[0.0, cut], m.breakpoints()]))
    knots = knots[(knots >= 0.0) & (knots <= cut)]
    below = 0.0
    for y0, y1 in zip(knots[:-1], knots[1:]):
        lo = (1.0 - float(m.u_edge(y0)), 1.0 - float(m.u_edge(np.nextafter(y1, -np.inf))))
        below += integrate_trapezoid(f, y0, y1, lo, (1.0, 1.0), tol=tol)
    strip = integrate_trapezoid(f, cut, a, (cut / a, 1.0), (1.0, 1.0), tol=tol) if cut < a else 0.0
    knots = np.unique(np.concatenate([[cut, a], m.breakpoints()]))
    knots = knots[(knots >= cut) & (knots <= a)]
    diag = 0.0
    for y0, y1 in zip(knots[:-1], knots[1:]):
        diag += integrate_1d(
            lambda y: np.asarray(m.payoff(y / a, y)) * f(y / a, y), y0, y1, tol=tol
        )
    return below + strip + diag + corner_flux(density, m)


def corner_flux(density: Density, mechanism) -> float:
    """Revenue carried by the far diagonal corner when f is unbounded there.

    Equals (corner coordinate) x u(corner) x the limiting slice integral of f;
    zero for densities bounded near the corner.
    """
    lim = density.corner_slice_limit()
    if lim == 0.0:
        return 0.0
    a = density.a
    if density.domain.is_dmv:
        return a * float(mechanism.payoff(1.0, a)) * lim
    return a * float(mechanism.payoff(a, 1.0)) * lim


@dataclass
class PayoffGrid:
    """Payoffs on a regular mesh over the bounding box; ``values[j, i]`` at (v1_i, v2_j)."""

    domain: Domain
    values: np.ndarray = field(repr=False)

    @classmethod
    def from_function(cls, domain: Domain, func, n: int) -> "PayoffGrid":
        h1, h2 = domain.box
        X, Y = np.meshgrid(np.linspace(0.0, h1, n), np.linspace(0.0, h2, n))
        P1, P2 = domain.project(X, Y)
        return cls(domain, np.asarray(func(P1, P2), dtype=float))

    def __call__(self, v1, v2):
        return bilinear(self.values, self.domain.box, v1, v2)


def revenue_from_payoff_grid(density: Density, u: PayoffGrid) -> float:
    """Envelope identity: boundary term along the top/right edge minus
    the integral of u (3 f + v . grad f) over the support."""
    dom = density.domain
    a = dom.a
    if dom.is_dmv:
        edge = integrate_1d(lambda y: u(np.ones_like(y), y) * density.pdf(np.ones_like(y), y), 0.0, a)
    else:
        edge = integrate_1d(lambda x: u(x, np.ones_like(x)) * density.pdf(x, np.ones_like(x)), 0.0, a)
    n2, n1 = u.values.shape
    h1, h2 = dom.box
    xs = np.linspace(0.0, h1, n1)
    ys = np.linspace(0.0, h2, n2)
    tris = _mesh_triangles(dom, xs, ys)

    def integrand(x, y):
        return u(x, y) * density.sch_integrand(x, y)

    lim = density.corner_slice_limit()
    corner = a * float(u(*((1.0, a) if dom.is_dmv else (a, 1.0)))) * lim if lim else 0.0
    return edge - integrate_triangles(integrand, tris, n=4) + corner


def _mesh_triangles(dom: Domain, xs, ys) -> np.ndarray:
    """Triangles covering support cells; cut cells are clipped to the support."""
    support = dom.polygon()
    d1, d2 = xs[1] - xs[0], ys[1] - ys[0]
    X0, Y0 = np.meshgrid(xs[:-1], ys[:-1])
    X1, Y1 = X0 + d1, Y0 + d2
    if dom.is_dmv:
        inside = Y1 <= dom.a * X0 + 1e-14
        outside = Y0 >= dom.a * X1 - 1e-14
    else:
        inside = X1 <= dom.a * Y0 + 1e-14
        outside = X0 >= dom.a * Y1 - 1e-14
    x0, y0, x1, y1 = X0[inside], Y0[inside], X1[inside], Y1[inside]
    lower = np.stack([np.stack([x0, y0], -1), np.stack([x1, y0], -1), np.stack([x1, y1], -1)], 1)
    upper = np.stack([np.stack([x0, y0], -1), np.stack([x1, y1], -1), np.stack([x0, y1], -1)], 1)
    tris = [lower, upper]
    cut = ~inside & ~outside
    extra = []
    for cx, cy in zip(X0[cut], Y0[cut]):
        cell = [(cx, cy), (cx + d1, cy), (cx + d1, cy + d2), (cx, cy + d2)]
        poly = intersect_convex(cell, support)
        for k in range(1, len(poly) - 1):
            extra.append([poly[0], poly[k], poly[k + 1]])
    if extra:
        tris.append(np.asarray(extra, dtype=float))
    return np.concatenate(tris, axis=0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def mechanism_from_dict(spec: dict, a: float | None = None) -> Mechanism:
    kind = spec.get("kind")
    if kind == "deterministic":
        return DeterministicMechanism(float(spec["p1"]), float(spec["p2"]))
    if kind == "line":
        slope = float(spec.get("a", a if a is not None else 1.0))
        steps = tuple((float(b), float(q)) for b, q in spec.get("steps", []))
        return StepLineMechanism(float(spec["t10"]), steps, slope)
    raise MechanismError(f"unknown mechanism kind {kind!r}")


__all__ = [
    "BadCut",
    "DeterministicMechanism",
    "MechanismDiagnostics",
    "MechanismError",
    "MenuItem",
    "PayoffGrid",
    "StepLineMechanism",
    "alpha_of",
    "best_response",
    "corner_flux",
    "cover",
    "diagnostics",
    "mechanism_from_dict",
    "menu_revenue",
    "payoff_line",
    "random_line_mechanism",
    "revenue_direct",
    "revenue_from_payoff_grid",
    "revenue_lemma4",
    "straighten",
    "z0_boundary",
    "Orientation",
]
