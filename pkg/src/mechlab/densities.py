"""Joint densities on the triangular type space and their one-dimensional bases.

Two orientations are supported.  With decreasing marginal values (DMV) the
support is ``{0 <= v1 <= 1, 0 <= v2 <= a*v1}``; with increasing marginal values
(IMV) it is ``{0 <= v2 <= 1, 0 <= v1 <= a*v2}``.  All evaluators are
vectorized over numpy arrays.
"""

from __future__ import annotations

import enum
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special

from .quadrature import (
    clip_polygon,
    endpoint_graded_rule,
    integrate_1d,
    integrate_1d_batch,
    integrate_polygon,
    polygon_area,
    triangle_edge_midpoint_rule,
)

NORMALIZATION_TOL = 1e-8
GRID_NORMALIZATION_TOL = 1e-3
FD_STEP = 1e-5
_EDGE = 1e-12


class DensityError(ValueError):
    """Malformed density specification."""


class BoundaryPoint(ValueError):
    """Gradient requested on the support boundary of a tabulated density."""


class Orientation(str, enum.Enum):
    DMV = "dmv"
    IMV = "imv"


@dataclass(frozen=True)
class Domain:
    orientation: Orientation
    a: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        if not (self.a > 0 and math.isfinite(self.a)):
            raise DensityError(f"slope parameter a must be positive, got {self.a}")

    @property
    def is_dmv(self) -> bool:
        return self.orientation is Orientation.DMV

    @property
    def box(self) -> tuple[float, float]:
        """Upper ends (v1_max, v2_max) of the bounding box."""
        return (1.0, self.a) if self.is_dmv else (self.a, 1.0)

    def contains(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        h1, h2 = self.box
        inside = (v1 >= -_EDGE) & (v2 >= -_EDGE) & (v1 <= h1 + _EDGE) & (v2 <= h2 + _EDGE)
        if self.is_dmv:
            return inside & (v2 <= self.a * v1 + _EDGE)
        return inside & (v1 <= self.a * v2 + _EDGE)

    def on_boundary(self, v1: float, v2: float) -> bool:
        h1, h2 = self.box
        edges = [v1, v2, h1 - v1, h2 - v2]
        edges.append(self.a * v1 - v2 if self.is_dmv else self.a * v2 - v1)
        return min(edges) <= _EDGE

    def polygon(self) -> list[tuple[float, float]]:
        a = self.a
        if self.is_dmv:
            return [(0.0, 0.0), (1.0, 0.0), (1.0, a)]
        return [(0.0, 0.0), (a, 1.0), (0.0, 1.0)]

    def project(self, v1, v2):
        """Nearest support point along v1 (DMV) or v2 (IMV); used to extend f continuously."""
        h1, h2 = self.box
        v1 = np.clip(v1, 0.0, h1)
        v2 = np.clip(v2, 0.0, h2)
        if self.is_dmv:
            return np.maximum(v1, v2 / self.a), v2
        return v1, np.maximum(v2, v1 / self.a)

    def sum_slice(self, w: float) -> tuple[float, float]:
        """Range of v1 on the segment {v1 + v2 = w} inside the support."""
        a = self.a
        if self.is_dmv:
            lo, hi = w / (1.0 + a), min(w, 1.0)
        else:
            lo, hi = max(0.0, w - 1.0), min(a, a * w / (1.0 + a))
        return lo, max(lo, hi)

    @property
    def max_share(self) -> float:
        """Supremum of v1 / (v1 + v2) over the support."""
        return 1.0 if self.is_dmv else self.a / (1.0 + self.a)


# ---------------------------------------------------------------------------
# one-dimensional base densities on [0, 1]
# ---------------------------------------------------------------------------


class BaseDensity(ABC):
    """A density g on [0, 1] with cdf G and elasticity x g'(x) / g(x)."""

    family: str = "custom"

    @abstractmethod
    def pdf(self, x): ...

    @abstractmethod
    def cdf(self, x): ...

    @abstractmethod
    def dpdf(self, x): ...

    def elasticity(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return x * self.dpdf(x) / self.pdf(x)

    def hazard(self, x):
        """g / (1 - G)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.pdf(x) / (1.0 - self.cdf(x))

    def int_pdf_over_x(self, lo):
        """Integral of g(x) / x over [lo, 1], vectorized in ``lo``."""
        lo = np.asarray(lo, dtype=float)
        x, w = endpoint_graded_rule()
        width = 1.0 - lo
        pts = lo[..., None] + width[..., None] * x
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = self.pdf(pts) / pts
        return width * np.sum(np.where(np.isfinite(vals), vals, 0.0) * w, axis=-1)

    def tail_product_at_one(self) -> float:
        """Limit of g(x) (1 - G(x)) as x -> 1; zero whenever g(1) is finite."""
        return 0.0

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class PowerBase(BaseDensity):
    """g(x) = alpha x^(alpha-1); alpha = 1 is the uniform density."""

    family = "power"

    def __init__(self, alpha: float = 1.0):
        if not alpha > 0:
            raise DensityError("power family needs alpha > 0")
        self.alpha = float(alpha)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.alpha == 1.0:
            return np.ones_like(x)
        with np.errstate(divide="ignore"):
            return self.alpha * np.power(x, self.alpha - 1.0)

    def cdf(self, x):
        return np.power(np.clip(np.asarray(x, dtype=float), 0.0, 1.0), self.alpha)

    def dpdf(self, x):
        x = np.asarray(x, dtype=float)
        al = self.alpha
        if al in (1.0, 2.0):
            return np.full_like(x, al * (al - 1.0))
        with np.errstate(divide="ignore"):
            return al * (al - 1.0) * np.power(x, al - 2.0)

    def elasticity(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.alpha - 1.0)

    def int_pdf_over_x(self, lo):
        lo = np.asarray(lo, dtype=float)
        al = self.alpha
        if al == 1.0:
            return -np.log(lo)
        return al / (al - 1.0) * (1.0 - np.power(lo, al - 1.0))

    def params(self):
        return {"alpha": self.alpha}


class ExponentialBase(BaseDensity):
    """Truncated exponential g(x) = lam e^(lam x) / (e^lam - 1)."""

    family = "exponential"

    def __init__(self, lam: float = 1.0):
        if lam == 0 or not math.isfinite(lam):
            raise DensityError("exponential family needs a finite lam != 0")
        self.lam = float(lam)
        self._norm = self.lam / math.expm1(self.lam)

    def pdf(self, x):
        return self._norm * np.exp(self.lam * np.asarray(x, dtype=float))

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return np.expm1(self.lam * x) / math.expm1(self.lam)

    def dpdf(self, x):
        return self.lam * self.pdf(x)

    def elasticity(self, x):
        return self.lam * np.asarray(x, dtype=float)

    def params(self):
        return {"lam": self.lam}


class BetaBase(BaseDensity):
    """Beta(alpha, beta) density, restricted to alpha >= 1 >= beta > 0."""

    family = "beta"

    def __init__(self, alpha: float = 2.0, beta: float = 1.0):
        if not (alpha >= 1.0 >= beta > 0.0):
            raise DensityError("beta family is restricted to alpha >= 1 >= beta > 0")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self._lognorm = special.betaln(self.alpha, self.beta)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(
                special.xlogy(self.alpha - 1.0, x)
                + special.xlog1py(self.beta - 1.0, -x)
                - self._lognorm
            )

    def cdf(self, x):
        return special.betainc(self.alpha, self.beta, np.clip(np.asarray(x, dtype=float), 0.0, 1.0))

    def elasticity(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.alpha - 1.0) - (self.beta - 1.0) * x / (1.0 - x)

    def dpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = (self.alpha - 1.0) / x - (self.beta - 1.0) / (1.0 - x)
            return self.pdf(x) * slope

    def int_pdf_over_x(self, lo):
        if self.alpha == 1.0:
            return super().int_pdf_over_x(lo)
        # g(x) / x is a Beta(alpha - 1, beta) kernel
        lo = np.clip(np.asarray(lo, dtype=float), 0.0, 1.0)
        scale = math.exp(special.betaln(self.alpha - 1.0, self.beta) - self._lognorm)
        return scale * special.betaincc(self.alpha - 1.0, self.beta, lo)

    def tail_product_at_one(self) -> float:
        # g ~ (1-x)^(b-1) / B and 1 - G ~ (1-x)^b / (b B) near x = 1
        if self.beta > 0.5:
            return 0.0
        if self.beta < 0.5:
            return math.inf
        return 1.0 / (self.beta * math.exp(2.0 * self._lognorm))

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


class CustomBase(BaseDensity):
    """User-supplied g; cdf by quadrature and g' by central differences when absent."""

    family = "custom"

    def __init__(
        self,
        pdf: Callable,
        cdf: Callable | None = None,
        dpdf: Callable | None = None,
        name: str = "custom",
    ):
        self._pdf = pdf
        self._cdf = cdf
        self._dpdf = dpdf
        self.name = name
        total = integrate_1d(lambda x: np.asarray(pdf(x), dtype=float), 0.0, 1.0)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DensityError(f"custom base density integrates to {total}, not 1")

    def pdf(self, x):
        return np.asarray(self._pdf(np.asarray(x, dtype=float)), dtype=float)

    def cdf(self, x):
        if self._cdf is not None:
            return np.asarray(self._cdf(np.asarray(x, dtype=float)), dtype=float)
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return integrate_1d_batch(self.pdf, np.zeros_like(x), x, panels=4)

    def dpdf(self, x):
        if self._dpdf is not None:
            return np.asarray(self._dpdf(np.asarray(x, dtype=float)), dtype=float)
        x = np.asarray(x, dtype=float)
        h = 1e-6
        return (self.pdf(x + h) - self.pdf(x - h)) / (2 * h)

    def params(self):
        return {"name": self.name}


BASE_FAMILIES: dict[str, type[BaseDensity]] = {
    "power": PowerBase,
    "uniform": PowerBase,
    "exponential": ExponentialBase,
    "beta": BetaBase,
}


def make_base(spec: dict | str | BaseDensity) -> BaseDensity:
    """Build a base density from ``{"family": ..., **params}`` or a family name."""
    if isinstance(spec, BaseDensity):
        return spec
    if isinstance(spec, str):
        spec = {"family": spec}
    spec = dict(spec)
    fam = spec.pop("family", None)
    if fam not in BASE_FAMILIES:
        raise DensityError(f"unknown base family {fam!r}")
    if fam == "uniform":
        spec = {}
    try:
        return BASE_FAMILIES[fam](**{k: float(v) for k, v in spec.items()})
    except TypeError as exc:
        raise DensityError(f"bad parameters for {fam}: {exc}") from None


# ---------------------------------------------------------------------------
# joint densities
# ---------------------------------------------------------------------------


class Density(ABC):
    """Joint density on a triangular :class:`Domain`.

    Subclasses implement ``_f`` and ``_grad`` on (at least) the closed support;
    the public evaluators mask everything outside the support to zero.
    """

    kind: str = "abstract"
    closed_form_phi: bool = False

    def __init__(self, domain: Domain):
        self.domain = domain

    @property
    def a(self) -> float:
        return self.domain.a

    @abstractmethod
    def _f(self, v1, v2): ...

    @abstractmethod
    def _grad(self, v1, v2): ...

    def pdf(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        inside = self.domain.contains(v1, v2)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = self._f(*self.domain.project(v1, v2))
        return np.where(inside, val, 0.0)

    def grad(self, v1, v2):
        """(df/dv1, df/dv2) evaluated with the interior formula."""
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            g1, g2 = self._grad(v1, v2)
        shape = np.broadcast(v1, v2).shape
        return np.broadcast_to(g1, shape).astype(float), np.broadcast_to(g2, shape).astype(float)

    def sch_integrand(self, v1, v2):
        """3 f + v . grad f."""
        g1, g2 = self.grad(v1, v2)
        return 3.0 * self.pdf(v1, v2) + v1 * g1 + v2 * g2

    def phi_closed_form(self, v1, v2):
        raise NotImplementedError(f"{self.kind} has no closed-form phi")

    def diagonal_integral_closed_form(self, v2):
        """Integral of phi(y/a, y) over [v2, a], where a closed form exists."""
        raise NotImplementedError

    def corner_slice_limit(self) -> float:
        """Limit of the line integral of f across the support near the far diagonal corner.

        The corner is (1, a) for DMV and (a, 1) for IMV; the slice runs across
        the support at fixed v2 (DMV) or fixed v1 (IMV).  The limit is zero
        for densities bounded near the corner; when it is positive the
        envelope revenue identity picks up a corner flux term.
        """
        return 0.0

    def mass(self, poly=None, tol: float = 1e-10) -> float:
        """Probability of a convex polygon (default: the whole support)."""
        support = self.domain.polygon()
        region = support if poly is None else intersect_convex(support, poly)
        return self.integrate_region(region, tol)

    def integrate_region(self, poly, tol: float = 1e-10) -> float:
        """Integral of f over a convex polygon inside the support."""
        return integrate_polygon(self.pdf, poly, tol=tol)

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {
            "orientation": self.domain.orientation.value,
            "a": self.a,
            "kind": self.kind,
            "params": self.params(),
        }

    def __repr__(self):
        return f"{type(self).__name__}(a={self.a}, {self.params()})"


def intersect_convex(p, q):
    """Intersection of two convex polygons (q given counter-clockwise or clockwise)."""
    out = list(p)
    m = len(q)
    orient = _signed_area(q)
    for k in range(m):
        (x0, y0), (x1, y1) = q[k], q[(k + 1) % m]
        # inward side of edge for a ccw polygon is the left side
        nx, ny = (y1 - y0), -(x1 - x0)
        if orient < 0:
            nx, ny = -nx, -ny
        out = clip_polygon(out, (nx, ny), nx * x0 + ny * y0)
        if not out:
            break
    return out


def _signed_area(poly):
    s = 0.0
    for k in range(len(poly)):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


class UniformTriangle(Density):
    """f = 2/a on the support."""

    kind = "uniform"
    closed_form_phi = True

    def __init__(self, a: float = 1.0, orientation: Orientation | str = Orientation.DMV):
        super().__init__(Domain(Orientation(orientation), a))

    def _f(self, v1, v2):
        return np.full(np.broadcast(v1, v2).shape, 2.0 / self.a)

    def _grad(self, v1, v2):
        z = np.zeros(np.broadcast(v1, v2).shape)
        return z, z

    def phi_closed_form(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        return np.broadcast_to((6.0 * v1 - 4.0) / self.a, np.broadcast(v1, v2).shape)

    def diagonal_integral_closed_form(self, v2):
        x = np.asarray(v2, dtype=float) / self.a
        return (1.0 - x) * (3.0 * x - 1.0)


class OrderedDecreasing(Density):
    """v1 = max(X1, X2), v2 = a min(X1, X2) with X_i iid ~ g."""

    kind = "ordered_decreasing"
    closed_form_phi = True

    def __init__(self, g: BaseDensity, a: float = 1.0):
        super().__init__(Domain(Orientation.DMV, a))
        self.g = make_base(g)

    def _f(self, v1, v2):
        return 2.0 / self.a * self.g.pdf(v1) * self.g.pdf(v2 / self.a)

    def _grad(self, v1, v2):
        g, a = self.g, self.a
        return (
            2.0 / a * g.dpdf(v1) * g.pdf(v2 / a),
            2.0 / a**2 * g.pdf(v1) * g.dpdf(v2 / a),
        )

    def phi_closed_form(self, v1, v2):
        g = self.g
        v1 = np.asarray(v1, dtype=float)
        y = np.asarray(v2, dtype=float) / self.a
        with np.errstate(divide="ignore", invalid="ignore"):
            bracket = v1 * g.pdf(v1) - (1.0 - g.cdf(v1)) * (2.0 + g.elasticity(y))
            return 2.0 / self.a * g.pdf(y) * bracket

    def diagonal_integral_closed_form(self, v2):
        x = np.asarray(v2, dtype=float) / self.a
        tail = 1.0 - self.g.cdf(x)
        with np.errstate(invalid="ignore"):
            return 2.0 * x * self.g.pdf(x) * tail - tail**2 - 2.0 * self.g.tail_product_at_one()

    def corner_slice_limit(self) -> float:
        # slice integral is (2/a) g(y) (1 - G(y)) at y = v2 / a
        return 2.0 / self.a * self.g.tail_product_at_one()

    def params(self):
        return {"g": self.g.to_dict()}


class ConditionalDecreasing(Density):
    """f = g1(v1) g2(v2) / (1 - G1(v2)) on 1 >= v1 >= v2 >= 0."""

    kind = "conditional_decreasing"
    closed_form_phi = True

    def __init__(self, g1: BaseDensity, g2: BaseDensity):
        super().__init__(Domain(Orientation.DMV, 1.0))
        self.g1 = make_base(g1)
        self.g2 = make_base(g2)

    def _tau(self, v2):
        return self.g2.pdf(v2) / (1.0 - self.g1.cdf(v2))

    def _f(self, v1, v2):
        return self.g1.pdf(v1) * self._tau(v2)

    def _grad(self, v1, v2):
        g1, g2 = self.g1, self.g2
        tail = 1.0 - g1.cdf(v2)
        d1 = g1.dpdf(v1) * g2.pdf(v2) / tail
        d2 = g1.pdf(v1) * (g2.dpdf(v2) * tail + g1.pdf(v2) * g2.pdf(v2)) / tail**2
        return d1, d2

    def gamma(self, v2):
        v2 = np.asarray(v2, dtype=float)
        return self.g2.elasticity(v2) + v2 * self.g1.hazard(v2)

    def phi_closed_form(self, v1, v2):
        g1 = self.g1
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._tau(v2) * (
                v1 * g1.pdf(v1) - (1.0 - g1.cdf(v1)) * (2.0 + self.gamma(v2))
            )

    def diagonal_integral_closed_form(self, v2):
        g2 = self.g2
        v2 = np.asarray(v2, dtype=float)
        return -((1.0 - g2.cdf(v2)) + g2.pdf(1.0) - v2 * g2.pdf(v2))

    def corner_slice_limit(self) -> float:
        # the slice at height v2 integrates to g2(v2) exactly
        return float(self.g2.pdf(1.0))

    def params(self):
        return {"g1": self.g1.to_dict(), "g2": self.g2.to_dict()}


class ScaleInvariant(Density):
    """f = g(v1) / v1 on 1 >= v1 >= v2 >= 0; phi does not depend on v2."""

    kind = "scale_invariant"
    closed_form_phi = True

    def __init__(self, g: BaseDensity):
        super().__init__(Domain(Orientation.DMV, 1.0))
        self.g = make_base(g)

    def _f(self, v1, v2):
        v1 = np.broadcast_to(v1, np.broadcast(v1, v2).shape)
        return np.where(v1 > 0, self.g.pdf(v1) / np.where(v1 > 0, v1, 1.0), 0.0)

    def _grad(self, v1, v2):
        v1 = np.broadcast_to(v1, np.broadcast(v1, v2).shape)
        d1 = self.g.dpdf(v1) / v1 - self.g.pdf(v1) / v1**2
        return d1, np.zeros_like(d1)

    def phi_closed_form(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        shape = np.broadcast(v1, v2).shape
        v1 = np.broadcast_to(v1, shape)
        return self.g.pdf(v1) - 2.0 * self.g.int_pdf_over_x(v1)

    def params(self):
        return {"g": self.g.to_dict()}


class OrderedIncreasing(Density):
    """v1 = a min(X1, X2), v2 = max(X1, X2) with X_i iid ~ g (IMV)."""

    kind = "ordered_increasing"

    def __init__(self, g: BaseDensity, a: float = 1.0):
        super().__init__(Domain(Orientation.IMV, a))
        self.g = make_base(g)

    def _f(self, v1, v2):
        return 2.0 / self.a * self.g.pdf(v1 / self.a) * self.g.pdf(v2)

    def _grad(self, v1, v2):
        g, a = self.g, self.a
        return (
            2.0 / a**2 * g.dpdf(v1 / a) * g.pdf(v2),
            2.0 / a * g.pdf(v1 / a) * g.dpdf(v2),
        )

    def corner_slice_limit(self) -> float:
        # slice at fixed v1 = a x integrates to (2/a) g(x) (1 - G(x))
        return 2.0 / self.a * self.g.tail_product_at_one()

    def params(self):
        return {"g": self.g.to_dict()}


class Example3IMV(Density):
    """f = (12/11)(2 - v1^2) on 0 <= v1 <= v2 <= 1."""

    kind = "example3"

    def __init__(self):
        super().__init__(Domain(Orientation.IMV, 1.0))

    def _f(self, v1, v2):
        return np.broadcast_to(12.0 / 11.0 * (2.0 - np.asarray(v1) ** 2), np.broadcast(v1, v2).shape)

    def _grad(self, v1, v2):
        d1 = np.broadcast_to(-24.0 / 11.0 * np.asarray(v1, dtype=float), np.broadcast(v1, v2).shape)
        return d1, np.zeros_like(d1)


def bilinear(values, box, v1, v2):
    """Bilinear interpolation of ``values[j, i]`` on the regular mesh over [0, box[0]] x [0, box[1]]."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n2, n1 = values.shape
    s = np.clip(v1 / (box[0] / (n1 - 1)), 0.0, n1 - 1)
    t = np.clip(v2 / (box[1] / (n2 - 1)), 0.0, n2 - 1)
    i = np.minimum(np.floor(s).astype(int), n1 - 2)
    j = np.minimum(np.floor(t).astype(int), n2 - 2)
    fs, ft = s - i, t - j
    V = values
    return (
        V[j, i] * (1 - fs) * (1 - ft)
        + V[j, i + 1] * fs * (1 - ft)
        + V[j + 1, i] * (1 - fs) * ft
        + V[j + 1, i + 1] * fs * ft
    )


class GridDensity(Density):
    """Tabulated density on a regular mesh over the bounding box.

    ``values[j, i]`` is f at (v1_i, v2_j); the mesh spans [0, v1_max] x
    [0, v2_max] with ``n1`` and ``n2`` points.  Values at nodes outside the
    support only feed the bilinear interpolation of cells cut by the diagonal.
    Gradients are central differences of the interpolant, so the accuracy is
    that of the mesh (the model assumes continuously differentiable f).
    """

    kind = "grid"

    def __init__(self, domain: Domain, values, check: bool = True):
        super().__init__(domain)
        vals = np.array(values, dtype=float)
        if vals.ndim != 2 or min(vals.shape) < 2:
            raise DensityError("grid values must be a 2-D array with at least 2x2 nodes")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise DensityError("grid values must be finite and nonnegative")
        self.values = vals
        self.values.setflags(write=False)
        self.n2, self.n1 = vals.shape
        h1, h2 = domain.box
        self.x = np.linspace(0.0, h1, self.n1)
        self.y = np.linspace(0.0, h2, self.n2)
        if check:
            X, Y = np.meshgrid(self.x, self.y)
            interior = domain.contains(X, Y) & ~_on_boundary_mask(domain, X, Y)
            if np.any(vals[interior] <= 0):
                raise DensityError("grid density must be strictly positive inside the support")
            total = self.total_mass()
            if abs(total - 1.0) > GRID_NORMALIZATION_TOL:
                raise DensityError(
                    f"grid density integrates to {total:.6g}; |integral - 1| exceeds "
                    f"{GRID_NORMALIZATION_TOL}"
                )

    def _f(self, v1, v2):
        return bilinear(self.values, self.domain.box, v1, v2)

    def _grad(self, v1, v2):
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        v1, v2 = np.broadcast_arrays(v1, v2)
        bad = ~self.domain.contains(v1, v2) | _on_boundary_mask(self.domain, v1, v2)
        if np.any(bad):
            k = np.flatnonzero(bad)[0]
            p = (float(v1.flat[k]), float(v2.flat[k]))
            raise BoundaryPoint(f"no analytic gradient at boundary point {p}")

        def central(lo1, lo2, hi1, hi2):
            lo1, lo2 = self.domain.project(lo1, lo2)
            hi1, hi2 = self.domain.project(hi1, hi2)
            dist = np.hypot(hi1 - lo1, hi2 - lo2)
            return (self._f(hi1, hi2) - self._f(lo1, lo2)) / dist

        return (
            central(v1 - FD_STEP, v2, v1 + FD_STEP, v2),
            central(v1, v2 - FD_STEP, v1, v2 + FD_STEP),
        )

    def total_mass(self) -> float:
        """Exact integral of the bilinear interpolant over the support."""
        return self._integrate_values(self.values)

    def _integrate_values(self, V) -> float:
        dom = self.domain
        x, y = self.x, self.y
        d1, d2 = x[1] - x[0], y[1] - y[0]
        X0, Y0 = np.meshgrid(x[:-1], y[:-1])
        X1, Y1 = X0 + d1, Y0 + d2
        # a cell is inside when its worst corner is inside
        if dom.is_dmv:
            inside = Y1 <= dom.a * X0 + 1e-14
            outside = Y0 >= dom.a * X1 - 1e-14
        else:
            inside = X1 <= dom.a * Y0 + 1e-14
            outside = X0 >= dom.a * Y1 - 1e-14
        corner_mean = 0.25 * (V[:-1, :-1] + V[:-1, 1:] + V[1:, :-1] + V[1:, 1:])
        total = float(np.sum(corner_mean[inside]) * d1 * d2)
        cut = ~inside & ~outside
        support = dom.polygon()
        for j, i in zip(*np.nonzero(cut)):
            cell = [(x[i], y[j]), (x[i] + d1, y[j]), (x[i] + d1, y[j] + d2), (x[i], y[j] + d2)]
            poly = intersect_convex(cell, support)
            for k in range(1, len(poly) - 1):
                tri = [poly[0], poly[k], poly[k + 1]]
                px, py, area = triangle_edge_midpoint_rule(tri)
                total += area * float(np.mean(bilinear(V, dom.box, px, py)))
        return total

    def integrate_region(self, poly, tol: float = 1e-10) -> float:
        """Exact integral of the interpolant over a convex polygon inside the support.

        Mesh cells lying inside the polygon contribute area times the mean of
        their corner values; cells crossing its boundary are clipped and
        integrated with the edge-midpoint rule, exact for bilinear functions.
        """
        if len(poly) < 3:
            return 0.0
        P = np.asarray(poly, dtype=float)
        x, y = self.x, self.y
        d1, d2 = x[1] - x[0], y[1] - y[0]
        i0 = max(int(np.floor(P[:, 0].min() / d1)), 0)
        i1 = min(int(np.ceil(P[:, 0].max() / d1)), self.n1 - 1)
        j0 = max(int(np.floor(P[:, 1].min() / d2)), 0)
        j1 = min(int(np.ceil(P[:, 1].max() / d2)), self.n2 - 1)
        if i1 <= i0 or j1 <= j0:
            return 0.0
        # outward half-planes n . p <= c of the (counterclockwise) polygon
        if _signed_area(poly) < 0:
            P = P[::-1]
        Q = np.roll(P, -1, axis=0)
        normals = np.column_stack([Q[:, 1] - P[:, 1], P[:, 0] - Q[:, 0]])
        offsets = np.sum(normals * P, axis=1)
        X, Y = np.meshgrid(x[i0 : i1 + 1], y[j0 : j1 + 1])
        slack = offsets[:, None, None] - (normals[:, 0, None, None] * X + normals[:, 1, None, None] * Y)
        scale = np.hypot(normals[:, 0], normals[:, 1])[:, None, None]
        node_in = np.all(slack >= -1e-13 * scale, axis=0)
        cell_in = node_in[:-1, :-1] & node_in[:-1, 1:] & node_in[1:, :-1] & node_in[1:, 1:]
        V = self.values[j0 : j1 + 1, i0 : i1 + 1]
        corner_mean = 0.25 * (V[:-1, :-1] + V[:-1, 1:] + V[1:, :-1] + V[1:, 1:])
        total = float(np.sum(corner_mean[cell_in])) * d1 * d2
        px, py, wts = [], [], []
        for jj, ii in zip(*np.nonzero(~cell_in)):
            cx, cy = x[i0 + ii], y[j0 + jj]
            piece = list(poly)
            for nrm, off in (((-1.0, 0.0), -cx), ((1.0, 0.0), cx + d1), ((0.0, -1.0), -cy), ((0.0, 1.0), cy + d2)):
                piece = clip_polygon(piece, nrm, off)
                if not piece:
                    break
            for k in range(1, len(piece) - 1):
                tx, ty, area = triangle_edge_midpoint_rule([piece[0], piece[k], piece[k + 1]])
                px.append(tx)
                py.append(ty)
                wts.append(np.full(3, area / 3.0))
        if px:
            vals = bilinear(self.values, self.domain.box, np.concatenate(px), np.concatenate(py))
            total += float(np.dot(np.concatenate(wts), vals))
        return total

    def params(self):
        return {"n1": self.n1, "n2": self.n2}

    def to_dict(self):
        d = super().to_dict()
        d["grid"] = {"n1": self.n1, "n2": self.n2, "values": self.values.ravel().tolist()}
        return d


def _on_boundary_mask(domain: Domain, X, Y):
    h1, h2 = domain.box
    diag = (domain.a * X - Y) if domain.is_dmv else (domain.a * Y - X)
    return (np.minimum.reduce([X, Y, h1 - X, h2 - Y, diag])) <= _EDGE


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def eval_f(density: Density, v) -> float:
    return float(density.pdf(v[0], v[1]))


def eval_grad_f(density: Density, v) -> tuple[float, float]:
    if not isinstance(density, GridDensity) and not density.domain.contains(v[0], v[1]):
        raise BoundaryPoint(f"{v} is outside the support")
    g1, g2 = density.grad(np.asarray(v[0], float), np.asarray(v[1], float))
    return float(g1), float(g2)


@dataclass(frozen=True)
class Marginals:
    """Marginal cdfs and pdfs of v1 and v2, vectorized over evaluation points."""

    density: Density

    def _strip(self, axis: int, upto: float):
        h1, h2 = self.density.domain.box
        if axis == 1:
            box = [(0.0, 0.0), (upto, 0.0), (upto, h2), (0.0, h2)]
        else:
            box = [(0.0, 0.0), (h1, 0.0), (h1, upto), (0.0, upto)]
        return box

    def _cdf(self, axis, x):
        h = self.density.domain.box[axis - 1]
        out = []
        for xi in np.atleast_1d(np.asarray(x, dtype=float)).ravel():
            if xi <= 0:
                out.append(0.0)
            elif xi >= h:
                out.append(1.0)
            else:
                out.append(self.density.mass(self._strip(axis, xi)))
        return np.reshape(out, np.shape(x)) if np.ndim(x) else out[0]

    def cdf1(self, x):
        return self._cdf(1, x)

    def cdf2(self, y):
        return self._cdf(2, y)

    def _pdf(self, axis, x):
        dom = self.density.domain
        a = dom.a
        out = []
        for xi in np.atleast_1d(np.asarray(x, dtype=float)).ravel():
            if axis == 1:
                lo, hi = (0.0, a * xi) if dom.is_dmv else (xi / a, 1.0)
                f = lambda s: self.density.pdf(np.full_like(s, xi), s)  # noqa: E731
            else:
                lo, hi = (xi / a, 1.0) if dom.is_dmv else (0.0, a * xi)
                f = lambda s: self.density.pdf(s, np.full_like(s, xi))  # noqa: E731
            out.append(integrate_1d(f, lo, hi, tol=1e-11) if hi > lo else 0.0)
        return np.reshape(out, np.shape(x)) if np.ndim(x) else out[0]

    def pdf1(self, x):
        return self._pdf(1, x)

    def pdf2(self, y):
        return self._pdf(2, y)


def marginal_cdfs(density: Density):
    """(F1, F2): marginal cdfs of v1 and v2 by nested quadrature."""
    m = Marginals(density)
    return m.cdf1, m.cdf2


@dataclass(frozen=True)
class SumDistribution:
    """Distribution of w = v1 + v2."""

    density: Density

    @property
    def w_max(self) -> float:
        return 1.0 + self.density.a

    def cdf(self, w):
        out = []
        for wi in np.atleast_1d(np.asarray(w, dtype=float)).ravel():
            if wi <= 0:
                out.append(0.0)
            elif wi >= self.w_max:
                out.append(1.0)
            else:
                half = clip_polygon(self.density.domain.polygon(), (1.0, 1.0), wi)
                out.append(integrate_polygon(self.density.pdf, half, tol=1e-11))
        return np.reshape(out, np.shape(w)) if np.ndim(w) else out[0]

    def pdf(self, w):
        out = []
        for wi in np.atleast_1d(np.asarray(w, dtype=float)).ravel():
            out.append(self.slice_mass(wi, None))
        return np.reshape(out, np.shape(w)) if np.ndim(w) else out[0]

    def slice_mass(self, w: float, v1_max: float | None) -> float:
        """Line integral of f along v1 + v2 = w, restricted to v1 <= v1_max."""
        if w <= 0 or w >= self.w_max:
            return 0.0
        lo, hi = self.density.domain.sum_slice(w)
        if v1_max is not None:
            hi = min(hi, v1_max)
        if hi <= lo:
            return 0.0
        return integrate_1d(lambda s: self.density.pdf(s, w - s), lo, hi, tol=1e-12)


def sum_distribution(density: Density):
    """(T, tau): cdf and density of v1 + v2."""
    s = SumDistribution(density)
    return s.cdf, s.pdf


def fosd_tilt(density: Density, theta: float, n: int = 201) -> Density:
    """Exponentially tilted density proportional to f(v) exp(theta (v1 + v2)).

    For theta > 0 the result is a :class:`GridDensity` on an ``n x n`` mesh
    that first-order stochastically dominates ``density``.  ``theta = 0`` is
    the identity and returns ``density`` unchanged.
    """
    if theta < 0:
        raise DensityError("tilt parameter must be nonnegative")
    if theta == 0:
        return density
    dom = density.domain
    h1, h2 = dom.box
    X, Y = np.meshgrid(np.linspace(0.0, h1, n), np.linspace(0.0, h2, n))
    P1, P2 = dom.project(X, Y)
    vals = density.pdf(P1, P2) * np.exp(theta * (P1 + P2))
    grid = GridDensity(dom, vals, check=False)
    total = grid.total_mass()
    return GridDensity(dom, vals / total, check=True)


# ---------------------------------------------------------------------------
# specification files
# ---------------------------------------------------------------------------

KINDS = (
    "uniform",
    "ordered_decreasing",
    "conditional_decreasing",
    "scale_invariant",
    "ordered_increasing",
    "example3",
    "grid",
)


def density_from_dict(spec: dict) -> Density:
    """Build a density from the JSON specification format."""
    if not isinstance(spec, dict):
        raise DensityError("density spec must be a JSON object")
    try:
        orientation = Orientation(str(spec.get("orientation", "dmv")).lower())
    except ValueError:
        raise DensityError(f"unknown orientation {spec.get('orientation')!r}") from None
    kind = spec.get("kind")
    a = float(spec.get("a", 1.0))
    params = spec.get("params") or {}
    if kind == "uniform":
        return UniformTriangle(a, orientation)
    if kind == "ordered_decreasing":
        _expect(orientation, Orientation.DMV, kind)
        return OrderedDecreasing(make_base(params.get("g", "uniform")), a)
    if kind == "conditional_decreasing":
        _expect(orientation, Orientation.DMV, kind)
        return ConditionalDecreasing(
            make_base(params.get("g1", "uniform")), make_base(params.get("g2", "uniform"))
        )
    if kind == "scale_invariant":
        _expect(orientation, Orientation.DMV, kind)
        return ScaleInvariant(make_base(params.get("g", "uniform")))
    if kind == "ordered_increasing":
        _expect(orientation, Orientation.IMV, kind)
        return OrderedIncreasing(make_base(params.get("g", "uniform")), a)
    if kind == "example3":
        _expect(orientation, Orientation.IMV, kind)
        return Example3IMV()
    if kind == "grid":
        grid = spec.get("grid")
        if not isinstance(grid, dict):
            raise DensityError("grid kind needs a 'grid' object")
        n1, n2 = int(grid["n1"]), int(grid["n2"])
        values = np.asarray(grid["values"], dtype=float)
        if values.size != n1 * n2:
            raise DensityError(f"grid has {values.size} values, expected n1*n2 = {n1 * n2}")
        return GridDensity(Domain(orientation, a), values.reshape(n2, n1))
    raise DensityError(f"unknown density kind {kind!r}; expected one of {KINDS}")


def _expect(got, want, kind):
    if got is not want:
        raise DensityError(f"{kind} densities live on the {want.value} domain")


def load_density(path: str | Path) -> Density:
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DensityError(f"{path}: invalid JSON ({exc})") from None
    return density_from_dict(spec)


def support_area(domain: Domain) -> float:
    return polygon_area(domain.polygon())
