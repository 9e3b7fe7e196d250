"""The guidepost function phi and single-crossing checks.

For a DMV density,

    phi(v1, v2) = f(1, v2) - int_{v1}^1 [3 f + x f_x + v2 f_y](x, v2) dx.

Its horizontal derivative is ``3 f + v . grad f``, so SC-H is the statement
that phi is nondecreasing in v1.  SC-V asks that phi(v1, .) changes sign at
most once, from + to -, as v2 increases, and SC-D asks the same (from - to +)
of the diagonal integral I(v2) = int_{v2}^a phi(y/a, y) dy.

The grid checks are sound for refutation only: a Holds verdict is evidence,
not proof, and cannot see violations on sets of measure zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .densities import (
    BaseDensity,
    ConditionalDecreasing,
    Density,
    DensityError,
    GridDensity,
    Orientation,
    make_base,
)
from .quadrature import endpoint_graded_rule, gauss_legendre, integrate_1d

SIGN_TOL = 1e-10
DEFAULT_SC_GRID = 401
CONDITION_GRID = 1001
MAX_WITNESSES = 20
ALMOST_ALL_NOTE = (
    "grid scan: violations confined to sets of measure zero are invisible, "
    "and a Holds verdict is numerical evidence rather than proof"
)


class WrongOrientation(ValueError):
    """Operation defined only for the other orientation."""


class DivisionByZero(ZeroDivisionError):
    pass


class ZeroDensitySlice(ValueError):
    """The density of v1 + v2 vanishes at the requested w."""


class PhiMode(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"


class Verdict(str, enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class PhiEvaluator:
    density: Density
    mode: PhiMode | None = None
    levels: int = 24

    def __post_init__(self):
        if self.mode is None:
            auto = PhiMode.CLOSED_FORM if self.density.closed_form_phi else PhiMode.QUADRATURE
            object.__setattr__(self, "mode", auto)
        object.__setattr__(self, "mode", PhiMode(self.mode))
        if self.mode is PhiMode.CLOSED_FORM and not self.density.closed_form_phi:
            raise ValueError(f"{self.density.kind} has no closed-form phi")

    def __call__(self, v1, v2):
        return phi(self, v1, v2)


def _require_dmv(density: Density):
    if density.domain.orientation is not Orientation.DMV:
        raise WrongOrientation("phi is defined for DMV densities only")


def phi(ev: PhiEvaluator | Density, v1, v2):
    """Evaluate phi at (v1, v2); vectorized over broadcastable arrays."""
    if isinstance(ev, Density):
        ev = PhiEvaluator(ev)
    _require_dmv(ev.density)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if ev.mode is PhiMode.CLOSED_FORM:
        out = ev.density.phi_closed_form(v1, v2)
    else:
        out = _phi_quadrature(ev.density, v1, v2, ev.levels)
    return out if out.ndim else float(out)


def _phi_quadrature(density: Density, v1, v2, levels: int):
    # Integrating x f_x by parts gives the equivalent form
    #   phi = v1 f(v1, v2) - int_{v1}^1 [2 f + v2 f_y](x, v2) dx,
    # which stays finite when f blows up along v1 = 1.
    v1, v2 = np.broadcast_arrays(v1, v2)
    x, w = endpoint_graded_rule(levels)
    width = 1.0 - v1
    pts = v1[..., None] + width[..., None] * x
    y = np.broadcast_to(v2[..., None], pts.shape)
    f = density.pdf(pts, y)
    _, fy = density.grad(pts, y)
    with np.errstate(invalid="ignore"):
        integrand = 2.0 * f + y * fy
    integrand = np.where(np.isfinite(integrand), integrand, 0.0)
    tail = width * np.sum(integrand * w, axis=-1)
    with np.errstate(invalid="ignore"):
        head = np.where(width > 0, v1 * density.pdf(v1, v2), 0.0)
    edge = density.pdf(np.ones_like(v2), v2)
    return np.where(width > 0, head - tail, edge)


def diagonal_integral(ev: PhiEvaluator | Density, v2):
    """I(v2) = integral of phi(y/a, y) for y in [v2, a]."""
    if isinstance(ev, Density):
        ev = PhiEvaluator(ev)
    _require_dmv(ev.density)
    d = ev.density
    v2 = np.asarray(v2, dtype=float)
    if ev.mode is PhiMode.CLOSED_FORM:
        try:
            return d.diagonal_integral_closed_form(v2)
        except NotImplementedError:
            pass
    a = d.a
    flat = np.atleast_1d(v2).ravel()
    vals = [
        integrate_1d(lambda y: np.asarray(phi(ev, y / a, y)), float(t), a, tol=1e-10)
        for t in flat
    ]
    out = np.reshape(vals, v2.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ConditionResult:
    verdict: Verdict
    witnesses: list = field(default_factory=list)
    violations: int = 0
    worst: float = 0.0

    def to_dict(self):
        return {
            "verdict": self.verdict.value,
            "violations": self.violations,
            "worst_violation": self.worst,
            "witnesses": self.witnesses,
        }


@dataclass
class SCReport:
    sch: Verdict | None
    scv: Verdict | None
    scd: Verdict | None
    witnesses: list
    grid_resolution: int
    tolerance: float
    details: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def verdicts(self) -> dict:
        out = {}
        for name in ("sch", "scv", "scd"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    @property
    def holds(self) -> bool:
        return all(v is Verdict.HOLDS for v in self.verdicts().values())

    def to_dict(self):
        return {
            "verdicts": {k: v.value for k, v in self.verdicts().items()},
            "holds": self.holds,
            "witnesses": self.witnesses,
            "grid_resolution": self.grid_resolution,
            "tolerance": self.tolerance,
            "details": {k: v.to_dict() for k, v in self.details.items()},
            "metadata": self.metadata,
        }


def _verdict(magnitudes: np.ndarray, tol: float) -> Verdict:
    if magnitudes.size == 0:
        return Verdict.HOLDS
    if np.all(magnitudes <= 10.0 * tol):
        return Verdict.INCONCLUSIVE
    return Verdict.FAILS


def _pt(*xs):
    return [float(x) for x in xs]


def scan_points(density: Density, n: int):
    """Cell-centred interior points: one column per first-axis cell.

    DMV columns are indexed by v1 and run over v2 in (0, a v1); IMV columns
    are indexed by v2 and run over v1 in (0, a v2).  Returns (v1, v2) arrays
    of shape (n, n), row = column index, second axis = position along it.
    """
    c = (np.arange(n) + 0.5) / n
    outer = c[:, None]
    inner = density.a * outer * c[None, :]
    if density.domain.is_dmv:
        return np.broadcast_to(outer, inner.shape), inner
    return inner, np.broadcast_to(outer, inner.shape)


def check_sch(ev: PhiEvaluator | Density, n: int = DEFAULT_SC_GRID, tol: float = SIGN_TOL):
    """SC-H as the pointwise sign of 3 f + v . grad f on the scan grid."""
    density = ev.density if isinstance(ev, PhiEvaluator) else ev
    V1, V2 = scan_points(density, n)
    vals = _sch_values(density, V1, V2)
    bad = vals < -tol
    mags = -vals[bad]
    witnesses = []
    for i, k in list(zip(*np.nonzero(bad)))[:MAX_WITNESSES]:
        v1, v2 = V1[i, k], V2[i, k]
        wit = {"condition": "sch", "points": [_pt(v1, v2)], "values": _pt(vals[i, k])}
        if density.domain.is_dmv:
            # the local decrease of phi across the cell is the pair witness
            h = 0.5 / n
            lo = max(v1 - h, v2 / density.a)
            hi = min(v1 + h, 1.0)
            pev = ev if isinstance(ev, PhiEvaluator) else PhiEvaluator(density)
            wit["pair"] = {"points": [_pt(lo, v2), _pt(hi, v2)], "phi": _pt(phi(pev, lo, v2), phi(pev, hi, v2))}
        witnesses.append(wit)
    worst = float(mags.max()) if mags.size else 0.0
    return ConditionResult(_verdict(mags, tol), witnesses, int(bad.sum()), worst)


def _sch_values(density: Density, V1, V2):
    if isinstance(density, GridDensity):
        # finite differences of the interpolant, evaluated row by row
        return np.vstack([density.sch_integrand(V1[i], V2[i]) for i in range(V1.shape[0])])
    return density.sch_integrand(V1, V2)


def check_scv(ev: PhiEvaluator | Density, n: int = DEFAULT_SC_GRID, tol: float = SIGN_TOL):
    """SC-V: along each v1 column, phi goes from + to - at most once as v2 rises."""
    ev = ev if isinstance(ev, PhiEvaluator) else PhiEvaluator(ev)
    _require_dmv(ev.density)
    V1, V2 = scan_points(ev.density, n)
    vals = np.asarray(phi(ev, V1, V2))
    # smallest phi seen strictly earlier in the column
    run_min = np.minimum.accumulate(vals, axis=1)
    prev_min = np.concatenate([np.full((n, 1), np.inf), run_min[:, :-1]], axis=1)
    amount = np.minimum(-prev_min, vals)
    bad = (prev_min < -tol) & (vals > tol)
    mags = amount[bad]
    witnesses = []
    for i, k in list(zip(*np.nonzero(bad)))[:MAX_WITNESSES]:
        j = int(np.argmin(vals[i, :k]))
        witnesses.append(
            {
                "condition": "scv",
                "points": [_pt(V1[i, j], V2[i, j]), _pt(V1[i, k], V2[i, k])],
                "values": _pt(vals[i, j], vals[i, k]),
            }
        )
    worst = float(mags.max()) if mags.size else 0.0
    return ConditionResult(_verdict(mags, tol), witnesses, int(bad.sum()), worst)


def diagonal_profile(ev: PhiEvaluator, n: int):
    """(v2, I(v2)) at cell centres v2 = a (k + 0.5) / n."""
    d = ev.density
    a = d.a
    v2 = a * (np.arange(n) + 0.5) / n
    if ev.mode is PhiMode.CLOSED_FORM:
        try:
            return v2, np.asarray(d.diagonal_integral_closed_form(v2), dtype=float)
        except NotImplementedError:
            pass
    # cumulative Gauss-Legendre from the top end down
    edges = np.append(v2, a)
    x, w = gauss_legendre(16)
    lo, hi = edges[:-1], edges[1:]
    ys = lo[:, None] + (hi - lo)[:, None] * x[None, :]
    pieces = (hi - lo) * (np.asarray(phi(ev, ys / a, ys)) @ w)
    return v2, np.cumsum(pieces[::-1])[::-1]


def check_scd(ev: PhiEvaluator | Density, n: int = DEFAULT_SC_GRID, tol: float = SIGN_TOL):
    """SC-D: I(v2) goes from - to + at most once as v2 rises."""
    ev = ev if isinstance(ev, PhiEvaluator) else PhiEvaluator(ev)
    _require_dmv(ev.density)
    v2, vals = diagonal_profile(ev, n)
    run_max = np.maximum.accumulate(vals)
    prev_max = np.concatenate([[-np.inf], run_max[:-1]])
    amount = np.minimum(prev_max, -vals)
    bad = (prev_max > tol) & (vals < -tol)
    mags = amount[bad]
    witnesses = []
    for k in np.nonzero(bad)[0][:MAX_WITNESSES]:
        j = int(np.argmax(vals[:k]))
        witnesses.append(
            {"condition": "scd", "points": [_pt(v2[j]), _pt(v2[k])], "values": _pt(vals[j], vals[k])}
        )
    worst = float(mags.max()) if mags.size else 0.0
    return ConditionResult(_verdict(mags, tol), witnesses, int(bad.sum()), worst)


CONDITIONS = ("sch", "scv", "scd")


def check_sc(
    ev: PhiEvaluator | Density,
    n: int = DEFAULT_SC_GRID,
    tol: float = SIGN_TOL,
    conditions=CONDITIONS,
) -> SCReport:
    """Run the requested single-crossing checks (only SC-H applies to IMV)."""
    density = ev.density if isinstance(ev, PhiEvaluator) else ev
    conditions = tuple(conditions)
    unknown = set(conditions) - set(CONDITIONS)
    if unknown:
        raise ValueError(f"unknown conditions {sorted(unknown)}")
    if not density.domain.is_dmv and set(conditions) - {"sch"}:
        raise WrongOrientation("SC-V and SC-D are defined for DMV densities only")
    checks = {"sch": check_sch, "scv": check_scv, "scd": check_scd}
    details = {c: checks[c](ev, n, tol) for c in CONDITIONS if c in conditions}
    witnesses = [w for c in CONDITIONS if c in details for w in details[c].witnesses]
    meta = {"caveat": ALMOST_ALL_NOTE, "scan": "cell-centred interior points"}
    if isinstance(ev, PhiEvaluator):
        meta["phi_mode"] = ev.mode.value
    return SCReport(
        sch=details["sch"].verdict if "sch" in details else None,
        scv=details["scv"].verdict if "scv" in details else None,
        scd=details["scd"].verdict if "scd" in details else None,
        witnesses=witnesses,
        grid_resolution=n,
        tolerance=tol,
        details=details,
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# ordered and conditional decreasing values
# ---------------------------------------------------------------------------


def ordered_w(v1, v2, g: BaseDensity, a: float = 1.0):
    """W(v1, v2) = v1 - (1 - G(v1)) / g(v1) [2 + eta_g(v2 / a)]."""
    g = make_base(g)
    v1 = np.asarray(v1, dtype=float)
    gv = g.pdf(v1)
    if np.any(gv == 0):
        raise DivisionByZero("g vanishes at an evaluation point")
    out = v1 - (1.0 - g.cdf(v1)) / gv * (2.0 + g.elasticity(np.asarray(v2, dtype=float) / a))
    return out if np.ndim(out) else float(out)


def g_min(v2, g: BaseDensity, a: float = 1.0):
    """Density of v2 = a min(X1, X2)."""
    x = np.asarray(v2, dtype=float) / a
    return 2.0 / a * g.pdf(x) * (1.0 - g.cdf(x))


def ordered_wmin(v2, g: BaseDensity, a: float = 1.0):
    """W_min(v2) = (1/a^2) [v2 - (1 - G_min(v2)) / g_min(v2)]."""
    g = make_base(g)
    v2 = np.asarray(v2, dtype=float)
    gm = g_min(v2, g, a)
    if np.any(gm == 0):
        raise DivisionByZero("g_min vanishes at an evaluation point")
    tail_min = (1.0 - g.cdf(v2 / a)) ** 2
    out = (v2 - tail_min / gm) / a**2
    return out if np.ndim(out) else float(out)


@dataclass
class ConditionReport:
    sch: Verdict
    scv: Verdict
    scd: Verdict
    checks: dict
    grid_resolution: int
    tolerance: float
    sufficient_only: bool = False

    @property
    def holds(self) -> bool:
        return all(v is Verdict.HOLDS for v in (self.sch, self.scv, self.scd))

    def verdicts(self) -> dict:
        return {"sch": self.sch, "scv": self.scv, "scd": self.scd}

    def to_dict(self):
        return {
            "verdicts": {k: v.value for k, v in self.verdicts().items()},
            "holds": self.holds,
            "checks": self.checks,
            "grid_resolution": self.grid_resolution,
            "tolerance": self.tolerance,
            "sufficient_only": self.sufficient_only,
        }


def _min_verdict(worst: float, tol: float) -> Verdict:
    """Verdict for an inequality whose most negative slack is ``worst``."""
    if worst >= -tol:
        return Verdict.HOLDS
    return Verdict.INCONCLUSIVE if worst >= -10.0 * tol else Verdict.FAILS


def _crossing_verdict(vals: np.ndarray, tol: float, downward: bool) -> tuple[Verdict, float]:
    """Single sign change along the last axis: + to - if ``downward`` else - to +."""
    s = vals if downward else -vals
    run_min = np.minimum.accumulate(s, axis=-1)
    prev = np.concatenate([np.full(s.shape[:-1] + (1,), np.inf), run_min[..., :-1]], axis=-1)
    bad = (prev < -tol) & (s > tol)
    mags = np.minimum(-prev, s)[bad]
    worst = float(mags.max()) if mags.size else 0.0
    return _verdict(mags, tol), worst


def check_ordered_conditions(
    g: BaseDensity, a: float = 1.0, n: int = CONDITION_GRID, tol: float = SIGN_TOL
) -> ConditionReport:
    """Equivalent conditions for the ordered decreasing values model.

    SC-H holds iff eta_g >= -3/2; SC-V iff W(v1, .) crosses zero at most once
    from above; SC-D iff W_min crosses zero at most once from below.  The two
    crossing tests use sign-equivalent forms free of divisions.
    """
    g = make_base(g)
    x = (np.arange(n) + 0.5) / n
    eta = g.elasticity(x)
    slack = float(np.min(eta + 1.5))
    sch = _min_verdict(slack, tol)

    # g(v1) W(v1, v2) on columns v1 = x_i, v2 / a = x_i * x_k
    v1 = x[:, None]
    y = x[:, None] * x[None, :]
    gw = v1 * g.pdf(v1) - (1.0 - g.cdf(v1)) * (2.0 + g.elasticity(y))
    scv, scv_worst = _crossing_verdict(gw, tol, downward=True)

    # g_min W_min a^2 / (1 - G) = 2 x g(x) - (1 - G(x)) for x = v2 / a
    tail = 1.0 - g.cdf(x)
    wm = 2.0 * x * g.pdf(x) * tail - tail**2
    scd, scd_worst = _crossing_verdict(wm, tol, downward=False)
    checks = {
        "eta_min": float(np.min(eta)),
        "sch_slack": slack,
        "scv_worst": scv_worst,
        "scd_worst": scd_worst,
    }
    return ConditionReport(sch, scv, scd, checks, n, tol)


def check_conditional_conditions(
    g1: BaseDensity, g2: BaseDensity, n: int = CONDITION_GRID, tol: float = SIGN_TOL
) -> ConditionReport:
    """Sufficient conditions for the conditional decreasing values model.

    SC-H if eta_g1(v1) + eta_g2(v2) >= -3 on v1 >= v2; SC-V if
    gamma = eta_g2 + v2 g1 / (1 - G1) is increasing and eta_g2 >= -2; SC-D if
    eta_g2 >= -2.  A Fails verdict here means the sufficient condition fails,
    not that single crossing fails.
    """
    g1 = make_base(g1)
    g2 = make_base(g2)
    x = (np.arange(n) + 0.5) / n
    e1 = g1.elasticity(x)
    e2 = g2.elasticity(x)
    # min over v1 >= v2 of eta_g1(v1), as a suffix minimum
    suffix_min = np.minimum.accumulate(e1[::-1])[::-1]
    h_slack = float(np.min(suffix_min + e2 + 3.0))
    d_slack = float(np.min(e2 + 2.0))
    gamma = ConditionalDecreasing(g1, g2).gamma(x)
    incr_slack = float(np.min(np.diff(gamma))) if n > 1 else 0.0
    checks = {
        "sch_slack": h_slack,
        "eta_g2_plus_2_min": d_slack,
        "gamma_min_increment": incr_slack,
    }
    sch = _min_verdict(h_slack, tol)
    scd = _min_verdict(d_slack, tol)
    scv_incr = _min_verdict(incr_slack, tol)
    order = [Verdict.HOLDS, Verdict.INCONCLUSIVE, Verdict.FAILS]
    scv = max(scd, scv_incr, key=order.index)
    return ConditionReport(sch, scv, scd, checks, n, tol, sufficient_only=True)


# ---------------------------------------------------------------------------
# conditional share distribution on sum slices
# ---------------------------------------------------------------------------


def hh_conditional_cdf(density: Density, c: float, w: float, tol: float = 1e-12) -> float:
    """Pr[s <= c | v1 + v2 = w] for the normalized share s = v1 / (w s_max).

    ``s_max`` is the largest share of the first value on the support (1 for
    DMV, a / (1 + a) for IMV), so s ranges over [0, 1] in both orientations.
    The probability is a ratio of line integrals of f along v1 + v2 = w.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in [0, 1]")
    dom = density.domain
    lo, hi = dom.sum_slice(w)
    slice_f = lambda s: density.pdf(s, w - s)  # noqa: E731
    total = integrate_1d(slice_f, lo, hi, tol=tol) if hi > lo else 0.0
    if not total > 0.0:
        raise ZeroDensitySlice(f"density of v1 + v2 vanishes at w = {w}")
    cut = min(max(c * dom.max_share * w, lo), hi)
    part = integrate_1d(slice_f, lo, cut, tol=tol) if cut > lo else 0.0
    return float(part / total)


__all__ = [
    "PhiEvaluator",
    "PhiMode",
    "SCReport",
    "Verdict",
    "WrongOrientation",
    "DivisionByZero",
    "ZeroDensitySlice",
    "phi",
    "diagonal_integral",
    "check_sch",
    "check_scv",
    "check_scd",
    "check_sc",
    "ordered_w",
    "ordered_wmin",
    "g_min",
    "check_ordered_conditions",
    "check_conditional_conditions",
    "hh_conditional_cdf",
    "DensityError",
]
