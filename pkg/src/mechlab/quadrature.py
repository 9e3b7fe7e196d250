"""Gauss-Legendre quadrature on intervals, trapezoids and convex polygons.

All integrands are vectorized: they receive numpy arrays and must return an
array of the same shape.  Two-dimensional integrands take ``(v1, v2)``.
"""

from __future__ import annotations

import heapq
import itertools
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

DEFAULT_NODES = 64
DEFAULT_TOL = 1e-9
MAX_DEPTH = 14
REL_FLOOR = 1e-14

Point = tuple[float, float]
Polygon = list[Point]


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel(func, lo, hi, n):
    x, w = gauss_legendre(n)
    return (hi - lo) * np.dot(w, func(lo + (hi - lo) * x))


def integrate_1d(
    func: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    tol: float = DEFAULT_TOL,
    n: int = DEFAULT_NODES,
    max_depth: int = MAX_DEPTH,
) -> float:
    """Adaptive composite Gauss-Legendre integral of ``func`` over [lo, hi].

    A panel is accepted when the single-panel estimate and the sum over its
    two halves agree to ``tol``; otherwise both halves are refined with
    ``tol / 2``.  At ``max_depth`` the refined estimate is returned as is.
    """
    if hi == lo:
        return 0.0
    whole = _panel(func, lo, hi, n)
    return _adapt_1d(func, lo, hi, whole, tol, n, max_depth)


def _adapt_1d(func, lo, hi, whole, tol, n, depth):
    mid = 0.5 * (lo + hi)
    left = _panel(func, lo, mid, n)
    right = _panel(func, mid, hi, n)
    est = left + right
    # halved tolerances stop below the resolution of the estimate itself
    if abs(est - whole) <= max(tol, REL_FLOOR * abs(est)) or depth <= 0:
        return est
    return _adapt_1d(func, lo, mid, left, tol / 2, n, depth - 1) + _adapt_1d(
        func, mid, hi, right, tol / 2, n, depth - 1
    )


@lru_cache(maxsize=32)
def graded_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule pulled through the smoothstep map s -> 3s^2 - 2s^3.

    The map has zero slope at both ends, which makes integrable endpoint
    singularities of type (1 - x)^(-1/2) smooth in the new variable; milder
    singularities (1 - x)^(b - 1) with 1/2 < b < 1 become t^(2b - 1), which
    the adaptive drivers still have to resolve by subdivision.
    """
    s, w = gauss_legendre(n)
    return s * s * (3.0 - 2.0 * s), w * 6.0 * s * (1.0 - s)


@lru_cache(maxsize=8)
def endpoint_graded_rule(levels: int = 24, left_levels: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on [0, 1] with panels halving toward both ends.

    Each panel uses :func:`graded_rule` with 16 nodes.  Suited to integrands
    with weak singularities at x = 1 or steep growth near x = 0.
    """
    s, w = graded_rule(16)
    left = 0.5 ** np.arange(left_levels, 0, -1)
    right = 1.0 - 0.5 ** np.arange(2, levels + 1)
    edges = np.concatenate([[0.0], left, right, [1.0]])
    widths = np.diff(edges)
    x = (edges[:-1, None] + widths[:, None] * s[None, :]).ravel()
    return x, (widths[:, None] * w[None, :]).ravel()


def integrate_1d_batch(
    func: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    n: int = DEFAULT_NODES,
    panels: int = 1,
    graded: bool = False,
) -> np.ndarray:
    """Fixed composite rule over many intervals at once.

    ``func`` receives an array of shape ``lo.shape + (panels * n,)``.  With
    ``graded`` each panel uses :func:`graded_rule`, which tolerates
    inverse-square-root singularities at the panel ends.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x, w = graded_rule(n) if graded else gauss_legendre(n)
    edges = np.linspace(0.0, 1.0, panels + 1)
    s = (edges[:-1, None] + (edges[1:] - edges[:-1])[:, None] * x[None, :]).ravel()
    ws = np.tile(w, panels) / panels
    width = hi - lo
    pts = lo[..., None] + width[..., None] * s
    return width * np.sum(func(pts) * ws, axis=-1)


# ---------------------------------------------------------------------------
# two dimensions
# ---------------------------------------------------------------------------


def _trapezoid_estimate(func, y0, y1, lo0, lo1, hi0, hi1, n):
    x, w = graded_rule(n)
    ys = y0 + (y1 - y0) * x
    lo = lo0 + (lo1 - lo0) * x
    hi = hi0 + (hi1 - hi0) * x
    width = hi - lo
    xs = lo[:, None] + width[:, None] * x[None, :]
    vals = func(xs, np.broadcast_to(ys[:, None], xs.shape))
    # a node rounding onto an integrable singularity carries no mass
    vals = np.where(np.isfinite(vals), vals, 0.0)
    inner = width * (vals @ w)
    return (y1 - y0) * np.dot(w, inner)


MAX_PIECES = 400


def _quarter(piece):
    # halve in v2, then split each half along its v1 midline
    y0, y1, lo, hi = piece
    ym = 0.5 * (y0 + y1)
    lom = 0.5 * (lo[0] + lo[1])
    him = 0.5 * (hi[0] + hi[1])
    parts = []
    for ya, yb, la, lb, ha, hb in (
        (y0, ym, lo[0], lom, hi[0], him),
        (ym, y1, lom, lo[1], him, hi[1]),
    ):
        ca, cb = 0.5 * (la + ha), 0.5 * (lb + hb)
        parts.append((ya, yb, (la, lb), (ca, cb)))
        parts.append((ya, yb, (ca, cb), (ha, hb)))
    return parts


def _estimate(func, piece, n):
    y0, y1, lo, hi = piece
    return _trapezoid_estimate(func, y0, y1, lo[0], lo[1], hi[0], hi[1], n)


def integrate_trapezoid(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    y0: float,
    y1: float,
    lo: tuple[float, float],
    hi: tuple[float, float],
    tol: float = DEFAULT_TOL,
    n: int = DEFAULT_NODES,
    max_pieces: int = MAX_PIECES,
) -> float:
    """Integrate over {y0 <= v2 <= y1, lo(v2) <= v1 <= hi(v2)}.

    ``lo`` and ``hi`` give the v1 bounds at v2 = y0 and v2 = y1; both are
    linear in between.  Globally adaptive: the piece whose quartering changed
    the estimate most is refined next, until the summed change is below
    ``tol`` or ``max_pieces`` refinements have been made.
    """
    if y1 <= y0:
        return 0.0
    heap = []
    order = itertools.count()

    def refine(piece, coarse):
        parts = _quarter(piece)
        ests = [_estimate(func, p, n) for p in parts]
        fine = sum(ests)
        heapq.heappush(heap, (-abs(fine - coarse), next(order), fine, parts, ests))

    root = (y0, y1, tuple(lo), tuple(hi))
    refine(root, _estimate(func, root, n))
    for _ in range(max_pieces):
        if sum(-h[0] for h in heap) <= tol:
            break
        _, _, _, parts, ests = heapq.heappop(heap)
        for p, e in zip(parts, ests):
            refine(p, e)
    return float(sum(h[2] for h in heap))


def clip_polygon(poly: Sequence[Point], normal: Point, offset: float) -> Polygon:
    """Sutherland-Hodgman clip of a convex polygon to {x : normal.x <= offset}."""
    nx, ny = normal
    out: Polygon = []
    if not poly:
        return out
    if nx == 0.0 and ny == 0.0:
        return list(poly) if offset >= 0.0 else []
    m = len(poly)
    for k in range(m):
        p = poly[k]
        q = poly[(k + 1) % m]
        sp = nx * p[0] + ny * p[1] - offset
        sq = nx * q[0] + ny * q[1] - offset
        if sp <= 0.0:
            out.append(p)
        if (sp < 0.0 < sq) or (sq < 0.0 < sp):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def polygon_area(poly: Sequence[Point]) -> float:
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for k in range(len(poly)):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return 0.5 * abs(s)


def _boundary_lines(poly: Sequence[Point], y: float):
    """Left and right edges crossing height ``y`` as (x0, y0, x1, y1)."""
    hits = []
    m = len(poly)
    for k in range(m):
        (x0, y0), (x1, y1) = poly[k], poly[(k + 1) % m]
        if y0 != y1 and min(y0, y1) < y < max(y0, y1):
            t = (y - y0) / (y1 - y0)
            hits.append((x0 + t * (x1 - x0), (x0, y0, x1, y1)))
    hits.sort(key=lambda h: h[0])
    return hits[0][1], hits[-1][1]


def _x_on(edge, y):
    x0, y0, x1, y1 = edge
    return x0 + (y - y0) / (y1 - y0) * (x1 - x0)


def trapezoids(poly: Sequence[Point]):
    """Split a convex polygon into horizontal slabs.

    Yields ``(y0, y1, (lo0, lo1), (hi0, hi1))`` tuples suitable for
    :func:`integrate_trapezoid`.
    """
    if len(poly) < 3 or polygon_area(poly) <= 1e-300:
        return
    ys = sorted({p[1] for p in poly})
    for y0, y1 in zip(ys[:-1], ys[1:]):
        if y1 - y0 <= 1e-15:
            continue
        left, right = _boundary_lines(poly, 0.5 * (y0 + y1))
        yield y0, y1, (_x_on(left, y0), _x_on(left, y1)), (_x_on(right, y0), _x_on(right, y1))


def integrate_polygon(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    poly: Sequence[Point],
    tol: float = DEFAULT_TOL,
    n: int = DEFAULT_NODES,
    max_pieces: int = MAX_PIECES,
) -> float:
    """Integral of ``func(v1, v2)`` over a convex polygon."""
    pieces = list(trapezoids(poly))
    if not pieces:
        return 0.0
    t = tol / len(pieces)
    return sum(integrate_trapezoid(func, *pc, tol=t, n=n, max_pieces=max_pieces) for pc in pieces)


def triangle_edge_midpoint_rule(tri: Sequence[Point]) -> tuple[np.ndarray, np.ndarray, float]:
    """Three-point rule, exact for quadratics: edge midpoints with weight area/3."""
    p = np.asarray(tri, dtype=float)
    mids = 0.5 * (p + np.roll(p, -1, axis=0))
    return mids[:, 0], mids[:, 1], polygon_area(tri)


def integrate_triangles(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray], tris: np.ndarray, n: int = 4
) -> float:
    """Sum of integrals over many triangles, each by a collapsed n x n product rule.

    ``tris`` has shape (k, 3, 2).  The map (s, t) -> p0 + s (p1 - p0) + s t (p2 - p1)
    sends the unit square onto the triangle with Jacobian 2 A s.
    """
    tris = np.asarray(tris, dtype=float)
    if tris.size == 0:
        return 0.0
    x, w = gauss_legendre(n)
    S, T = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) * S
    p0, p1, p2 = tris[:, 0, :], tris[:, 1, :], tris[:, 2, :]
    e1, e2 = p1 - p0, p2 - p1
    twice_area = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    px = p0[:, 0, None, None] + S * e1[:, 0, None, None] + S * T * e2[:, 0, None, None]
    py = p0[:, 1, None, None] + S * e1[:, 1, None, None] + S * T * e2[:, 1, None, None]
    vals = func(px, py)
    return float(np.sum(twice_area * np.sum(vals * W, axis=(1, 2))))
