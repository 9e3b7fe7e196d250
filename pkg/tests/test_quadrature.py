import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mechlab.quadrature import (
    clip_polygon,
    endpoint_graded_rule,
    gauss_legendre,
    graded_rule,
    integrate_1d,
    integrate_polygon,
    integrate_triangles,
    polygon_area,
    trapezoids,
)


class TestRules:
    def test_gauss_legendre_exact_for_polynomials(self):
        x, w = gauss_legendre(8)
        for k in range(16):
            np.testing.assert_allclose(np.dot(w, x**k), 1.0 / (k + 1), rtol=1e-13)

    def test_graded_rule_weights_sum_to_one(self):
        _, w = graded_rule(32)
        assert math.isclose(w.sum(), 1.0, rel_tol=1e-13)

    def test_graded_rule_handles_inverse_sqrt(self):
        x, w = graded_rule(64)
        # int_0^1 (1 - x)^(-1/2) dx = 2
        assert abs(np.dot(w, 1.0 / np.sqrt(1.0 - x)) - 2.0) < 1e-8

    def test_endpoint_graded_rule_log_singularity(self):
        x, w = endpoint_graded_rule(24, 30)
        # int_0^1 -log x dx = 1
        assert abs(np.dot(w, -np.log(x)) - 1.0) < 1e-12


class TestIntegrate1D:
    def test_smooth(self):
        assert abs(integrate_1d(np.sin, 0.0, math.pi) - 2.0) < 1e-12

    def test_kink_is_resolved_by_splitting(self):
        val = integrate_1d(lambda x: np.abs(x - 0.3), 0.0, 1.0, tol=1e-12)
        assert abs(val - (0.3**2 + 0.7**2) / 2) < 1e-10

    def test_empty_interval(self):
        assert integrate_1d(np.exp, 0.4, 0.4) == 0.0


class TestPolygons:
    def test_clip_keeps_halfplane(self):
        sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
        half = clip_polygon(sq, (1.0, 1.0), 1.0)
        assert math.isclose(polygon_area(half), 0.5)

    def test_clip_to_empty(self):
        assert clip_polygon([(0, 0), (1, 0), (0, 1)], (1.0, 0.0), -1.0) == []

    def test_trapezoid_decomposition_preserves_area(self):
        poly = [(0, 0), (2, 0.5), (1.5, 2), (0.2, 1.2)]
        total = sum(0.5 * (y1 - y0) * ((hi[0] - lo[0]) + (hi[1] - lo[1])) for y0, y1, lo, hi in trapezoids(poly))
        assert math.isclose(total, polygon_area(poly), rel_tol=1e-12)

    def test_polynomial_over_triangle(self):
        # int over {0 <= y <= x <= 1} of x y^2 = 1/15 (symbolic)
        val = integrate_polygon(lambda x, y: x * y**2, [(0, 0), (1, 0), (1, 1)], tol=1e-13)
        assert abs(val - 1.0 / 15.0) < 1e-13

    def test_singular_edge(self):
        # int_0^1 int_0^x (1 - x)^(-1/2) dy dx = int_0^1 x (1 - x)^(-1/2) dx = 4/3
        val = integrate_polygon(lambda x, y: 1.0 / np.sqrt(np.maximum(1.0 - x, 1e-300)), [(0, 0), (1, 0), (1, 1)])
        assert abs(val - 4.0 / 3.0) < 1e-7

    def test_triangle_rule_matches_adaptive(self):
        tris = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], dtype=float)
        f = lambda x, y: np.exp(x) * np.cos(y)  # noqa: E731
        expected = (math.e - 1) * math.sin(1)
        assert abs(integrate_triangles(f, tris, n=12) - expected) < 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 0.95),
    st.floats(0.05, 0.95),
    st.floats(-2.0, 2.0),
    st.floats(-2.0, 2.0),
)
def test_linear_function_over_clipped_square(cx, cy, gx, gy):
    """The integral of a linear function is area times its value at the centroid."""
    poly = clip_polygon([(0, 0), (1, 0), (1, 1), (0, 1)], (1.0, 1.0), cx + cy)
    area = polygon_area(poly)
    p = np.array(poly)
    # centroid of a polygon by the shoelace formula
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a6 = 3.0 * cross.sum()
    centroid = ((x + xn) @ cross / a6, (y + yn) @ cross / a6)
    expected = area * (1.0 + gx * centroid[0] + gy * centroid[1])
    got = integrate_polygon(lambda u, v: 1.0 + gx * u + gy * v, poly)
    assert abs(got - expected) < 1e-11
