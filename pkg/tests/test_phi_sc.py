import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechlab.densities import (
    ConditionalDecreasing,
    Example3IMV,
    OrderedDecreasing,
    UniformTriangle,
    make_base,
)
from mechlab.phi_sc import (
    PhiEvaluator,
    PhiMode,
    Verdict,
    WrongOrientation,
    ZeroDensitySlice,
    check_conditional_conditions,
    check_ordered_conditions,
    check_sc,
    diagonal_integral,
    g_min,
    hh_conditional_cdf,
    ordered_w,
    ordered_wmin,
    phi,
)

from conftest import interior_points

ORDERED_BASES = [
    {"family": "power", "alpha": 1.0},
    {"family": "power", "alpha": 2.0},
    {"family": "exponential", "lam": 1.5},
    {"family": "beta", "alpha": 2.0, "beta": 0.5},
]


class TestUniformPhi:
    # f = 2 on {v2 <= v1 <= 1}, so phi = v1 f - int_{v1}^1 2 f dx = 6 v1 - 4 by hand
    @given(st.floats(0.01, 0.99), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_closed_form(self, v1, frac):
        u = UniformTriangle(1.0)
        assert phi(u, v1, frac * v1) == pytest.approx(6 * v1 - 4, abs=1e-12)

    def test_quadrature_route(self):
        u = UniformTriangle(1.0)
        ev = PhiEvaluator(u, PhiMode.QUADRATURE)
        v1 = np.linspace(0.05, 0.95, 7)
        np.testing.assert_allclose(phi(ev, v1, 0.5 * v1), 6 * v1 - 4, atol=1e-10)

    def test_diagonal_integral(self):
        u = UniformTriangle(1.0)
        v2 = np.array([0.0, 0.3, 0.7, 1.0])
        expected = 3 * (1 - v2**2) - 4 * (1 - v2)
        np.testing.assert_allclose(diagonal_integral(u, v2), expected, atol=1e-12)
        quad = diagonal_integral(PhiEvaluator(u, PhiMode.QUADRATURE), v2)
        np.testing.assert_allclose(quad, expected, atol=1e-9)

    def test_zero_at_unbundled_price(self):
        assert phi(UniformTriangle(1.0), 2 / 3, 0.1) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("base", ORDERED_BASES, ids=str)
def test_closed_form_matches_quadrature(base, rng):
    d = OrderedDecreasing(make_base(base), 1.0)
    pts = interior_points(d, 20, rng, margin=1e-2)
    closed = phi(PhiEvaluator(d, PhiMode.CLOSED_FORM), pts[:, 0], pts[:, 1])
    quad = phi(PhiEvaluator(d, PhiMode.QUADRATURE, levels=30), pts[:, 0], pts[:, 1])
    np.testing.assert_allclose(quad, closed, rtol=1e-7, atol=1e-7)


@pytest.mark.parametrize("base", ORDERED_BASES[:3], ids=str)
def test_phi_equals_w_times_f(base, rng):
    g = make_base(base)
    d = OrderedDecreasing(g, 1.0)
    pts = interior_points(d, 20, rng, margin=1e-2)
    v1, v2 = pts[:, 0], pts[:, 1]
    np.testing.assert_allclose(phi(d, v1, v2), ordered_w(v1, v2, g) * d.pdf(v1, v2), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("base", ORDERED_BASES[:3], ids=str)
def test_diagonal_integral_equals_a2_gmin_wmin(base):
    # integral over y of phi(y/a, y) = a^2 g_min W_min (the dy = a dx change of variable)
    g = make_base(base)
    a = 0.8
    d = OrderedDecreasing(g, a)
    v2 = np.array([0.1, 0.35, 0.6])
    lhs = diagonal_integral(PhiEvaluator(d, PhiMode.QUADRATURE), v2)
    np.testing.assert_allclose(lhs, a**2 * g_min(v2, g, a) * ordered_wmin(v2, g, a), rtol=1e-6, atol=1e-8)


def test_imv_rejected():
    with pytest.raises(WrongOrientation):
        phi(UniformTriangle(1.0, "imv"), 0.2, 0.5)
    with pytest.raises(WrongOrientation):
        check_sc(UniformTriangle(1.0, "imv"), n=21, conditions=("scv",))


class TestSCScan:
    def test_uniform_holds(self):
        report = check_sc(UniformTriangle(1.0), n=101)
        assert report.holds
        assert report.witnesses == []

    def test_imv_sch_only(self):
        report = check_sc(Example3IMV(), n=51, conditions=("sch",))
        assert set(report.verdicts()) == {"sch"}

    def test_failing_family_has_witnesses(self):
        d = OrderedDecreasing(make_base({"family": "exponential", "lam": -5.0}), 1.0)
        report = check_sc(d, n=101)
        assert not report.holds
        assert report.witnesses

    def test_unknown_condition(self):
        with pytest.raises(ValueError):
            check_sc(UniformTriangle(1.0), n=11, conditions=("xyz",))

    def test_report_serializes(self):
        out = check_sc(UniformTriangle(0.5), n=31).to_dict()
        assert out["verdicts"] == {"sch": "Holds", "scv": "Holds", "scd": "Holds"}
        assert out["grid_resolution"] == 31


class TestOrderedConditions:
    @pytest.mark.parametrize("base", ORDERED_BASES, ids=str)
    def test_listed_families_hold(self, base):
        assert check_ordered_conditions(make_base(base)).holds

    @pytest.mark.parametrize("base", ORDERED_BASES + [{"family": "exponential", "lam": -5.0}], ids=str)
    def test_agrees_with_direct_scan(self, base):
        cond = check_ordered_conditions(make_base(base))
        direct = check_sc(OrderedDecreasing(make_base(base), 1.0), n=201)
        assert {k: v for k, v in cond.verdicts().items()} == direct.verdicts()

    def test_negative_exponential_fails_sch(self):
        cond = check_ordered_conditions(make_base({"family": "exponential", "lam": -5.0}))
        assert cond.sch is Verdict.FAILS


class TestConditionalConditions:
    def test_uniform_pair_holds(self):
        rep = check_conditional_conditions(make_base("uniform"), make_base("uniform"))
        assert rep.holds and rep.sufficient_only

    def test_direct_scan_consistent_when_sufficient(self):
        g1, g2 = make_base("uniform"), make_base({"family": "power", "alpha": 2.0})
        rep = check_conditional_conditions(g1, g2)
        if rep.holds:
            assert check_sc(ConditionalDecreasing(g1, g2), n=101).holds


class TestHHConditionalCdf:
    @pytest.mark.parametrize("w", [0.25, 0.5, 1.0])
    def test_example3_formula(self, w):
        expected = (96 - w**2) / (8 * (24 - w**2))
        assert hh_conditional_cdf(Example3IMV(), 0.5, w) == pytest.approx(expected, abs=1e-12)

    def test_uniform_dmv_share(self):
        # uniform slice v1 + v2 = w (w <= 1): v1 in [w/2, w] uniformly
        w, c = 0.8, 0.75
        assert hh_conditional_cdf(UniformTriangle(1.0), c, w) == pytest.approx((c * w - w / 2) / (w / 2))

    def test_endpoints(self):
        d = Example3IMV()
        assert hh_conditional_cdf(d, 0.0, 0.7) == 0.0
        assert hh_conditional_cdf(d, 1.0, 0.7) == pytest.approx(1.0)

    def test_bad_share(self):
        with pytest.raises(ValueError):
            hh_conditional_cdf(Example3IMV(), 1.5, 0.5)

    def test_empty_slice(self):
        with pytest.raises(ZeroDensitySlice):
            hh_conditional_cdf(UniformTriangle(1.0), 0.5, 0.0)
