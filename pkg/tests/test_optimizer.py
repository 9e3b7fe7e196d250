import json
import math

import numpy as np
import pytest
from scipy import integrate, optimize

from mechlab.densities import Example3IMV, OrderedIncreasing, UniformTriangle, make_base
from mechlab.mechanisms import DeterministicMechanism, revenue_direct
from mechlab.optimizer import (
    OnBoundary,
    Regime,
    RevenueHistogram,
    check_necessary_conditions,
    classify,
    coordinate_ascent,
    golden_section,
    imv_bundle_price,
    optimize_deterministic,
    sweep,
    uniform_closed_form,
)
from mechlab.phi_sc import WrongOrientation

P2_STAR = (2 - math.sqrt(2)) / 3


@pytest.fixture(scope="module")
def uniform_opt():
    return optimize_deterministic(UniformTriangle(1.0))


class TestSearch:
    def test_golden_section(self):
        x, fx = golden_section(lambda t: -(t - 0.3) ** 2, 0.0, 1.0, tol=1e-9)
        assert x == pytest.approx(0.3, abs=1e-8)
        assert fx == pytest.approx(0.0, abs=1e-15)

    def test_golden_section_edge_maximum(self):
        x, _ = golden_section(lambda t: t, 0.0, 2.0, tol=1e-9)
        assert x == pytest.approx(2.0, abs=1e-8)

    def test_coordinate_ascent(self):
        f = lambda x: -((x[0] - 0.2) ** 2) - 2 * (x[1] - 0.7) ** 2 - 0.5 * x[0] * x[1]  # noqa: E731
        ref = optimize.minimize(lambda x: -f(x), [0.5, 0.5], tol=1e-12).x
        x, _ = coordinate_ascent(f, [0.5, 0.5], [0.0, 0.0], [1.0, 1.0], [0.1, 0.1], tol=1e-10)
        np.testing.assert_allclose(x, ref, atol=1e-6)

    def test_classify(self):
        assert classify(0.5, 0.0, 1.0) is Regime.BUNDLE
        assert classify(0.5, 0.2, 1.0) is Regime.INTERIOR
        assert classify(0.5, 0.4, 0.5) is Regime.SEPARATE_EDGE


class TestHistogram:
    def test_matches_exact_revenue(self, uniform1):
        hist = RevenueHistogram.from_density(uniform1)
        p1 = np.array([0.3, 0.6, 0.8])
        p2 = np.array([0.0, 0.1, 0.4])
        grid = hist.revenue_grid(p1, p2)
        for j, b in enumerate(p2):
            for i, a in enumerate(p1):
                exact = revenue_direct(uniform1, DeterministicMechanism(a, b))
                assert grid[j, i] == pytest.approx(exact, abs=5e-3)


class TestUniformClosedForm:
    def test_a1(self):
        sol = uniform_closed_form(1.0)
        assert sol.unbundled == pytest.approx((2 / 3, P2_STAR))
        assert sol.bundle == pytest.approx(math.sqrt(2 / 3))
        assert sol.regime is Regime.INTERIOR

    def test_small_a_bundles(self):
        sol = uniform_closed_form(0.2)
        assert sol.unbundled is None
        assert sol.bundle == pytest.approx(math.sqrt(0.4))
        assert sol.regime is Regime.BUNDLE

    def test_regime_flip_at_one_third(self):
        assert uniform_closed_form(0.33).regime is Regime.BUNDLE
        assert uniform_closed_form(0.34).regime is Regime.INTERIOR

    def test_bad_slope(self):
        with pytest.raises(ValueError):
            uniform_closed_form(0.0)


class TestOptimize:
    def test_uniform_interior(self, uniform_opt):
        assert uniform_opt.regime is Regime.INTERIOR
        assert uniform_opt.best.p1 == pytest.approx(2 / 3, abs=1e-5)
        assert uniform_opt.best.p2 == pytest.approx(P2_STAR, abs=1e-5)
        exact = revenue_direct(UniformTriangle(1.0), DeterministicMechanism(2 / 3, P2_STAR))
        assert uniform_opt.revenue == pytest.approx(exact, abs=1e-10)

    def test_foc_residuals(self, uniform_opt):
        assert max(abs(r) for r in uniform_opt.foc_residuals) < 1e-4

    def test_candidates_cover_regimes(self, uniform_opt):
        regimes = {c.regime for c in uniform_opt.candidates}
        assert Regime.BUNDLE in regimes and Regime.INTERIOR in regimes
        assert uniform_opt.revenue == max(c.revenue for c in uniform_opt.candidates)

    def test_serializes(self, uniform_opt):
        out = json.loads(json.dumps(uniform_opt.to_dict()))
        assert out["regime"] == "Interior"

    def test_wide_slope(self):
        res = optimize_deterministic(UniformTriangle(2.0))
        ref = uniform_closed_form(2.0)
        assert res.regime is ref.regime
        np.testing.assert_allclose([res.best.p1, res.best.p2], ref.unbundled, atol=1e-5)

    def test_imv_rejected(self):
        with pytest.raises(WrongOrientation):
            optimize_deterministic(Example3IMV())

    def test_sweep_rows(self):
        rows = sweep(UniformTriangle, 0.2, 0.25, 2)
        assert [r.param for r in rows] == [0.2, 0.25]
        assert all(r.regime is Regime.BUNDLE for r in rows)
        assert rows[1].p1 == pytest.approx(math.sqrt(1.25 / 3), abs=1e-5)


class TestNecessaryConditions:
    def test_at_optimum(self, uniform1):
        rep = check_necessary_conditions(uniform1, 2 / 3, P2_STAR)
        assert rep.case == "interior"
        assert max(abs(r) for r in rep.residuals) < 1e-10
        assert rep.signs_ok()

    def test_off_optimum(self, uniform1):
        # first condition: int_0^p2 (6 p1 - 4) dy = p2 (6 p1 - 4)
        rep = check_necessary_conditions(uniform1, 0.5, 0.1)
        assert rep.residuals[0] == pytest.approx(0.1 * (6 * 0.5 - 4), abs=1e-12)

    def test_separate_case(self):
        d = UniformTriangle(0.5)
        rep = check_necessary_conditions(d, 0.4, 0.3)
        assert rep.case == "separate"
        assert rep.signs_ok()

    def test_boundary(self, uniform1):
        with pytest.raises(OnBoundary):
            check_necessary_conditions(uniform1, 0.5, 0.0)
        with pytest.raises(OnBoundary):
            check_necessary_conditions(uniform1, 0.5, 0.5)


def example3_bundle_oracle():
    """Root of B tau(B) = 1 - T(B) with scipy line and double integrals of the density."""
    f = lambda v2, v1: 12 / 11 * (2 - v1**2)  # noqa: E731

    def tail(b):
        # mass of {v1 <= v2 <= 1, v1 + v2 >= b}
        return integrate.dblquad(f, 0.0, 1.0, lambda v1: max(v1, b - v1), 1.0, epsabs=1e-14, epsrel=1e-13)[0]

    def slice_density(b):
        # v1 + v2 = b with v1 <= v2 <= 1
        return integrate.quad(lambda v1: f(b - v1, v1), max(0.0, b - 1.0), b / 2, epsabs=1e-14, epsrel=1e-13)[0]

    b = optimize.brentq(lambda b: b * slice_density(b) - tail(b), 0.5, 1.2, xtol=1e-14)
    return b, b * tail(b)


class TestBundlePrice:
    def test_ordered_increasing_uniform(self):
        res = imv_bundle_price(OrderedIncreasing(make_base("uniform"), 1.0))
        assert res.price == pytest.approx(math.sqrt(2 / 3), abs=1e-10)
        assert res.regular
        assert res.residual < 1e-8

    def test_example3_against_oracle(self):
        res = imv_bundle_price(Example3IMV())
        price, revenue = example3_bundle_oracle()
        assert res.price == pytest.approx(price, abs=1e-9)
        assert res.revenue == pytest.approx(revenue, abs=1e-12)
        assert res.residual < 1e-8

    def test_revenue_matches_posted_bundle(self):
        d = Example3IMV()
        res = imv_bundle_price(d)
        assert res.revenue == pytest.approx(revenue_direct(d, DeterministicMechanism(res.price, 0.0)), abs=1e-9)
