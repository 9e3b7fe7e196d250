import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from mechlab.densities import Domain, Example3IMV, Orientation, UniformTriangle
from mechlab.lp_oracle import (
    MAX_GRID,
    GridTooLarge,
    LPInstance,
    TypeGrid,
    best_deterministic,
    build_lp,
    candidate_prices,
    deterministic_gap,
    discrete_revenue,
    equal_units_loss,
    first_unit_rounding_loss,
    is_nondecreasing,
    MonotonicityRow,
    solve_lp,
)
from mechlab.optimizer import uniform_closed_form

DMV1 = Domain(Orientation.DMV, 1.0)


def linprog_value(instance):
    G, h, c = instance.dense()
    res = linprog(-c, A_ub=G, b_ub=h, bounds=[(None, None)] * len(c), method="highs")
    assert res.status == 0
    return -res.fun


def parse_lp_text(text, n_vars):
    """Rebuild (G, h) from the exported text with an independent reader."""
    names = {}
    rows, rhs = [], []
    for line in text.splitlines():
        m = re.match(r"\s*\w+: (.*) <= (\S+)$", line)
        if not m or line.strip().startswith("obj"):
            continue
        row = np.zeros(n_vars)
        for sign, coef, name in re.findall(r"([+-]) (\S+) (\w+)", m.group(1)):
            kind, k = name.split("_")
            j = 3 * int(k) + ("q1", "q2", "t").index(kind)
            names[name] = j
            row[j] = float(coef) * (1 if sign == "+" else -1)
        rows.append(row)
        rhs.append(float(m.group(2)))
    return np.array(rows), np.array(rhs)


class TestGrid:
    def test_counts(self, uniform1):
        inst = build_lp(uniform1, 3)
        assert inst.m == 6
        assert inst.n_ic == 30
        assert inst.n_rows == 30 + 4 * 6

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_weights_sum_to_one(self, uniform1, n):
        g = TypeGrid.build(uniform1, n)
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(g.weights > 0)

    def test_nodes_in_support(self):
        g = TypeGrid.build(Example3IMV(), 6)
        assert np.all(g.nodes[:, 0] <= g.nodes[:, 1] + 1e-15)
        g = TypeGrid.build(UniformTriangle(0.5), 6)
        assert np.all(g.nodes[:, 1] <= 0.5 * g.nodes[:, 0] + 1e-15)

    def test_uniform_cell_masses(self, uniform1):
        # interior cells are h x h squares of density 2, diagonal cells are half
        g = TypeGrid.build(uniform1, 5)
        h = 0.25
        full = np.isclose(g.weights, 2 * h * h)
        assert full.any()
        assert np.all(full | np.isclose(g.weights, 2 * h * h / 2) | np.isclose(g.weights, 2 * h * h / 4) | np.isclose(g.weights, 2 * h * h / 8))

    @pytest.mark.parametrize("n", [1, MAX_GRID + 1])
    def test_too_large(self, uniform1, n):
        with pytest.raises(GridTooLarge):
            build_lp(uniform1, n)


class TestSolve:
    def test_single_type_full_extraction(self):
        inst = LPInstance(TypeGrid.from_nodes(DMV1, [[0.7, 0.3]], [1.0]))
        sol = solve_lp(inst)
        assert sol.objective == pytest.approx(1.0, abs=1e-12)

    def test_two_types_by_hand(self):
        # (1, 0) pays 1 for one unit, (1, 1) pays 2 for both; no IC conflict
        inst = LPInstance(TypeGrid.from_nodes(DMV1, [[1.0, 0.0], [1.0, 1.0]], [0.5, 0.5]))
        assert solve_lp(inst).objective == pytest.approx(1.5, abs=1e-12)

    def test_two_types_screening(self):
        # (1, 0) and (0.5, 0.5) share the first unit value 0.5 at most
        inst = LPInstance(TypeGrid.from_nodes(DMV1, [[0.5, 0.0], [1.0, 0.5]], [0.5, 0.5]))
        assert solve_lp(inst).objective == pytest.approx(linprog_value(inst), abs=1e-10)

    @pytest.mark.parametrize("n", [3, 5, 7])
    def test_matches_linprog(self, uniform1, n):
        inst = build_lp(uniform1, n)
        assert solve_lp(inst).objective == pytest.approx(linprog_value(inst), abs=1e-9)

    def test_matches_linprog_imv(self):
        inst = build_lp(Example3IMV(), 6)
        assert solve_lp(inst).objective == pytest.approx(linprog_value(inst), abs=1e-9)

    def test_solution_feasible(self, uniform1):
        inst = build_lp(uniform1, 6)
        sol = solve_lp(inst)
        assert sol.max_violation <= 1e-9
        assert np.all(sol.q2 <= sol.q1 + 1e-9)
        assert np.all(sol.q1 <= 1 + 1e-9)
        u = sol.grid.nodes[:, 0] * sol.q1 + sol.grid.nodes[:, 1] * sol.q2 - sol.t
        assert np.all(u >= -1e-9)

    def test_n3_value(self, uniform1):
        assert solve_lp(build_lp(uniform1, 3)).objective == pytest.approx(0.75, abs=1e-12)

    def test_export_roundtrip(self, uniform1):
        inst = build_lp(uniform1, 4)
        G, h, c = inst.dense()
        G2, h2 = parse_lp_text(inst.to_lp_text(), inst.n_vars)
        np.testing.assert_array_equal(G2, G)
        np.testing.assert_array_equal(h2, h)
        assert inst.to_lp_text().count(" free") == inst.n_vars

    def test_csv(self, uniform1):
        sol = solve_lp(build_lp(uniform1, 3))
        lines = sol.to_csv().splitlines()
        assert lines[0] == "v1,v2,q1,q2,t"
        assert len(lines) == 7

    def test_equal_units_row(self, uniform1):
        inst = build_lp(uniform1, 4).with_equal_units()
        sol = solve_lp(inst)
        np.testing.assert_allclose(sol.q1, sol.q2, atol=1e-9)


class TestDeterministicBenchmark:
    def test_bundle_on_two_nodes(self):
        g = TypeGrid.from_nodes(DMV1, [[1.0, 0.0], [1.0, 1.0]], [0.5, 0.5])
        np.testing.assert_allclose(discrete_revenue(g, [1.0, 2.0], [0.0, 0.0]), [1.0, 1.0])
        np.testing.assert_allclose(discrete_revenue(g, [1.0], [1.0]), [1.5])

    def test_seller_favorable_ties(self):
        g = TypeGrid.from_nodes(DMV1, [[0.5, 0.2]], [1.0])
        assert discrete_revenue(g, [0.5], [0.2])[0] == pytest.approx(0.7)

    @given(st.floats(0.0, 1.2), st.floats(0.0, 1.2))
    @settings(max_examples=100, deadline=None)
    def test_candidates_dominate(self, p1, p2):
        g = TypeGrid.build(UniformTriangle(1.0), 6)
        best, _ = best_deterministic(g)
        assert discrete_revenue(g, [p1], [p2])[0] <= best + 1e-12

    def test_candidate_grid_covers_random_search(self):
        g = TypeGrid.build(Example3IMV(), 7)
        p1, p2 = candidate_prices(g)
        rng = np.random.default_rng(4)
        rp1, rp2 = rng.uniform(0, 1.5, 20000), rng.uniform(0, 1.5, 20000)
        assert discrete_revenue(g, rp1, rp2).max() <= discrete_revenue(g, p1, p2).max() + 1e-12

    def test_gap_nonnegative(self, uniform1):
        rep = deterministic_gap(uniform1, 8)
        assert rep.gap >= -1e-7
        assert rep.gap <= 1e-6

    def test_gap_imv(self):
        rep = deterministic_gap(Example3IMV(), 8)
        assert rep.gap >= -1e-7


class TestDiscretization:
    @pytest.mark.parametrize("n", [8, 12])
    def test_lp_value_above_continuum(self, uniform1, n):
        # calibrated: LP(n) - continuum optimum ~ 0.40 h with h = 1 / (n - 1)
        h = 1.0 / (n - 1)
        cont = uniform_closed_form(1.0).unbundled_revenue
        gap = solve_lp(build_lp(uniform1, n)).objective - cont
        assert 0.0 < gap <= 0.5 * h

    def test_first_unit_rounding_lossless_on_uniform(self, uniform1):
        inst = build_lp(uniform1, 6)
        assert first_unit_rounding_loss(inst, solve_lp(inst)) == pytest.approx(0.0, abs=1e-9)

    def test_equal_units_loss_nonnegative(self):
        inst = build_lp(Example3IMV(), 6)
        assert equal_units_loss(inst) >= -1e-9


class TestMonotonicityHelpers:
    def test_is_nondecreasing(self):
        rows = [MonotonicityRow(0.0, 0.5), MonotonicityRow(0.5, 0.5 - 5e-8), MonotonicityRow(1.0, 0.6)]
        assert is_nondecreasing(rows)
        assert not is_nondecreasing(rows, tol=1e-8)
