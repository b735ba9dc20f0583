import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.curves import (
    PriceFrontier,
    ProviderCurve,
    budget_for_performance,
    budget_grid,
    build_provider_curve,
    cost_to_performance,
    frontier_from_curve,
    market_frontier,
    market_price,
    pass_at_budget,
    pass_at_k,
    pass_at_k_table,
    performance_grid,
    provider_expected_cost,
    provider_frontiers,
    provider_performance,
)
from src.errors import DataError, EmptyDatasetError, OutOfSupportError
from src.ingest import Dataset, ProblemStats


def _enumerate_pass_at_k(n: int, m: int, k: int) -> float:
    subsets = list(itertools.combinations(range(n), k))
    return sum(1 for s in subsets if any(i < m for i in s)) / len(subsets)


def _stats(n: int, m: int, s_hat: float) -> ProblemStats:
    return ProblemStats(provider_id="a", problem_id="p", n=n, m=m, s_hat=s_hat)


class TestPassAtK:
    def test_matches_enumeration(self) -> None:
        for n in range(1, 13):
            for m in range(n + 1):
                for k in range(n + 1):
                    assert pass_at_k(n, m, k) == pytest.approx(_enumerate_pass_at_k(n, m, k), abs=1e-12)

    def test_known_value(self) -> None:
        assert pass_at_k(4, 2, 2) == pytest.approx(5 / 6)

    def test_table_matches_scalar(self) -> None:
        table = pass_at_k_table(6, 2)
        assert table.tolist() == pytest.approx([pass_at_k(6, 2, k) for k in range(7)])
        assert not table.flags.writeable
        assert pass_at_k_table(0, 0).tolist() == [0.0]

    def test_k_beyond_support(self) -> None:
        with pytest.raises(OutOfSupportError):
            pass_at_k(4, 2, 5)

    @given(st.integers(1, 40).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_bounded(self, nm: tuple[int, int]) -> None:
        n, m = nm
        values = [pass_at_k(n, m, k) for k in range(n + 1)]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert all(b >= a for a, b in zip(values, values[1:]))
        if m < n:
            assert all(pass_at_k(n, m + 1, k) >= v for k, v in enumerate(values))


class TestPassAtBudget:
    def test_integer_attempts(self) -> None:
        assert pass_at_budget(_stats(4, 2, 0.5), 1.0) == pytest.approx(5 / 6)

    def test_fractional_attempts_interpolate(self) -> None:
        assert pass_at_budget(_stats(4, 2, 0.5), 0.75) == pytest.approx(0.5 * 0.5 + 0.5 * 5 / 6)

    def test_saturates_after_n_attempts(self) -> None:
        stats = _stats(4, 1, 0.5)
        assert pass_at_budget(stats, 10.0) == pass_at_budget(stats, 2.0) == pytest.approx(1.0)

    def test_zero_budget(self) -> None:
        assert pass_at_budget(_stats(4, 2, 0.5), 0.0) == 0.0

    @given(st.floats(0, 5), st.floats(0, 5))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_budget(self, a: float, b: float) -> None:
        stats = _stats(7, 3, 0.4)
        lo, hi = sorted((a, b))
        assert pass_at_budget(stats, lo) <= pass_at_budget(stats, hi) + 1e-15


class TestProviderCurves:
    def test_uniform_performance(self, uniform_dataset) -> None:
        assert provider_performance(uniform_dataset, "a", 1.0) == pytest.approx(5 / 6)

    def test_survival_identity(self, make_dataset) -> None:
        dataset = make_dataset([("a", "p", 1000, 500, 1.0)])
        pass2 = 1 - (500 / 1000) * (499 / 999)
        expected = (1 + 0.5) / 2 + (0.5 + (1 - pass2)) / 2
        assert provider_expected_cost(dataset, "a", 2.0) == pytest.approx(expected, rel=1e-7)
        assert expected == pytest.approx(1.125, abs=1e-3)

    def test_cost_never_exceeds_budget(self, uniform_dataset) -> None:
        for b in (0.1, 0.5, 1.3, 2.5):
            assert provider_expected_cost(uniform_dataset, "a", b) <= len(uniform_dataset) * b

    def test_never_solving_spends_everything(self, make_dataset) -> None:
        dataset = make_dataset([("a", "p1", 3, 0, 0.2), ("a", "p2", 3, 0, 0.2)])
        assert provider_expected_cost(dataset, "a", 0.8) == pytest.approx(2 * 0.8)

    def test_curve_is_monotone(self, uniform_dataset) -> None:
        curve = build_provider_curve(uniform_dataset, "a", 2.0, 0.01)
        assert np.all(np.diff(curve.performance) >= 0)
        assert np.all(np.diff(curve.expected_cost) >= 0)
        assert curve.performance[0] == curve.expected_cost[0] == 0.0

    def test_small_budget_stays_below_pass_at_one(self, uniform_dataset) -> None:
        curve = build_provider_curve(uniform_dataset, "a", 0.3, 0.1)
        assert np.all(curve.performance < 0.5)

    def test_empty_problem_set(self) -> None:
        with pytest.raises(EmptyDatasetError):
            build_provider_curve(Dataset(providers=("a",)), "a", 1.0, 0.1)

    def test_budget_grid_ends_at_b_max(self) -> None:
        grid = budget_grid(1.0, 0.3)
        assert grid[0] == 0.0 and grid[-1] == 1.0
        assert np.all(np.diff(grid) > 0)
        assert performance_grid(0.25).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]

    @pytest.mark.parametrize("u_step", [0.3, 0.15, 0.4])
    def test_performance_step_must_divide_unit_interval(self, u_step) -> None:
        with pytest.raises(ValueError, match="does not divide"):
            performance_grid(u_step)


class TestFrontiers:
    def _curve(self) -> ProviderCurve:
        return ProviderCurve(
            provider_id="a",
            budget_grid=np.array([0.0, 0.5, 1.0, 1.5]),
            performance=np.array([0.0, 0.2, 0.5, 0.6]),
            expected_cost=np.array([0.0, 0.45, 0.9, 1.1]),
            problem_count=1,
        )

    def test_exact_crossing(self) -> None:
        assert cost_to_performance(self._curve(), 0.5) == pytest.approx(0.9)
        assert budget_for_performance(self._curve(), 0.5) == pytest.approx(1.0)

    def test_zero_and_unreachable(self) -> None:
        assert cost_to_performance(self._curve(), 0.0) == 0.0
        assert cost_to_performance(self._curve(), 0.7) == np.inf

    def test_interpolates_between_grid_points(self) -> None:
        assert cost_to_performance(self._curve(), 0.35) == pytest.approx(0.675)

    def test_round_trip_never_overshoots(self, uniform_dataset) -> None:
        curve = build_provider_curve(uniform_dataset, "a", 2.0, 0.01)
        for u, c in zip(curve.performance, curve.expected_cost):
            assert cost_to_performance(curve, float(u)) <= c + 1e-9

    def test_frontier_validates_monotonicity(self, flat_grid) -> None:
        with pytest.raises(ValueError):
            PriceFrontier(label="x", performance_grid=flat_grid, cost=np.linspace(1.0, 0.0, flat_grid.size))

    def test_unreachable_levels_form_a_suffix(self, flat_grid) -> None:
        cost = np.ones(flat_grid.size)
        cost[3] = np.inf
        with pytest.raises(ValueError):
            PriceFrontier(label="x", performance_grid=flat_grid, cost=cost)


class TestMarket:
    def test_picks_cheaper_provider(self, flat_frontier) -> None:
        cost, provider = market_price([flat_frontier("x", 150.0), flat_frontier("y", 120.0)], 0.75)
        assert (cost, provider) == (120.0, "y")

    def test_single_provider_is_identity(self, uniform_dataset) -> None:
        grid = performance_grid(0.05)
        frontiers = provider_frontiers(uniform_dataset, 2.0, 0.01, grid)
        market = market_frontier(frontiers)
        np.testing.assert_array_equal(market.cost, frontiers[0].cost)
        for u in grid:
            assert market_price(frontiers, float(u))[0] == frontiers[0].cost_at(float(u))

    def test_ties_go_to_first_label(self, flat_frontier) -> None:
        market = market_frontier([flat_frontier("zeta", 10.0), flat_frontier("alpha", 10.0)])
        assert set(market.sources) == {"alpha"}
        assert market_price([flat_frontier("zeta", 10.0), flat_frontier("alpha", 10.0)], 0.5)[1] == "alpha"

    def test_unreachable_everywhere(self, flat_frontier) -> None:
        assert market_price([flat_frontier("x", np.inf)], 0.5) == (np.inf, None)

    def test_empty_market(self) -> None:
        with pytest.raises(DataError):
            market_price([], 0.5)

    def test_frontier_export(self, uniform_dataset) -> None:
        curve = build_provider_curve(uniform_dataset, "a", 1.0, 0.1)
        frame = frontier_from_curve(curve, performance_grid(0.1)).to_frame()
        assert list(frame.columns) == ["provider_id", "performance", "cost"]
        assert len(frame) == 11
