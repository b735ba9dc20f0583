import numpy as np
import pytest

from src.arbitrage import optimize_policy
from src.cascade import CascadePolicy
from src.competition import (
    Arbitrageur,
    MarketState,
    bertrand_simulate,
    equilibrium_price,
    marginal_revenue_change,
    market_entry,
    profit_trajectory,
    trajectory_frame,
    undercut_step,
)
from src.curves import performance_grid, provider_frontiers
from src.errors import DataError


def _duopoly(flat_frontier, buy: float = 80.0, count: int = 2) -> MarketState:
    return MarketState.open(
        [flat_frontier("provider", 120.0)],
        {f"arb-{i + 1}": flat_frontier(f"q{i}", buy) for i in range(count)},
    )


class TestMarketState:
    def test_opens_at_market_price(self, flat_frontier) -> None:
        state = _duopoly(flat_frontier)
        assert np.all(state.prevailing() == 120.0)
        assert all(np.all(a.sell.cost == 120.0) for a in state.arbitrageurs)

    def test_sell_below_buy_rejected(self, flat_frontier) -> None:
        with pytest.raises(DataError):
            MarketState(
                providers=(flat_frontier("provider", 120.0),),
                arbitrageurs=(Arbitrageur("arb-1", flat_frontier("q", 80.0), flat_frontier("arb-1", 70.0)),),
            )

    def test_duplicate_ids_rejected(self, flat_frontier) -> None:
        a = Arbitrageur("arb-1", flat_frontier("q", 80.0), flat_frontier("arb-1", 90.0))
        with pytest.raises(DataError):
            MarketState(providers=(flat_frontier("provider", 120.0),), arbitrageurs=(a, a))


class TestUndercut:
    def test_one_step(self, flat_frontier) -> None:
        state = undercut_step(_duopoly(flat_frontier), "arb-1", 0.01)
        assert state.arbitrageur("arb-1").sell.cost_at(0.75) == pytest.approx(118.8)
        assert state.arbitrageur("arb-2").sell.cost_at(0.75) == 120.0

    def test_floor_at_buy_cost(self, flat_frontier) -> None:
        state = undercut_step(_duopoly(flat_frontier, buy=120.0), "arb-1", 0.01)
        assert np.all(state.arbitrageur("arb-1").sell.cost == 120.0)

    def test_fraction_must_be_positive(self, flat_frontier) -> None:
        with pytest.raises(ValueError):
            undercut_step(_duopoly(flat_frontier), "arb-1", 0.0)

    def test_unknown_arbitrageur(self, flat_frontier) -> None:
        with pytest.raises(DataError):
            undercut_step(_duopoly(flat_frontier), "arb-9", 0.01)


class TestBertrand:
    def test_duopoly_converges_to_buy_cost(self, flat_frontier) -> None:
        trajectory = bertrand_simulate(_duopoly(flat_frontier), 1000, 0.01)
        final = trajectory[-1].prevailing()
        assert np.all(final >= 80.0) and np.all(final <= 80.0 / 0.99)
        assert trajectory[-1].round < 1000

    def test_prevailing_never_rises(self, flat_frontier) -> None:
        trajectory = bertrand_simulate(_duopoly(flat_frontier), 100, 0.01)
        prices = np.vstack([s.prevailing() for s in trajectory])
        assert np.all(np.diff(prices, axis=0) <= 1e-12)

    def test_profit_vanishes(self, flat_frontier) -> None:
        trajectory = bertrand_simulate(_duopoly(flat_frontier), 1000, 0.01)
        profits = profit_trajectory(trajectory, flat_frontier("q", 80.0))
        assert profits[0] > 0
        assert profits[-1] < 0.01 * profits[0]
        assert np.all(np.diff(profits) <= 1e-12)

    def test_optimized_cascade_reaches_equilibrium(self, two_segment_dataset) -> None:
        result = optimize_policy(two_segment_dataset, ("A", "B"), cap_step=0.1, grid_step=0.01, u_step=0.05)
        assert result.profit > 0
        buy = result.buy_frontier
        frontiers = provider_frontiers(two_segment_dataset, 1.0, 0.01, performance_grid(0.05))
        trajectory = bertrand_simulate(MarketState.open(frontiers, {"arb-1": buy, "arb-2": buy}), 1000, 0.01)
        final = trajectory[-1].prevailing()
        equilibrium = np.minimum(result.market.cost, buy.cost)
        reachable = np.isfinite(equilibrium)
        np.testing.assert_array_equal(np.isfinite(final), reachable)
        assert np.all(final[reachable] >= equilibrium[reachable] - 1e-12)
        assert np.all(final[reachable] <= equilibrium[reachable] / 0.99 + 1e-12)
        profits = profit_trajectory(trajectory, buy)
        assert profits[-1] < 0.01 * profits[0]

    def test_single_arbitrageur_undercuts_once(self, flat_frontier) -> None:
        trajectory = bertrand_simulate(_duopoly(flat_frontier, count=1), 50, 0.01)
        assert len(trajectory) == 3
        assert trajectory[-1].prevailing() == pytest.approx(np.full(21, 118.8))

    def test_zero_rounds(self, flat_frontier) -> None:
        state = _duopoly(flat_frontier)
        assert bertrand_simulate(state, 0, 0.01) == [state]

    def test_needs_an_arbitrageur(self, flat_frontier) -> None:
        with pytest.raises(DataError):
            bertrand_simulate(MarketState.open([flat_frontier("provider", 1.0)], {}), 5, 0.01)

    def test_trajectory_export(self, flat_frontier) -> None:
        frame = trajectory_frame(bertrand_simulate(_duopoly(flat_frontier), 3, 0.01))
        assert list(frame.columns) == ["round", "performance", "prevailing", "sell_arb-1", "sell_arb-2"]
        assert sorted(frame["round"].unique()) == [0, 1, 2, 3]


class TestEquilibrium:
    def test_cheaper_arbitrage(self, flat_frontier) -> None:
        assert equilibrium_price([flat_frontier("p", 120.0)], flat_frontier("q", 80.0), 0.75) == 80.0

    def test_dearer_arbitrage(self, flat_frontier) -> None:
        assert equilibrium_price([flat_frontier("p", 120.0)], flat_frontier("q", 150.0), 0.75) == 120.0

    def test_unreachable_arbitrage(self, flat_frontier) -> None:
        assert equilibrium_price([flat_frontier("p", 120.0)], flat_frontier("q", np.inf), 0.75) == 120.0


class TestRevenue:
    def test_conservation(self, two_segment_dataset) -> None:
        frontiers = provider_frontiers(two_segment_dataset, 1.0, 0.001, performance_grid(0.01))
        policy = CascadePolicy.from_caps(["A", "B"], [0.05, 0.95], b_max=1.0)
        change = marginal_revenue_change(two_segment_dataset, frontiers, policy)
        assert change.conservation_gap() < 1e-6
        assert change.profit.max() > 0
        assert change.loss_fraction("B") > 0
        assert len(change.boundaries_before) == 1
        assert 0.45 <= change.boundaries_before[0] <= 0.55
        assert set(change.to_frame()["provider_id"]) == {"A", "B"}

    def test_single_provider_market_is_unchanged(self, uniform_dataset) -> None:
        frontiers = provider_frontiers(uniform_dataset, 1.0, 0.001, performance_grid(0.05))
        change = marginal_revenue_change(uniform_dataset, frontiers, CascadePolicy.single("a", 1.0))
        assert not change.delta["a"].any()
        assert not change.profit.any()

    def test_cheapest_cascade_per_level(self, two_segment_dataset) -> None:
        frontiers = provider_frontiers(two_segment_dataset, 1.0, 0.01, performance_grid(0.05))
        change = marginal_revenue_change(two_segment_dataset, frontiers, None, None, 1.0, 0.01, 0.1)
        assert change.conservation_gap() < 1e-6
        assert np.all(change.profit >= 0)


class TestMarketEntry:
    def test_entrant_takes_a_share(self, two_segment_dataset) -> None:
        frame = market_entry(two_segment_dataset, ["B"], "A", grid_step=0.01, cap_step=0.1, u_step=0.05)
        rows = frame.set_index("provider_id")
        assert rows.loc["A", "revenue_before"] == 0.0
        assert rows.loc["A", "revenue_after"] > 0
        assert frame["share_after"].sum() == pytest.approx(1.0)
        assert rows.loc["B", "share_before"] == pytest.approx(1.0)

    def test_entrant_must_be_new(self, two_segment_dataset) -> None:
        with pytest.raises(DataError):
            market_entry(two_segment_dataset, ["A", "B"], "A")
