"""Arbitrage opportunities, profit, and the cap search for the best cascade.

A policy q with buy frontier C_q earns Pi(u) = max(C_P(u) - C_q(u), 0) at
performance u against the market price C_P, and W = integral Pi(u) w(u) du in
aggregate. `optimize_policy` searches cap vectors on a grid (summing to b_max,
the last provider holding the residual) and returns the most profitable cascade.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.cascade import CascadeModel, CascadePolicy, order_by_low_budget_efficiency
from src.curves import (
    GRID_TOLERANCE,
    UNREACHABLE,
    PriceFrontier,
    ProviderCurve,
    frontier_from_curve,
    market_frontier,
    performance_grid,
    provider_frontiers,
)
from src.errors import DataError, EmptyRangeError
from src.ingest import Dataset

logger = logging.getLogger(__name__)

OPPORTUNITY_TOLERANCE = 1e-9
IMPROVEMENT_TOLERANCE = 1e-12
MAX_EXHAUSTIVE_PROVIDERS = 4
PROGRESS_EVERY = 1000


def _shared_grid(a: PriceFrontier, b: PriceFrontier) -> np.ndarray:
    if not np.array_equal(a.performance_grid, b.performance_grid):
        raise DataError(f"frontiers {a.label!r} and {b.label!r} use different performance grids")
    return a.performance_grid


# ---------------------------------------------------------------------------
# Demand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandWeights:
    """w(u) given at knots and linearly interpolated; uniform demand when no knots."""

    points: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if points.shape != weights.shape or not points.size:
            raise ValueError("demand needs one weight per knot")
        if np.any(np.diff(points) <= 0) or points[0] < 0 or points[-1] > 1:
            raise ValueError("demand knots must increase strictly within [0, 1]")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("demand weights must be finite and non-negative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(u, dtype=float), self.points, self.weights)

    @classmethod
    def uniform(cls) -> "DemandWeights":
        return cls()

    @classmethod
    def from_csv(cls, path: Path) -> "DemandWeights":
        """Read a `u,weight` table."""
        try:
            frame = pd.read_csv(path, comment="#")
        except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: unreadable demand table: {exc}") from exc
        if not {"u", "weight"} <= set(frame.columns):
            raise DataError(f"{path}: demand table needs columns u and weight")
        frame = frame.sort_values("u")
        try:
            return cls(points=frame["u"].to_numpy(), weights=frame["weight"].to_numpy())
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Profit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginalProfit:
    value: float
    # C_q reachable where the market is not: there is no price to compare with
    unbounded_reference: bool = False


def marginal_profit(market: PriceFrontier, policy: PriceFrontier, u: float) -> MarginalProfit:
    c_p, c_q = market.cost_at(u), policy.cost_at(u)
    if not np.isfinite(c_q):
        return MarginalProfit(0.0)
    if not np.isfinite(c_p):
        return MarginalProfit(0.0, unbounded_reference=True)
    return MarginalProfit(max(c_p - c_q, 0.0))


def _profit_arrays(market: PriceFrontier, policy: PriceFrontier) -> tuple[np.ndarray, np.ndarray]:
    _shared_grid(market, policy)
    c_p, c_q = market.cost, policy.cost
    both = np.isfinite(c_p) & np.isfinite(c_q)
    profit = np.zeros_like(c_p)
    profit[both] = np.maximum(c_p[both] - c_q[both], 0.0)
    unbounded = np.isfinite(c_q) & ~np.isfinite(c_p)
    return profit, unbounded


def detect_opportunity(market: PriceFrontier, policy: PriceFrontier) -> tuple[bool, float | None]:
    """Whether C_q(u) < C_P(u) anywhere on the grid, and the lowest such u."""
    grid = _shared_grid(market, policy)
    c_p, c_q = market.cost, policy.cost
    both = np.isfinite(c_p) & np.isfinite(c_q)
    below = np.zeros(grid.shape, dtype=bool)
    below[both] = c_q[both] < c_p[both] * (1.0 - OPPORTUNITY_TOLERANCE)
    if not below.any():
        return False, None
    return True, float(grid[np.argmax(below)])


def range_mask(grid: np.ndarray, market: PriceFrontier, u_range: tuple[float, float] | None) -> np.ndarray:
    if u_range is None:
        # a market that solves nothing still prices u = 0
        u_range = (0.0, market.max_performance or 0.0)
    lo, hi = u_range
    if not 0 <= lo <= hi <= 1:
        raise EmptyRangeError(f"invalid performance range [{lo:g}, {hi:g}]")
    mask = (grid >= lo - GRID_TOLERANCE) & (grid <= hi + GRID_TOLERANCE)
    if not mask.any():
        raise EmptyRangeError(f"no grid point inside [{lo:g}, {hi:g}]")
    return mask


def aggregate_profit(
    market: PriceFrontier,
    policy: PriceFrontier,
    weights: DemandWeights | None = None,
    u_range: tuple[float, float] | None = None,
) -> float:
    """Trapezoid integral of Pi(u) w(u) over the grid points inside u_range."""
    grid = _shared_grid(market, policy)
    mask = range_mask(grid, market, u_range)
    profit, _ = _profit_arrays(market, policy)
    w = (weights or DemandWeights.uniform())(grid)
    if mask.sum() < 2:
        return 0.0
    return float(trapezoid(profit[mask] * w[mask], grid[mask]))


@dataclass(frozen=True)
class ProfitCurve:
    """Pi(u) of a policy against a reference price, with margin (Pi/price) and markup (Pi/buy)."""

    policy_label: str
    performance_grid: np.ndarray
    price: np.ndarray
    buy_cost: np.ndarray
    marginal_profit: np.ndarray
    margin: np.ndarray
    markup: np.ndarray
    unbounded_reference: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.marginal_profit < 0):
            raise ValueError("marginal profit is never negative")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "performance": self.performance_grid,
                "market_price": self.price,
                "buy_cost": self.buy_cost,
                "marginal_profit": self.marginal_profit,
                "margin": self.margin,
                "markup": self.markup,
            }
        )


def profit_curve(market: PriceFrontier, policy: PriceFrontier) -> ProfitCurve:
    grid = _shared_grid(market, policy)
    profit, unbounded = _profit_arrays(market, policy)
    margin = np.zeros_like(profit)
    markup = np.zeros_like(profit)
    np.divide(profit, market.cost, out=margin, where=(profit > 0) & np.isfinite(market.cost))
    np.divide(profit, policy.cost, out=markup, where=(profit > 0) & (policy.cost > 0))
    return ProfitCurve(
        policy_label=policy.label,
        performance_grid=grid,
        price=market.cost,
        buy_cost=policy.cost,
        marginal_profit=profit,
        margin=margin,
        markup=markup,
        unbounded_reference=unbounded,
    )


def mean_margin(market: PriceFrontier, policy: PriceFrontier, u_range: tuple[float, float] | None = None) -> float:
    """Mean profit margin over the grid points of u_range where the market is priced."""
    curve = profit_curve(market, policy)
    mask = range_mask(curve.performance_grid, market, u_range) & np.isfinite(market.cost)
    if not mask.any():
        raise EmptyRangeError("the market is unreachable over the whole range")
    return float(curve.margin[mask].mean())


def sell_prices(policy: PriceFrontier, market: PriceFrontier, undercut_fraction: float) -> PriceFrontier:
    """Sell just below the market, never below the buy cost."""
    if not 0 < undercut_fraction < 1:
        raise ValueError("undercut_fraction must lie in (0, 1)")
    grid = _shared_grid(market, policy)
    sell = np.maximum(market.cost * (1.0 - undercut_fraction), policy.cost)
    sell[~np.isfinite(policy.cost)] = UNREACHABLE
    return PriceFrontier(label=f"{policy.label}@sell", performance_grid=grid, cost=sell)


# ---------------------------------------------------------------------------
# Cap search
# ---------------------------------------------------------------------------

class OrderStrategy(str, Enum):
    HEURISTIC = "heuristic"
    EXHAUSTIVE = "exhaustive"


def _compositions(parts: int, total: int) -> Iterator[tuple[int, ...]]:
    if parts == 0:
        yield ()
        return
    for first in range(total + 1):
        for rest in _compositions(parts - 1, total - first):
            yield (first, *rest)


def cap_vectors(provider_count: int, b_max: float, cap_step: float) -> Iterator[np.ndarray]:
    """Cap vectors on the grid summing to b_max, in lexicographic order.

    The first providers take multiples of cap_step; the last holds the residual.
    """
    if provider_count < 1:
        raise ValueError("need at least one provider")
    if cap_step <= 0 or b_max <= 0:
        raise ValueError("cap_step and b_max must be positive")
    units = int(np.floor(b_max / cap_step + GRID_TOLERANCE))
    for head in _compositions(provider_count - 1, units):
        caps = np.array(head, dtype=float) * cap_step
        yield np.append(caps, max(b_max - caps.sum(), 0.0))


def candidate_orders(
    dataset: Dataset,
    order: OrderStrategy | Sequence[str],
    grid_step: float,
) -> list[tuple[str, ...]]:
    if isinstance(order, (list, tuple)):
        for p in order:
            dataset.require_provider(p)
        if len(set(order)) != len(order):
            raise DataError("provider order repeats a provider")
        return [tuple(order)]
    strategy = OrderStrategy(order)
    if strategy is OrderStrategy.EXHAUSTIVE:
        if len(dataset.providers) <= MAX_EXHAUSTIVE_PROVIDERS:
            return list(itertools.permutations(dataset.providers))
        logger.warning(
            "Exhaustive ordering capped at %s providers; using the heuristic order for %s",
            MAX_EXHAUSTIVE_PROVIDERS, len(dataset.providers),
        )
    return [tuple(order_by_low_budget_efficiency(dataset, grid_step))]


def _scan(
    model: CascadeModel,
    orders: list[tuple[str, ...]],
    b_max: float,
    cap_step: float,
    u_grid: np.ndarray,
) -> Iterator[tuple[CascadePolicy, PriceFrontier]]:
    for ordering in orders:
        for caps in cap_vectors(len(ordering), b_max, cap_step):
            policy = CascadePolicy.from_caps(ordering, caps, b_max=b_max)
            yield policy, frontier_from_curve(model.curve(policy), u_grid)


@dataclass(frozen=True)
class OptimizationResult:
    policy: CascadePolicy
    profit: float
    buy_frontier: PriceFrontier
    market: PriceFrontier
    evaluated: int
    null_result: bool = False

    def profit_curve(self) -> ProfitCurve:
        return profit_curve(self.market, self.buy_frontier)


def _price_setter(market: PriceFrontier) -> str:
    setters = [s for s in (market.sources or ()) if s]
    if not setters:
        raise EmptyRangeError("no provider reaches any performance level")
    counts = pd.Series(setters).value_counts()
    return sorted(counts[counts == counts.max()].index)[0]


def _null_policy(market: PriceFrontier, ordering: tuple[str, ...], b_max: float) -> CascadePolicy:
    """All of b_max on the most frequent price setter."""
    setter = _price_setter(market)
    ordering = (setter, *[p for p in ordering if p != setter])
    return CascadePolicy.from_caps(ordering, [b_max] + [0.0] * (len(ordering) - 1), b_max=b_max)


def optimize_policy(
    dataset: Dataset,
    order: OrderStrategy | Sequence[str] = OrderStrategy.HEURISTIC,
    b_max: float = 1.0,
    cap_step: float = 0.01,
    weights: DemandWeights | None = None,
    u_range: tuple[float, float] | None = None,
    grid_step: float = 0.001,
    u_step: float = 0.001,
) -> OptimizationResult:
    """Grid search for the cap vector (and order) with the highest aggregate profit.

    Ties keep the first candidate: orders in the sequence given, caps
    lexicographically. When nothing beats zero profit the null policy is returned:
    all of b_max on the provider that sets the market price most often.
    """
    if len(dataset.providers) < 2:
        raise DataError("arbitrage needs at least two providers")
    if cap_step <= 0:
        raise ValueError("cap_step must be positive")
    u_grid = performance_grid(u_step)
    market = market_frontier(provider_frontiers(dataset, b_max, grid_step, u_grid))
    orders = candidate_orders(dataset, order, grid_step)
    model = CascadeModel(dataset, b_max, grid_step)

    if u_range is None and not market.max_performance:
        logger.warning("Market reaches no positive performance level; returning the null policy")
        policy = _null_policy(market, orders[0], b_max)
        frontier = frontier_from_curve(model.curve(policy), u_grid)
        return OptimizationResult(
            policy=policy, profit=0.0, buy_frontier=frontier, market=market, evaluated=0, null_result=True
        )

    best: tuple[float, CascadePolicy, PriceFrontier] | None = None
    evaluated = 0
    for policy, frontier in _scan(model, orders, b_max, cap_step, u_grid):
        profit = aggregate_profit(market, frontier, weights, u_range)
        evaluated += 1
        if best is None or profit > best[0] + IMPROVEMENT_TOLERANCE:
            best = (profit, policy, frontier)
        if evaluated % PROGRESS_EVERY == 0:
            logger.info("optimizer.progress evaluated=%s best_profit=%.6g", evaluated, best[0])

    profit, policy, frontier = best
    null_result = profit <= IMPROVEMENT_TOLERANCE
    if null_result:
        policy = _null_policy(market, orders[0], b_max)
        frontier = frontier_from_curve(model.curve(policy), u_grid)
        profit = aggregate_profit(market, frontier, weights, u_range)
    logger.info(
        "optimizer.done evaluated=%s policy=%s profit=%.6g null=%s",
        evaluated, policy.label, profit, null_result,
    )
    return OptimizationResult(
        policy=policy,
        profit=profit,
        buy_frontier=frontier,
        market=market,
        evaluated=evaluated,
        null_result=null_result,
    )


@dataclass(frozen=True)
class ArbitrageFreeMarket:
    """Cheapest cascade over the cap grid at every performance level."""

    frontier: PriceFrontier
    policies: tuple[CascadePolicy | None, ...]
    curves: dict[str, ProviderCurve]

    def policy_at(self, index: int) -> CascadePolicy | None:
        return self.policies[index]


def arbitrage_free_frontier(
    dataset: Dataset,
    order: OrderStrategy | Sequence[str] = OrderStrategy.HEURISTIC,
    b_max: float = 1.0,
    cap_step: float = 0.01,
    grid_step: float = 0.001,
    u_step: float = 0.001,
) -> ArbitrageFreeMarket:
    """The market price once arbitrage has competed away every opportunity."""
    u_grid = performance_grid(u_step)
    model = CascadeModel(dataset, b_max, grid_step)
    best_cost = np.full(u_grid.shape, UNREACHABLE)
    best_policy: list[CascadePolicy | None] = [None] * u_grid.size
    for policy, frontier in _scan(model, candidate_orders(dataset, order, grid_step), b_max, cap_step, u_grid):
        better = frontier.cost < best_cost
        best_cost = np.where(better, frontier.cost, best_cost)
        for i in np.flatnonzero(better):
            best_policy[i] = policy
    winners = {p.label: p for p in best_policy if p is not None}
    sources = tuple(p.label if p is not None else "" for p in best_policy)
    frontier = PriceFrontier(label="arbitrage-free", performance_grid=u_grid, cost=best_cost, sources=sources)
    logger.info("Arbitrage-free market realised by %s distinct cascades", len(winners))
    return ArbitrageFreeMarket(
        frontier=frontier,
        policies=tuple(best_policy),
        curves={label: model.curve(p) for label, p in winners.items()},
    )
