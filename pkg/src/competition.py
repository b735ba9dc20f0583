"""Price competition between arbitrageurs and its effect on provider revenue.

Arbitrageurs sharing the same buy frontier take turns undercutting the
prevailing price of everyone else by a fixed fraction, never selling below
their own buy cost. Prices fall geometrically until they reach the buy cost,
the equilibrium min(C_P(u), C_q*(u)).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.arbitrage import (
    DemandWeights,
    OrderStrategy,
    aggregate_profit,
    arbitrage_free_frontier,
    range_mask,
)
from src.cascade import CascadePolicy, build_cascade_curve, revenue_split_from_curve
from src.curves import (
    MONOTONE_TOLERANCE,
    UNREACHABLE,
    PriceFrontier,
    budget_profile,
    frontier_from_curve,
    market_frontier,
    market_price,
)
from src.errors import DataError
from src.ingest import Dataset

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Market state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Arbitrageur:
    arbitrageur_id: str
    buy: PriceFrontier
    sell: PriceFrontier


@dataclass(frozen=True)
class MarketState:
    providers: tuple[PriceFrontier, ...]
    arbitrageurs: tuple[Arbitrageur, ...]
    round: int = 0

    def __post_init__(self) -> None:
        if not self.providers:
            raise DataError("a market needs at least one provider")
        grid = self.providers[0].performance_grid
        frontiers = [*self.providers, *(a.buy for a in self.arbitrageurs), *(a.sell for a in self.arbitrageurs)]
        if any(not np.array_equal(f.performance_grid, grid) for f in frontiers):
            raise DataError("market frontiers must share one performance grid")
        ids = [a.arbitrageur_id for a in self.arbitrageurs]
        if len(set(ids)) != len(ids):
            raise DataError("arbitrageur ids must be unique")
        for a in self.arbitrageurs:
            slack = MONOTONE_TOLERANCE * np.maximum(1.0, np.where(np.isfinite(a.buy.cost), a.buy.cost, 0.0))
            if np.any(a.sell.cost < a.buy.cost - slack):
                raise DataError(f"arbitrageur {a.arbitrageur_id!r} sells below its buy cost")

    @classmethod
    def open(cls, providers: Sequence[PriceFrontier], buy_frontiers: Mapping[str, PriceFrontier]) -> "MarketState":
        """Round 0: every arbitrageur quotes the market price (or its buy cost, if higher)."""
        market = market_frontier(providers).cost
        arbitrageurs = []
        for arbitrageur_id, buy in buy_frontiers.items():
            sell = np.maximum(market, buy.cost)
            arbitrageurs.append(
                Arbitrageur(
                    arbitrageur_id,
                    buy,
                    PriceFrontier(label=arbitrageur_id, performance_grid=buy.performance_grid, cost=sell),
                )
            )
        return cls(providers=tuple(providers), arbitrageurs=tuple(arbitrageurs))

    @property
    def performance_grid(self) -> np.ndarray:
        return self.providers[0].performance_grid

    def arbitrageur(self, arbitrageur_id: str) -> Arbitrageur:
        for a in self.arbitrageurs:
            if a.arbitrageur_id == arbitrageur_id:
                return a
        raise DataError(f"unknown arbitrageur {arbitrageur_id!r}")

    def _lowest(self, exclude: str | None = None) -> np.ndarray:
        quotes = [p.cost for p in self.providers]
        quotes += [a.sell.cost for a in self.arbitrageurs if a.arbitrageur_id != exclude]
        return np.vstack(quotes).min(axis=0)

    def prevailing(self) -> np.ndarray:
        return self._lowest()

    def prevailing_frontier(self) -> PriceFrontier:
        return PriceFrontier(label="prevailing", performance_grid=self.performance_grid, cost=self.prevailing())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"round": self.round, "performance": self.performance_grid, "prevailing": self.prevailing()})
        for a in self.arbitrageurs:
            frame[f"sell_{a.arbitrageur_id}"] = a.sell.cost
        return frame


def undercut_step(state: MarketState, arbitrageur_id: str, undercut_fraction: float) -> MarketState:
    """Quote max(buy cost, others' prevailing price * (1 - fraction)) everywhere."""
    if not 0 < undercut_fraction < 1:
        raise ValueError("undercut_fraction must lie in (0, 1)")
    mover = state.arbitrageur(arbitrageur_id)
    quote = np.maximum(mover.buy.cost, state._lowest(exclude=arbitrageur_id) * (1.0 - undercut_fraction))
    quote[~np.isfinite(mover.buy.cost)] = UNREACHABLE
    moved = replace(mover, sell=PriceFrontier(label=arbitrageur_id, performance_grid=state.performance_grid, cost=quote))
    arbitrageurs = tuple(moved if a.arbitrageur_id == arbitrageur_id else a for a in state.arbitrageurs)
    return replace(state, arbitrageurs=arbitrageurs)


def _relative_change(old: np.ndarray, new: np.ndarray) -> float:
    finite = np.isfinite(old) & np.isfinite(new)
    if np.any(np.isfinite(old) != np.isfinite(new)):
        return np.inf
    if not finite.any():
        return 0.0
    return float(np.max(np.abs(new[finite] - old[finite]) / np.maximum(np.abs(old[finite]), 1e-300)))


def bertrand_simulate(state: MarketState, rounds: int, undercut_fraction: float) -> list[MarketState]:
    """States after each full round of alternating undercuts, round 0 first.

    Stops early once a whole round moves the prevailing price by less than
    CONVERGENCE_TOLERANCE relative.
    """
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    if not 0 < undercut_fraction < 1:
        raise ValueError("undercut_fraction must lie in (0, 1)")
    if not state.arbitrageurs:
        raise DataError("competition needs at least one arbitrageur")
    first = state.arbitrageurs[0].buy.cost
    if any(not np.array_equal(a.buy.cost, first) for a in state.arbitrageurs[1:]):
        logger.warning("Arbitrageurs buy at different costs; the equilibrium is the lowest buy cost")

    trajectory = [state]
    for r in range(1, rounds + 1):
        current = trajectory[-1]
        for a in current.arbitrageurs:
            current = undercut_step(current, a.arbitrageur_id, undercut_fraction)
        current = replace(current, round=r)
        trajectory.append(current)
        change = _relative_change(trajectory[-2].prevailing(), current.prevailing())
        logger.debug("competition.round round=%s change=%.3g", r, change)
        if change < CONVERGENCE_TOLERANCE:
            break
    logger.info("competition.done rounds=%s arbitrageurs=%s", trajectory[-1].round, len(state.arbitrageurs))
    return trajectory


def trajectory_frame(trajectory: Sequence[MarketState]) -> pd.DataFrame:
    return pd.concat([s.to_frame() for s in trajectory], ignore_index=True)


def equilibrium_price(provider_frontiers: Sequence[PriceFrontier], q_star: PriceFrontier, u: float) -> float:
    """C_P'(u) = min(C_P(u), C_q*(u))."""
    c_p, _ = market_price(provider_frontiers, u)
    return float(min(c_p, q_star.cost_at(u)))


def profit_trajectory(
    trajectory: Sequence[MarketState],
    buy_frontier: PriceFrontier,
    weights: DemandWeights | None = None,
    u_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Aggregate profit of buy_frontier against the prevailing price after each round."""
    if u_range is None:
        u_range = (0.0, market_frontier(trajectory[0].providers).max_performance or 0.0)
    return np.array(
        [aggregate_profit(s.prevailing_frontier(), buy_frontier, weights, u_range) for s in trajectory]
    )


# ---------------------------------------------------------------------------
# Provider revenue
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RevenueChange:
    """Per-level revenue of each provider before and after arbitrage enters.

    Consumers keep paying the market price; the arbitrageur pays its cascade
    providers and keeps the difference, so after + profit == before per level.
    """

    performance_grid: np.ndarray
    expenditure: np.ndarray
    before: dict[str, np.ndarray]
    after: dict[str, np.ndarray]
    profit: np.ndarray
    boundaries_before: tuple[float, ...]
    boundaries_after: tuple[float, ...]

    @property
    def delta(self) -> dict[str, np.ndarray]:
        return {p: self.after[p] - self.before[p] for p in self.before}

    def loss_fraction(self, provider_id: str) -> float:
        """Largest relative revenue drop of a provider at any level it served before."""
        before, after = self.before[provider_id], self.after[provider_id]
        served = before > 0
        if not served.any():
            return 0.0
        return float(np.max((before[served] - after[served]) / before[served]))

    def conservation_gap(self) -> float:
        total_after = np.sum(list(self.after.values()), axis=0) + self.profit
        scale = np.maximum(np.abs(self.expenditure), 1e-300)
        return float(np.max(np.abs(total_after - self.expenditure) / scale)) if self.expenditure.size else 0.0

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame(
                {
                    "performance": self.performance_grid,
                    "provider_id": p,
                    "revenue_before": self.before[p],
                    "revenue_after": self.after[p],
                    "delta": self.after[p] - self.before[p],
                }
            )
            for p in sorted(self.before)
        ]
        return pd.concat(frames, ignore_index=True)


def _boundaries(grid: np.ndarray, revenue: dict[str, np.ndarray]) -> tuple[float, ...]:
    """Levels where the provider collecting the most revenue changes."""
    providers = sorted(revenue)
    stack = np.vstack([revenue[p] for p in providers])
    served = stack.max(axis=0) > 0
    leader = np.where(served, stack.argmax(axis=0), -1)
    changes = np.flatnonzero((np.diff(leader) != 0) & served[1:] & served[:-1]) + 1
    return tuple(float(grid[i]) for i in changes)


def marginal_revenue_change(
    dataset: Dataset,
    frontiers: Sequence[PriceFrontier],
    policy: CascadePolicy | None = None,
    u_range: tuple[float, float] | None = None,
    b_max: float = 1.0,
    grid_step: float = 0.001,
    cap_step: float = 0.01,
) -> RevenueChange:
    """Revenue of every provider per performance level, with and without arbitrage.

    Before, the price-setting provider collects C_P(u). After, wherever the
    arbitrage cascade buys cheaper, its providers collect the cascade's revenue
    split at the budget reaching u. Without a policy the cheapest cascade on the
    cap grid is used at each level.
    """
    market = market_frontier(frontiers)
    grid = market.performance_grid
    mask = range_mask(grid, market, u_range)
    u = grid[mask]
    expenditure = market.cost[mask]
    sources = np.array(market.sources, dtype=object)[mask]

    before = {p: np.zeros(u.size) for p in dataset.providers}
    for i, setter in enumerate(sources):
        if setter:
            before[setter][i] = expenditure[i]
    after = {p: v.copy() for p, v in before.items()}
    profit = np.zeros(u.size)

    if policy is not None:
        curve = build_cascade_curve(policy, dataset, max(b_max, policy.total_cap), grid_step)
        buy = frontier_from_curve(curve, grid).cost[mask]
        budgets = budget_profile(curve, u)
        chosen = [(policy, curve)] * u.size
    else:
        free = arbitrage_free_frontier(
            dataset, OrderStrategy.HEURISTIC, b_max, cap_step, grid_step, u_step=float(grid[1] - grid[0])
        )
        buy = free.frontier.cost[mask]
        picks = [free.policies[i] for i in np.flatnonzero(mask)]
        chosen = [(p, free.curves[p.label]) if p is not None else (None, None) for p in picks]
        budgets = np.array(
            [budget_profile(c, np.array([ui]))[0] if c is not None else UNREACHABLE for (_, c), ui in zip(chosen, u)]
        )

    for i, ((pol, curve), b) in enumerate(zip(chosen, budgets)):
        if pol is None or not np.isfinite(expenditure[i]) or not np.isfinite(buy[i]) or buy[i] >= expenditure[i]:
            continue
        for p in before:
            after[p][i] = 0.0
        for p, share in revenue_split_from_curve(pol, curve, float(b)).items():
            after[p][i] += share
        profit[i] = expenditure[i] - buy[i]

    finite = np.isfinite(expenditure)
    change = RevenueChange(
        performance_grid=u[finite],
        expenditure=expenditure[finite],
        before={p: v[finite] for p, v in before.items()},
        after={p: v[finite] for p, v in after.items()},
        profit=profit[finite],
        boundaries_before=_boundaries(u[finite], {p: v[finite] for p, v in before.items()}),
        boundaries_after=_boundaries(u[finite], {p: v[finite] for p, v in after.items()}),
    )
    logger.info(
        "revenue.change levels=%s boundaries_before=%s boundaries_after=%s",
        u.size, change.boundaries_before, change.boundaries_after,
    )
    return change


def _free_market_revenue(
    dataset: Dataset,
    providers: Sequence[str],
    u_range: tuple[float, float] | None,
    b_max: float,
    grid_step: float,
    cap_step: float,
    u_step: float,
) -> tuple[dict[str, float], tuple[float, float]]:
    """Revenue each provider collects over u_range in the arbitrage-free market."""
    free = arbitrage_free_frontier(dataset.with_providers(providers), OrderStrategy.HEURISTIC, b_max, cap_step, grid_step, u_step)
    grid = free.frontier.performance_grid
    lo, hi = u_range or (0.0, free.frontier.max_performance or 0.0)
    idx = np.flatnonzero(range_mask(grid, free.frontier, (lo, hi)) & free.frontier.reachable)
    per_level = {p: np.zeros(idx.size) for p in providers}
    for k, i in enumerate(idx):
        policy = free.policies[i]
        curve = free.curves[policy.label]
        b = budget_profile(curve, grid[i : i + 1])[0]
        for p, share in revenue_split_from_curve(policy, curve, float(b)).items():
            per_level[p][k] = share
    if idx.size < 2:
        return {p: float(v.sum()) for p, v in per_level.items()}, (lo, hi)
    return {p: float(trapezoid(v, grid[idx])) for p, v in per_level.items()}, (lo, hi)


def market_entry(
    dataset: Dataset,
    incumbents: Sequence[str],
    entrant: str,
    u_range: tuple[float, float] | None = None,
    b_max: float = 1.0,
    grid_step: float = 0.001,
    cap_step: float = 0.05,
    u_step: float = 0.01,
) -> pd.DataFrame:
    """Revenue of each provider in the arbitrage-free market before and after an entrant joins.

    Both markets are measured over the same range: u_range, or the incumbents'
    reachable range when none is given.
    """
    if entrant in incumbents:
        raise DataError(f"{entrant!r} is already an incumbent")
    before, u_range = _free_market_revenue(dataset, list(incumbents), u_range, b_max, grid_step, cap_step, u_step)
    after, _ = _free_market_revenue(dataset, [*incumbents, entrant], u_range, b_max, grid_step, cap_step, u_step)
    total_before, total_after = sum(before.values()), sum(after.values())
    frame = pd.DataFrame(
        {
            "provider_id": sorted(after),
            "revenue_before": [before.get(p, 0.0) for p in sorted(after)],
            "revenue_after": [after[p] for p in sorted(after)],
        }
    )
    frame["share_before"] = frame["revenue_before"] / total_before if total_before > 0 else 0.0
    frame["share_after"] = frame["revenue_after"] / total_after if total_after > 0 else 0.0
    logger.info(
        "market.entry entrant=%s revenue_after=%.6g total_before=%.6g total_after=%.6g",
        entrant, after[entrant], total_before, total_after,
    )
    return frame
