"""Performance and cost curves of single providers, and their price frontiers.

A provider's per-problem solve probability at per-issue budget b is pass@k with
k = b / s_hat attempts, linearly interpolated between integer k and saturating at
k = n. Averaging over problems gives the performance curve u(b); the expected total
spend follows from the survival identity, c(b) = |J| * integral_0^b (1 - u(x)) dx,
integrated with the trapezoid rule on a uniform budget grid.

Inverting (u(b), c(b)) gives the price frontier C(u): the cheapest expected cost
at which a target performance is reached. Unreachable levels cost `numpy.inf`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from src.errors import DataError, EmptyDatasetError, OutOfSupportError
from src.ingest import Dataset, ProblemStats

logger = logging.getLogger(__name__)

UNREACHABLE = np.inf
GRID_TOLERANCE = 1e-9
MONOTONE_TOLERANCE = 1e-9


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

def budget_grid(b_max: float, grid_step: float) -> np.ndarray:
    """Uniform grid {0, step, 2*step, ...} ending exactly at b_max."""
    if b_max < 0 or grid_step <= 0:
        raise ValueError("budget grid needs b_max >= 0 and grid_step > 0")
    count = int(np.floor(b_max / grid_step + GRID_TOLERANCE))
    grid = np.arange(count + 1, dtype=float) * grid_step
    if b_max - grid[-1] > GRID_TOLERANCE * max(1.0, b_max):
        grid = np.append(grid, b_max)
    else:
        grid[-1] = b_max
    if grid.size == 1:
        grid = np.array([0.0])
    return grid


def performance_grid(u_step: float) -> np.ndarray:
    """Performance levels 0, u_step, ..., 1."""
    if not 0 < u_step <= 1:
        raise ValueError("u_step must lie in (0, 1]")
    steps = int(round(1.0 / u_step))
    if abs(steps * u_step - 1.0) > GRID_TOLERANCE * steps:
        raise ValueError(f"u_step {u_step:g} does not divide [0, 1] evenly")
    return np.linspace(0.0, 1.0, steps + 1)


# ---------------------------------------------------------------------------
# pass@k
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8192)
def pass_at_k_table(n: int, m: int) -> np.ndarray:
    """pass@k for k = 0..n, via the stable product 1 - prod (n-m-i)/(n-i)."""
    if n < 0 or not 0 <= m <= n:
        raise DataError(f"invalid attempt counts n={n}, m={m}")
    if n == 0:
        return _readonly([0.0])
    i = np.arange(n)
    factors = np.clip(n - m - i, 0, None) / (n - i)
    return _readonly(np.concatenate(([0.0], 1.0 - np.cumprod(factors))))


def pass_at_k(n: int, m: int, k: int) -> float:
    """Unbiased estimate that k of n recorded attempts (m correct) contain a success."""
    if k < 0:
        raise DataError("k must be non-negative")
    if k > n:
        raise OutOfSupportError(f"pass@{k} needs at least {k} attempts, only {n} observed")
    return float(pass_at_k_table(n, m)[k])


def pass_at_budgets(stats: ProblemStats, budgets: np.ndarray) -> np.ndarray:
    """Vectorised pass_at_budget; imputed (n = 0) pairs never solve."""
    budgets = np.asarray(budgets, dtype=float)
    if stats.n == 0:
        return np.zeros_like(budgets)
    # np.interp clamps k > n to pass@n: no extrapolation past the observed attempts
    return np.interp(budgets / stats.s_hat, np.arange(stats.n + 1), pass_at_k_table(stats.n, stats.m))


def pass_at_budget(stats: ProblemStats, b: float) -> float:
    if b < 0:
        raise ValueError("budget must be non-negative")
    return float(pass_at_budgets(stats, np.array([b]))[0])


def pass_matrix(dataset: Dataset, provider_id: str, budgets: np.ndarray) -> np.ndarray:
    """Per-problem solve probabilities, shape (|J|, len(budgets)), rows in problem order."""
    dataset.require_provider(provider_id)
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset has no problems")
    return np.vstack([pass_at_budgets(s, budgets) for s in dataset.stats_for(provider_id)])


# ---------------------------------------------------------------------------
# Provider curves
# ---------------------------------------------------------------------------

def expected_cost_profile(
    grid: np.ndarray,
    performance: np.ndarray,
    problem_count: int,
    spend_limit: float | None = None,
) -> np.ndarray:
    """|J| * cumulative integral of the survival 1 - u(x); spend stops at spend_limit."""
    cumulative = problem_count * cumulative_trapezoid(1.0 - performance, grid, initial=0.0)
    if spend_limit is not None and spend_limit < grid[-1]:
        cumulative = np.interp(np.minimum(grid, spend_limit), grid, cumulative)
    return cumulative


@dataclass(frozen=True)
class ProviderCurve:
    """u(b) and c(b) of one provider (or one cascade) sampled on a budget grid."""

    provider_id: str
    budget_grid: np.ndarray
    performance: np.ndarray
    expected_cost: np.ndarray
    problem_count: int

    def __post_init__(self) -> None:
        for name in ("budget_grid", "performance", "expected_cost"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        grid, perf, cost = self.budget_grid, self.performance, self.expected_cost
        if not grid.size or grid.shape != perf.shape or grid.shape != cost.shape:
            raise ValueError("curve arrays must be non-empty and of equal length")
        if grid[0] != 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("budget grid must start at 0 and increase strictly")
        if perf[0] != 0 or cost[0] != 0:
            raise ValueError("performance and cost must be 0 at budget 0")
        if np.any(np.diff(perf) < -MONOTONE_TOLERANCE) or np.any(np.diff(cost) < -MONOTONE_TOLERANCE):
            raise ValueError("performance and cost must be nondecreasing in the budget")
        if np.any(perf < 0) or np.any(perf > 1 + MONOTONE_TOLERANCE):
            raise ValueError("performance must lie in [0, 1]")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "provider_id": self.provider_id,
                "budget": self.budget_grid,
                "performance": self.performance,
                "expected_cost": self.expected_cost,
            }
        )


def provider_performance(dataset: Dataset, provider_id: str, b: float) -> float:
    """Mean solve probability over all problems at per-issue budget b."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    return float(pass_matrix(dataset, provider_id, np.array([b])).mean(axis=0)[0])


def provider_expected_cost(dataset: Dataset, provider_id: str, b: float, grid_step: float = 0.001) -> float:
    """Expected total spend over all problems at per-issue budget b."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    if b == 0:
        dataset.require_provider(provider_id)
        return 0.0
    grid = budget_grid(b, grid_step)
    performance = pass_matrix(dataset, provider_id, grid).mean(axis=0)
    return float(expected_cost_profile(grid, performance, len(dataset))[-1])


def build_provider_curve(dataset: Dataset, provider_id: str, b_max: float, grid_step: float) -> ProviderCurve:
    if b_max <= 0 or grid_step <= 0:
        raise ValueError("b_max and grid_step must be positive")
    grid = budget_grid(b_max, grid_step)
    performance = pass_matrix(dataset, provider_id, grid).mean(axis=0)
    return ProviderCurve(
        provider_id=provider_id,
        budget_grid=grid,
        performance=performance,
        expected_cost=expected_cost_profile(grid, performance, len(dataset)),
        problem_count=len(dataset),
    )


# ---------------------------------------------------------------------------
# Frontiers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriceFrontier:
    """Minimal expected cost C(u) on a performance grid; inf marks unreachable levels.

    `sources` names the provider that sets the price at each point (market
    frontiers only; empty string where unreachable).
    """

    label: str
    performance_grid: np.ndarray
    cost: np.ndarray
    sources: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "performance_grid", _readonly(self.performance_grid))
        object.__setattr__(self, "cost", _readonly(self.cost))
        grid, cost = self.performance_grid, self.cost
        if not grid.size or grid.shape != cost.shape:
            raise ValueError("frontier arrays must be non-empty and of equal length")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
            raise ValueError("performance grid must increase strictly within [0, 1]")
        if np.any(np.isnan(cost)) or np.any(cost < 0):
            raise ValueError("frontier costs must be non-negative")
        reachable = np.isfinite(cost)
        if np.any(np.diff(reachable.astype(int)) > 0):
            raise ValueError("unreachable levels must form a suffix of the grid")
        finite = cost[reachable]
        if np.any(np.diff(finite) < -MONOTONE_TOLERANCE * max(1.0, float(finite.max(initial=0.0)))):
            raise ValueError("frontier cost must be nondecreasing in performance")
        if self.sources is not None and len(self.sources) != grid.size:
            raise ValueError("one source per grid point")

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.cost)

    @property
    def max_performance(self) -> float | None:
        reachable = self.performance_grid[self.reachable]
        return float(reachable[-1]) if reachable.size else None

    def _index(self, u: float) -> tuple[int, bool]:
        if not 0 <= u <= 1:
            raise ValueError("performance level must lie in [0, 1]")
        grid = self.performance_grid
        i = int(np.searchsorted(grid, u, side="left"))
        for j in (i, i - 1):
            if 0 <= j < grid.size and abs(grid[j] - u) <= GRID_TOLERANCE:
                return j, True
        return i, False

    def cost_at(self, u: float) -> float:
        """C(u); between grid points the cost is interpolated, unreachable if either side is."""
        i, exact = self._index(u)
        if exact:
            return float(self.cost[i])
        if i == 0 or i >= self.performance_grid.size:
            return UNREACHABLE
        lo, hi = self.cost[i - 1], self.cost[i]
        if not np.isfinite(hi):
            return UNREACHABLE
        u_lo, u_hi = self.performance_grid[i - 1], self.performance_grid[i]
        return float(lo + (u - u_lo) / (u_hi - u_lo) * (hi - lo))

    def source_at(self, u: float) -> str | None:
        if self.sources is None:
            return self.label if np.isfinite(self.cost_at(u)) else None
        i, _ = self._index(u)
        if i >= len(self.sources):
            return None
        return self.sources[i] or None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {"provider_id": self.label, "performance": self.performance_grid, "cost": self.cost}
        )
        if self.sources is not None:
            frame["price_setter"] = list(self.sources)
        return frame


def _invert(curve: ProviderCurve, u_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest budget reaching each u, and the expected cost there."""
    perf = np.maximum.accumulate(curve.performance)
    grid, cost = curve.budget_grid, curve.expected_cost
    idx = np.searchsorted(perf, u_values, side="left")
    budgets = np.full(u_values.shape, UNREACHABLE)
    costs = np.full(u_values.shape, UNREACHABLE)
    reach = idx < perf.size
    i = idx[reach]
    prev = np.maximum(i - 1, 0)
    span = perf[i] - perf[prev]
    t = np.ones_like(span)
    np.divide(u_values[reach] - perf[prev], span, out=t, where=span > 0)
    t = np.clip(t, 0.0, 1.0)
    budgets[reach] = np.where(t >= 1.0, grid[i], grid[prev] + t * (grid[i] - grid[prev]))
    costs[reach] = np.where(t >= 1.0, cost[i], cost[prev] + t * (cost[i] - cost[prev]))
    return budgets, costs


def cost_to_performance(curve: ProviderCurve, u: float) -> float:
    """C(u) = min over budgets reaching u of c(b); inf when u(b_max) < u."""
    if not 0 <= u <= 1:
        raise ValueError("performance level must lie in [0, 1]")
    return float(_invert(curve, np.array([u]))[1][0])


def budget_for_performance(curve: ProviderCurve, u: float) -> float:
    """The per-issue budget at which the curve first reaches u (inf if never)."""
    return float(_invert(curve, np.array([u]))[0][0])


def budget_profile(curve: ProviderCurve, u_grid: np.ndarray) -> np.ndarray:
    return _invert(curve, np.asarray(u_grid, dtype=float))[0]


def frontier_from_curve(curve: ProviderCurve, u_grid: np.ndarray, label: str | None = None) -> PriceFrontier:
    _, costs = _invert(curve, np.asarray(u_grid, dtype=float))
    return PriceFrontier(label=label or curve.provider_id, performance_grid=u_grid, cost=costs)


def provider_frontiers(dataset: Dataset, b_max: float, grid_step: float, u_grid: np.ndarray) -> list[PriceFrontier]:
    """Price frontier of every provider in the dataset."""
    return [
        frontier_from_curve(build_provider_curve(dataset, p, b_max, grid_step), u_grid)
        for p in dataset.providers
    ]


def market_frontier(frontiers: Sequence[PriceFrontier], label: str = "market") -> PriceFrontier:
    """Pointwise minimum over frontiers; ties go to the lexicographically first label."""
    if not frontiers:
        raise DataError("a market needs at least one provider")
    ordered = sorted(frontiers, key=lambda f: f.label)
    grid = ordered[0].performance_grid
    if any(not np.array_equal(f.performance_grid, grid) for f in ordered[1:]):
        raise DataError("frontiers must share one performance grid")
    stack = np.vstack([f.cost for f in ordered])
    best = np.argmin(stack, axis=0)
    cost = stack[best, np.arange(grid.size)]
    sources = tuple(ordered[b].label if np.isfinite(c) else "" for b, c in zip(best, cost))
    return PriceFrontier(label=label, performance_grid=grid, cost=cost, sources=sources)


def market_price(frontiers: Sequence[PriceFrontier], u: float) -> tuple[float, str | None]:
    """Cheapest offer of performance u across providers, and who offers it."""
    if not frontiers:
        raise DataError("a market needs at least one provider")
    best_cost, best_id = UNREACHABLE, None
    for frontier in sorted(frontiers, key=lambda f: f.label):
        cost = frontier.cost_at(u)
        if cost < best_cost:
            best_cost, best_id = cost, frontier.label
    return best_cost, best_id
