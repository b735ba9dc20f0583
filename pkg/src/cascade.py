"""Cascade arbitrage policies: query providers in a fixed order, each up to a cap.

Given a per-issue budget b, provider i receives whatever is left after the
providers before it claimed their caps, clamped to [0, tau_i]. Providers attempt
independently, so problem j is solved with probability

    1 - prod_i (1 - u_ij(b_i)).

Spend is modelled continuously: cumulative spend x runs through the providers'
slices in cap order, and the expected spend is |J| * integral (1 - u(x)) dx up to
min(b, sum tau). Revenue is attributed to provider i by integrating the same
survival over its slice of the spend axis, so the shares add up to the total.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.curves import (
    GRID_TOLERANCE,
    PriceFrontier,
    ProviderCurve,
    budget_grid,
    expected_cost_profile,
    frontier_from_curve,
    pass_at_budgets,
    provider_expected_cost,
    provider_performance,
)
from src.errors import DataError, EmptyDatasetError
from src.ingest import Dataset, ProblemStats

logger = logging.getLogger(__name__)


class CascadeStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    provider_id: str = Field(..., min_length=1)
    cap: float = Field(..., ge=0)


class CascadePolicy(BaseModel):
    """Ordered providers with per-issue spending caps."""

    model_config = ConfigDict(frozen=True)

    steps: tuple[CascadeStep, ...] = Field(..., min_length=1)
    b_max: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_steps(self) -> "CascadePolicy":
        providers = [s.provider_id for s in self.steps]
        if len(set(providers)) != len(providers):
            raise ValueError("a provider may appear only once in a cascade")
        if self.b_max is not None and self.total_cap < self.b_max - GRID_TOLERANCE * max(1.0, self.b_max):
            raise ValueError(f"caps sum to {self.total_cap:g}, below b_max {self.b_max:g}")
        return self

    @classmethod
    def from_caps(cls, providers: Sequence[str], caps: Sequence[float], b_max: float | None = None) -> "CascadePolicy":
        if len(providers) != len(caps):
            raise ValueError("one cap per provider")
        steps = tuple(CascadeStep(provider_id=p, cap=float(c)) for p, c in zip(providers, caps))
        return cls(steps=steps, b_max=b_max)

    @classmethod
    def single(cls, provider_id: str, cap: float) -> "CascadePolicy":
        return cls.from_caps([provider_id], [cap], b_max=cap if cap > 0 else None)

    @property
    def providers(self) -> tuple[str, ...]:
        return tuple(s.provider_id for s in self.steps)

    @property
    def caps(self) -> np.ndarray:
        return np.array([s.cap for s in self.steps], dtype=float)

    @property
    def starts(self) -> np.ndarray:
        """Cumulative spend at which each provider's slice begins."""
        caps = self.caps
        return np.concatenate(([0.0], np.cumsum(caps)[:-1]))

    @property
    def total_cap(self) -> float:
        return float(sum(s.cap for s in self.steps))

    @property
    def label(self) -> str:
        if len(self.steps) == 1:
            return self.steps[0].provider_id
        return ">".join(f"{s.provider_id}:{s.cap:g}" for s in self.steps)


def save_policy(policy: CascadePolicy, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(policy.model_dump_json(indent=2), encoding="utf-8")


def load_policy(path: Path) -> CascadePolicy:
    try:
        return CascadePolicy.model_validate_json(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text (byte {exc.start})") from exc
    except ValidationError as exc:
        raise DataError(f"{path}: invalid cascade policy: {exc.errors()[0]['msg']}") from exc


# ---------------------------------------------------------------------------
# Allocation and solve probability
# ---------------------------------------------------------------------------

def allocate_budget(policy: CascadePolicy, b: float) -> np.ndarray:
    """b_i = min(max(b - sum_{k<i} tau_k, 0), tau_i)."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    return np.clip(b - policy.starts, 0.0, policy.caps)


def _combine(solved: np.ndarray | None, p: np.ndarray) -> np.ndarray:
    # 1 - prod(1 - p_i), accumulated so that a single provider stays exactly p
    return p if solved is None else solved + (1.0 - solved) * p


def cascade_issue_prob(policy: CascadePolicy, dataset: Dataset, problem_id: str, b: float) -> float:
    allocation = allocate_budget(policy, b)
    solved = None
    for step, b_i in zip(policy.steps, allocation):
        stats = dataset.lookup(step.provider_id, problem_id)
        solved = _combine(solved, pass_at_budgets(stats, np.array([b_i])))
    return float(solved[0])


class CascadeModel:
    """A dataset on a budget grid, ready to evaluate many cascades over it."""

    def __init__(self, dataset: Dataset, b_max: float, grid_step: float) -> None:
        if len(dataset) == 0:
            raise EmptyDatasetError("dataset has no problems")
        self.dataset = dataset
        self.grid = budget_grid(b_max, grid_step)
        self._stats: dict[str, list[ProblemStats]] = {}

    def _provider_stats(self, provider_id: str) -> list[ProblemStats]:
        if provider_id not in self._stats:
            self._stats[provider_id] = self.dataset.stats_for(provider_id)
        return self._stats[provider_id]

    def solve_matrix(self, policy: CascadePolicy) -> np.ndarray:
        """Per-problem cascade solve probability on the grid, shape (|J|, grid)."""
        solved = None
        for step, start in zip(policy.steps, policy.starts):
            allocation = np.clip(self.grid - start, 0.0, step.cap)
            p = np.vstack([pass_at_budgets(s, allocation) for s in self._provider_stats(step.provider_id)])
            solved = _combine(solved, p)
        return solved

    def curve(self, policy: CascadePolicy) -> ProviderCurve:
        performance = self.solve_matrix(policy).mean(axis=0)
        problem_count = len(self.dataset)
        return ProviderCurve(
            provider_id=policy.label,
            budget_grid=self.grid,
            performance=performance,
            expected_cost=expected_cost_profile(self.grid, performance, problem_count, spend_limit=policy.total_cap),
            problem_count=problem_count,
        )


def cascade_performance(policy: CascadePolicy, dataset: Dataset, b: float) -> float:
    """Mean cascade solve probability over all problems at budget b."""
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset has no problems")
    if b < 0:
        raise ValueError("budget must be non-negative")
    allocation = allocate_budget(policy, b)
    solved = None
    for step, b_i in zip(policy.steps, allocation):
        p = np.array([pass_at_budgets(s, np.array([b_i]))[0] for s in dataset.stats_for(step.provider_id)])
        solved = _combine(solved, p)
    return float(solved.mean())


def build_cascade_curve(policy: CascadePolicy, dataset: Dataset, b_max: float, grid_step: float) -> ProviderCurve:
    return CascadeModel(dataset, b_max, grid_step).curve(policy)


def cascade_expected_cost(policy: CascadePolicy, dataset: Dataset, b: float, grid_step: float = 0.001) -> float:
    """Expected total spend of the cascade over all problems at per-issue budget b."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    if b == 0:
        if len(dataset) == 0:
            raise EmptyDatasetError("dataset has no problems")
        return 0.0
    return float(build_cascade_curve(policy, dataset, b, grid_step).expected_cost[-1])


def cascade_frontier(
    policy: CascadePolicy,
    dataset: Dataset,
    b_max: float,
    grid_step: float,
    u_grid: np.ndarray,
) -> PriceFrontier:
    return frontier_from_curve(build_cascade_curve(policy, dataset, b_max, grid_step), u_grid)


# ---------------------------------------------------------------------------
# Revenue attribution
# ---------------------------------------------------------------------------

def revenue_split_from_curve(policy: CascadePolicy, curve: ProviderCurve, b: float) -> dict[str, float]:
    """Split c(b) across providers by their slices of the cumulative-spend axis."""
    grid = curve.budget_grid
    if b < 0 or b > grid[-1] * (1 + GRID_TOLERANCE):
        raise ValueError(f"budget {b:g} outside the curve's grid [0, {grid[-1]:g}]")
    ends = np.minimum(policy.starts + policy.caps, b)
    # past the last cap the spend curve is flat; anchor those ends at b so the
    # shares telescope to c(b) exactly
    ends[policy.starts + policy.caps >= policy.total_cap - GRID_TOLERANCE] = b
    bounds = np.concatenate(([0.0], ends))
    shares = np.diff(np.interp(bounds, grid, curve.expected_cost))
    return {p: float(max(s, 0.0)) for p, s in zip(policy.providers, shares)}


def revenue_split(policy: CascadePolicy, dataset: Dataset, b: float, grid_step: float = 0.001) -> dict[str, float]:
    """Expected expenditure each provider receives at per-issue budget b."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    if b == 0:
        if len(dataset) == 0:
            raise EmptyDatasetError("dataset has no problems")
        return {p: 0.0 for p in policy.providers}
    return revenue_split_from_curve(policy, build_cascade_curve(policy, dataset, b, grid_step), b)


# ---------------------------------------------------------------------------
# Provider order
# ---------------------------------------------------------------------------

def order_by_low_budget_efficiency(
    dataset: Dataset,
    grid_step: float,
    providers: Iterable[str] | None = None,
) -> list[str]:
    """Providers sorted by expected cost per unit performance at the smallest budget."""
    ranked = []
    for p in providers or dataset.providers:
        performance = provider_performance(dataset, p, grid_step)
        cost = provider_expected_cost(dataset, p, grid_step, grid_step)
        ranked.append((cost / performance if performance > 0 else np.inf, p))
    order = [p for _, p in sorted(ranked)]
    logger.debug("Low-budget efficiency order: %s", order)
    return order
