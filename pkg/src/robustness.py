"""Search cost and robustness of fitted arbitrage policies.

Before fitting a cascade the arbitrageur has to buy price comparisons: every
sampled problem is queried on every provider, up to a per-query cap. This
module draws such search samples under a total budget, fits the optimizer on
them, and measures how the resulting policy's profit margin holds up, both
across bootstrap replicates and on a shifted problem distribution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.arbitrage import DemandWeights, OptimizationResult, OrderStrategy, mean_margin, optimize_policy
from src.cascade import cascade_frontier
from src.curves import GRID_TOLERANCE, market_frontier, performance_grid, provider_frontiers
from src.errors import EmptyDatasetError, EmptySampleError, OverlappingSplitError
from src.ingest import Dataset, ProblemStats

logger = logging.getLogger(__name__)

CI_PERCENTILES = (2.5, 97.5)


class AccountingMode(str, Enum):
    WORST_CASE = "worst-case"
    OPTIMISTIC = "optimistic"


class OptimizerConfig(BaseModel):
    """Optimizer and grid settings shared by fitting and evaluation."""

    model_config = ConfigDict(frozen=True)

    order: OrderStrategy | tuple[str, ...] = OrderStrategy.HEURISTIC
    b_max: float = Field(default=1.0, gt=0)
    cap_step: float = Field(default=0.01, gt=0)
    grid_step: float = Field(default=0.001, gt=0)
    u_step: float = Field(default=0.001, gt=0, le=1)

    def optimize(
        self,
        dataset: Dataset,
        u_range: tuple[float, float] | None,
        weights: DemandWeights | None = None,
    ) -> OptimizationResult:
        return optimize_policy(
            dataset,
            order=self.order,
            b_max=self.b_max,
            cap_step=self.cap_step,
            weights=weights,
            u_range=u_range,
            grid_step=self.grid_step,
            u_step=self.u_step,
        )


class SearchSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: Dataset
    problem_ids: tuple[str, ...]
    total_spend: float = Field(..., ge=0)
    total_budget: float = Field(..., gt=0)
    per_query_cap: float = Field(..., gt=0)
    seed: int
    accounting: AccountingMode = AccountingMode.WORST_CASE

    @model_validator(mode="after")
    def check_spend(self) -> "SearchSample":
        if self.total_spend > self.total_budget * (1 + GRID_TOLERANCE):
            raise ValueError("search spend exceeds the search budget")
        if any(s.n * s.s_hat > self.per_query_cap * (1 + GRID_TOLERANCE) for s in self.dataset.stats):
            raise ValueError("a truncated pair spends more than the per-query cap")
        return self


def _truncate(stats: ProblemStats, per_query_cap: float, rng: np.random.Generator) -> ProblemStats | None:
    """Keep as many attempts as fit the cap; the kept successes follow a hypergeometric draw."""
    kept = min(stats.n, int(np.floor(per_query_cap / stats.s_hat + GRID_TOLERANCE)))
    if kept == 0:
        return None
    if kept == stats.n:
        return stats
    successes = int(rng.hypergeometric(stats.m, stats.n - stats.m, kept)) if stats.m else 0
    return stats.model_copy(update={"n": kept, "m": successes})


def draw_search_sample(
    dataset: Dataset,
    total_budget: float,
    per_query_cap: float,
    seed: int,
    accounting: AccountingMode = AccountingMode.WORST_CASE,
) -> SearchSample:
    """Sample problems without replacement until the search budget runs out.

    Worst-case accounting charges per_query_cap for every sampled problem.
    Optimistic accounting charges the truncated spend of every provider except
    the one that would have served the query anyway (the largest spender).
    """
    if total_budget <= 0 or per_query_cap <= 0:
        raise ValueError("search budget and per-query cap must be positive")
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot sample from an empty dataset")
    rng = np.random.default_rng(seed)
    problems = dataset.problems
    chosen: list[str] = []
    stats: list[ProblemStats] = []
    spend = 0.0
    for idx in rng.permutation(len(problems)):
        problem_id = problems[idx]
        truncated = []
        for p in dataset.providers:
            observed = dataset.lookup(p, problem_id)
            if not observed.imputed:
                kept = _truncate(observed, per_query_cap, rng)
                if kept is not None:
                    truncated.append(kept)
        if accounting is AccountingMode.WORST_CASE:
            charge = per_query_cap
        else:
            spends = sorted(s.n * s.s_hat for s in truncated)
            charge = float(sum(spends[:-1]))
        if spend + charge > total_budget * (1 + GRID_TOLERANCE):
            break
        spend += charge
        chosen.append(problem_id)
        stats.extend(truncated)
    if not stats:
        raise EmptySampleError(
            f"search budget {total_budget:g} buys no price comparison at {per_query_cap:g} per query"
        )
    sample = Dataset(cost_unit=dataset.cost_unit, providers=dataset.providers, stats=tuple(stats))
    logger.debug("search.sample seed=%s problems=%s spend=%.6g", seed, len(chosen), spend)
    return SearchSample(
        dataset=sample,
        problem_ids=tuple(chosen),
        total_spend=min(spend, total_budget),
        total_budget=total_budget,
        per_query_cap=per_query_cap,
        seed=seed,
        accounting=accounting,
    )


def evaluate_margin(
    result: OptimizationResult,
    eval_dataset: Dataset,
    config: OptimizerConfig,
    u_range: tuple[float, float] | None,
) -> float:
    """Mean margin of a fitted policy against eval_dataset's market prices."""
    u_grid = performance_grid(config.u_step)
    market = market_frontier(provider_frontiers(eval_dataset, config.b_max, config.grid_step, u_grid))
    buy = cascade_frontier(result.policy, eval_dataset, config.b_max, config.grid_step, u_grid)
    return mean_margin(market, buy, u_range)


def fit_and_evaluate(
    sample: SearchSample,
    eval_dataset: Dataset,
    config: OptimizerConfig,
    u_range: tuple[float, float] | None,
    weights: DemandWeights | None = None,
) -> float:
    result = config.optimize(sample.dataset, u_range, weights)
    return evaluate_margin(result, eval_dataset, config, u_range)


@dataclass(frozen=True)
class BootstrapResult:
    mean: float
    ci_lo: float
    ci_hi: float
    estimates: np.ndarray


def bootstrap_profit_ci(
    dataset: Dataset,
    total_budget: float,
    per_query_cap: float,
    resamples: int,
    seed: int,
    u_range: tuple[float, float] | None,
    config: OptimizerConfig | None = None,
    eval_dataset: Dataset | None = None,
    accounting: AccountingMode = AccountingMode.WORST_CASE,
) -> BootstrapResult:
    """Mean margin and 95% percentile interval over independent search samples.

    Each replicate resamples problems (not attempts) with its own child seed.
    """
    if resamples < 1:
        raise ValueError("resamples must be at least 1")
    config = config or OptimizerConfig()
    target = eval_dataset if eval_dataset is not None else dataset
    children = np.random.SeedSequence(seed).spawn(resamples)
    estimates = np.empty(resamples)
    for r, child in enumerate(children):
        sample = draw_search_sample(
            dataset, total_budget, per_query_cap, int(child.generate_state(1)[0]), accounting
        )
        estimates[r] = fit_and_evaluate(sample, target, config, u_range)
        if (r + 1) % 100 == 0:
            logger.info("bootstrap.progress done=%s of=%s", r + 1, resamples)
    lo, hi = np.percentile(estimates, CI_PERCENTILES)
    return BootstrapResult(mean=float(estimates.mean()), ci_lo=float(lo), ci_hi=float(hi), estimates=estimates)


def ood_evaluate(
    train: Dataset,
    test: Dataset,
    config: OptimizerConfig,
    u_range: tuple[float, float] | None,
    allow_overlap: bool = False,
) -> float:
    """Fit on one problem split, report the mean margin on the other."""
    overlap = set(train.problems) & set(test.problems)
    if overlap and not allow_overlap:
        raise OverlappingSplitError(f"splits share {len(overlap)} problems, e.g. {sorted(overlap)[0]!r}")
    result = config.optimize(train, u_range)
    margin = evaluate_margin(result, test, config, u_range)
    logger.info("ood.evaluate policy=%s margin=%.6g", result.policy.label, margin)
    return margin


def search_budget_sweep(
    dataset: Dataset,
    budgets: Sequence[float],
    per_query_cap: float,
    resamples: int,
    seed: int,
    u_range: tuple[float, float] | None,
    config: OptimizerConfig | None = None,
    eval_dataset: Dataset | None = None,
    accounting: AccountingMode = AccountingMode.WORST_CASE,
) -> pd.DataFrame:
    """Bootstrap margin per search budget; with eval_dataset, the out-of-distribution sweep."""
    rows = []
    for budget in budgets:
        ci = bootstrap_profit_ci(
            dataset, budget, per_query_cap, resamples, seed, u_range, config, eval_dataset, accounting
        )
        rows.append({"budget": budget, "mean_margin": ci.mean, "ci_lo": ci.ci_lo, "ci_hi": ci.ci_hi})
        logger.info("sweep.budget budget=%g mean_margin=%.6g ci=[%.6g, %.6g]", budget, ci.mean, ci.ci_lo, ci.ci_hi)
    return pd.DataFrame(rows, columns=["budget", "mean_margin", "ci_lo", "ci_hi"])
