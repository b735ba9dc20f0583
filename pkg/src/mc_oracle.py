"""Monte Carlo ground truth for the analytic curves.

Each trial shuffles a problem's recorded attempts (sampling without
replacement, the model behind the pass@k estimator) and runs them in order
until one succeeds or the budget is gone. Two spend models:

* continuous: a success lands uniformly inside its attempt's spend interval,
  and spend runs on to the budget once the recorded attempts are exhausted.
  This is the model the analytic curves integrate.
* lumpy: only whole attempts are bought, as many as fit the budget (or the
  provider's cascade slice).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.cascade import CascadePolicy, allocate_budget
from src.curves import GRID_TOLERANCE
from src.errors import EmptyDatasetError
from src.ingest import Dataset, ProblemStats

logger = logging.getLogger(__name__)

BATCH_TRIALS = 10_000


class SpendMode(str, Enum):
    CONTINUOUS = "continuous"
    LUMPY = "lumpy"


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: int = Field(default=100_000, ge=1)
    seed: int = 0
    spend_mode: SpendMode = SpendMode.CONTINUOUS


@dataclass(frozen=True)
class ProviderSimulation:
    solve_rate: float
    mean_spend: float
    trials: int

    @property
    def solve_rate_stderr(self) -> float:
        return float(np.sqrt(self.solve_rate * (1.0 - self.solve_rate) / self.trials))


@dataclass(frozen=True)
class CascadeSimulation:
    """Dataset-level estimates; expected_cost sums over problems like provider_expected_cost."""

    performance: float
    expected_cost: float
    provider_spend: dict[str, float]
    trials: int
    problem_solve_rates: np.ndarray = field(repr=False)

    @property
    def performance_stderr(self) -> float:
        # problems are simulated independently
        p = self.problem_solve_rates
        return float(np.sqrt(np.sum(p * (1.0 - p) / self.trials)) / p.size)


def _first_success(n: int, m: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Index of the first success in a random order of the n attempts; n when none succeeds."""
    if m == 0:
        return np.full(trials, n, dtype=np.int64)
    base = np.zeros(n, dtype=bool)
    base[:m] = True
    first = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, BATCH_TRIALS):
        stop = min(trials, start + BATCH_TRIALS)
        shuffled = rng.permuted(np.broadcast_to(base, (stop - start, n)).copy(), axis=1)
        first[start:stop] = shuffled.argmax(axis=1)
    return first


def _run_slice(
    stats: ProblemStats,
    budget: float,
    trials: int,
    mode: SpendMode,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial (solved, spend) of one provider given `budget` on one problem."""
    first = _first_success(stats.n, stats.m, trials, rng)
    offset = rng.random(trials)
    if mode is SpendMode.CONTINUOUS:
        when = (first + offset) * stats.s_hat
        when[first >= stats.n] = np.inf
        return when <= budget, np.minimum(when, budget)
    attempts = min(int(np.floor(budget / stats.s_hat + GRID_TOLERANCE)), stats.n)
    solved = first < attempts
    return solved, np.minimum(first + 1, attempts) * stats.s_hat


def simulate_provider(stats: ProblemStats, b: float, config: SimConfig) -> ProviderSimulation:
    """Empirical solve rate and mean spend of one provider on one problem at budget b."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    rng = np.random.default_rng(config.seed)
    solved, spend = _run_slice(stats, b, config.trials, config.spend_mode, rng)
    return ProviderSimulation(solve_rate=float(solved.mean()), mean_spend=float(spend.mean()), trials=config.trials)


def simulate_cascade(policy: CascadePolicy, dataset: Dataset, b: float, config: SimConfig) -> CascadeSimulation:
    """Run the cascade on every problem; each problem draws from its own child seed."""
    if b < 0:
        raise ValueError("budget must be non-negative")
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset has no problems")
    allocation = allocate_budget(policy, b)
    streams = np.random.SeedSequence(config.seed).spawn(len(dataset))
    provider_spend = {p: 0.0 for p in policy.providers}
    solve_rates = np.empty(len(dataset))
    for k, (problem_id, stream) in enumerate(zip(dataset.problems, streams)):
        rng = np.random.default_rng(stream)
        pending = np.ones(config.trials, dtype=bool)
        for step, b_i in zip(policy.steps, allocation):
            stats = dataset.lookup(step.provider_id, problem_id)
            solved, spend = _run_slice(stats, float(b_i), config.trials, config.spend_mode, rng)
            provider_spend[step.provider_id] += float(np.where(pending, spend, 0.0).mean())
            pending &= ~solved
        solve_rates[k] = 1.0 - pending.mean()
    result = CascadeSimulation(
        performance=float(solve_rates.mean()),
        expected_cost=float(sum(provider_spend.values())),
        provider_spend=provider_spend,
        trials=config.trials,
        problem_solve_rates=solve_rates,
    )
    logger.info(
        "simulate.cascade policy=%s b=%g mode=%s performance=%.6g cost=%.6g",
        policy.label, b, config.spend_mode.value, result.performance, result.expected_cost,
    )
    return result


def simulate_dataset_provider(dataset: Dataset, provider_id: str, b: float, config: SimConfig) -> CascadeSimulation:
    """A single provider over all problems, comparable with provider_performance/expected_cost."""
    dataset.require_provider(provider_id)
    return simulate_cascade(CascadePolicy.from_caps([provider_id], [max(b, 0.0)]), dataset, b, config)
