"""Shared fixtures: small synthetic markets with known answers."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import pytest

from src.curves import PriceFrontier
from src.ingest import CostUnit, Dataset, ProblemStats

FIXTURES = Path(__file__).resolve().parents[1] / "data" / "fixtures"

Row = tuple  # (provider_id, problem_id, n, m, s_hat[, tags])


def build_dataset(rows: Iterable[Row], cost_unit: CostUnit = CostUnit.ABSTRACT) -> Dataset:
    stats = []
    for row in rows:
        provider_id, problem_id, n, m, s_hat, *rest = row
        stats.append(
            ProblemStats(
                provider_id=provider_id,
                problem_id=problem_id,
                n=n,
                m=m,
                s_hat=s_hat,
                tags=rest[0] if rest else (),
            )
        )
    return Dataset(cost_unit=cost_unit, providers={s.provider_id for s in stats}, stats=tuple(stats))


@pytest.fixture
def make_dataset() -> Callable[..., Dataset]:
    return build_dataset


@pytest.fixture
def uniform_dataset() -> Dataset:
    """One provider, three identical problems with n=4, m=2, s_hat=0.5."""
    return build_dataset([("a", f"p{j}", 4, 2, 0.5) for j in range(3)])


@pytest.fixture
def dominated_dataset() -> Dataset:
    """`beta` solves exactly what `alpha` solves, at twice the cost per attempt."""
    rows = []
    for j in range(4):
        rows.append(("alpha", f"p{j}", 4, 4, 0.1))
        rows.append(("beta", f"p{j}", 4, 4, 0.2))
    return build_dataset(rows)


@pytest.fixture
def two_segment_dataset() -> Dataset:
    """A is cheap and solves only the easy half; B is dear and solves everything half the time."""
    rows = []
    for j in range(2):
        rows.append(("A", f"easy{j}", 10, 9, 0.01, ("easy",)))
        rows.append(("B", f"easy{j}", 10, 5, 0.1, ("easy",)))
        rows.append(("A", f"hard{j}", 10, 0, 0.01, ("hard",)))
        rows.append(("B", f"hard{j}", 10, 5, 0.1, ("hard",)))
    return build_dataset(rows)


@pytest.fixture
def flat_grid() -> np.ndarray:
    return np.linspace(0.0, 1.0, 21)


@pytest.fixture
def flat_frontier(flat_grid) -> Callable[[str, float], PriceFrontier]:
    """A frontier charging the same price for every performance level."""

    def _make(label: str, price: float) -> PriceFrontier:
        return PriceFrontier(label=label, performance_grid=flat_grid, cost=np.full(flat_grid.shape, price))

    return _make


@pytest.fixture
def attempts_path() -> Path:
    return FIXTURES / "attempts.jsonl"


@pytest.fixture
def pricing_path() -> Path:
    return FIXTURES / "pricing.csv"
