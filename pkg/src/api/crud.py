"""Read helpers for the analytical endpoints."""
from __future__ import annotations

from typing import Any, Dict, List

import numpy as np

from src.arbitrage import aggregate_profit, detect_opportunity, profit_curve
from src.cascade import CascadePolicy, cascade_frontier
from src.config import settings
from src.curves import market_price

from .store import DatasetStore


def _finite(value: float) -> float | None:
    return float(value) if np.isfinite(value) else None


# ---------------------------------------------------------------------------
# Helper functions
# ---------------------------------------------------------------------------

def fetch_providers() -> List[Dict[str, Any]]:
    dataset = DatasetStore.dataset()
    frontiers = DatasetStore.frontiers()
    rows = []
    for p in dataset.providers:
        observed = [s for s in dataset.stats if s.provider_id == p]
        rows.append(
            {
                "provider_id": p,
                "problems": len(observed),
                "attempts": sum(s.n for s in observed),
                "mean_attempt_cost": float(np.mean([s.s_hat for s in observed])) if observed else None,
                "max_performance": frontiers[p].max_performance,
                "cost_unit": dataset.cost_unit.value,
            }
        )
    return rows


def fetch_frontier(provider_id: str, stride: int = 10) -> List[Dict[str, Any]] | None:
    """Every `stride`-th frontier point (always including the last); None for unknown providers."""
    frontier = DatasetStore.frontiers().get(provider_id)
    if frontier is None:
        return None
    idx = list(range(0, frontier.performance_grid.size, stride))
    if idx[-1] != frontier.performance_grid.size - 1:
        idx.append(frontier.performance_grid.size - 1)
    return [{"performance": float(frontier.performance_grid[i]), "cost": _finite(frontier.cost[i])} for i in idx]


def fetch_market_price(u: float) -> Dict[str, Any]:
    cost, provider_id = market_price(list(DatasetStore.frontiers().values()), u)
    return {"u": u, "cost": _finite(cost), "provider_id": provider_id}


def evaluate_policy(policy: CascadePolicy, u_range: tuple[float, float] | None) -> Dict[str, Any]:
    market = DatasetStore.market()
    buy = cascade_frontier(
        policy, DatasetStore.dataset(), settings.b_max, settings.grid_step, market.performance_grid
    )
    exists, witness = detect_opportunity(market, buy)
    curve = profit_curve(market, buy)
    return {
        "policy": policy.label,
        "opportunity": exists,
        "witness_u": witness,
        "aggregate_profit": aggregate_profit(market, buy, None, u_range),
        "max_margin": float(curve.margin.max()),
        "max_markup": float(curve.markup.max()),
    }
