"""Dagster job wiring the analysis ops into a single pipeline."""
from __future__ import annotations

from dagster import job

from .ops import (
    analyse_revenue,
    build_frontiers,
    ingest_attempt_logs,
    optimize_cascade,
    run_robustness_sweep,
    simulate_competition,
)


@job
def arbitrage_analysis_job():
    """ingest → frontier → optimize → (compete, revenue, robustness)."""

    optimized = optimize_cascade(build_frontiers(ingest_attempt_logs()))
    simulate_competition(optimized)
    analyse_revenue(optimized)
    run_robustness_sweep(optimized)
