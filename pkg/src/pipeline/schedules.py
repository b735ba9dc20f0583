"""Dagster schedules for automated runs."""
from __future__ import annotations

from dagster import ScheduleDefinition

from .jobs import arbitrage_analysis_job

# Re-run every night at 02:00 so the analyses follow the growing attempt logs

nightly_arbitrage_schedule = ScheduleDefinition(
    job=arbitrage_analysis_job,
    cron_schedule="0 2 * * *",  # minute hour day month dow
    execution_timezone="UTC",
    name="nightly_arbitrage_schedule",
)
