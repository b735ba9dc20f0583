"""Dagster repository for the inference-arbitrage analyses.

Run locally with::

    dagster dev

This exposes the UI at http://localhost:3000 where you can run & monitor the
`arbitrage_analysis_job` and its nightly schedule.
"""
from __future__ import annotations

from dagster import Definitions

from .jobs import arbitrage_analysis_job
from .schedules import nightly_arbitrage_schedule

# Dagster entry-point. The `dagster` CLI discovers this "defs" object.

defs = Definitions(jobs=[arbitrage_analysis_job], schedules=[nightly_arbitrage_schedule])
