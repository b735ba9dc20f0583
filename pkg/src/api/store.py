"""In-memory dataset store for the FastAPI service.

The ingested dataset (``settings.dataset_path``) is loaded once at app start-up
together with every provider's price frontier, so requests only read.
"""
from __future__ import annotations

import logging
from pathlib import Path

from src.config import settings
from src.curves import PriceFrontier, market_frontier, performance_grid, provider_frontiers
from src.ingest import Dataset

logger = logging.getLogger(__name__)


class StoreNotReady(RuntimeError):
    pass


class DatasetStore:
    """Singleton holding the dataset, its provider frontiers and the market price."""

    _dataset: Dataset | None = None
    _frontiers: dict[str, PriceFrontier] = {}
    _market: PriceFrontier | None = None

    @classmethod
    def init_store(cls, path: Path | None = None, dataset: Dataset | None = None) -> None:
        if cls._dataset is not None:
            return  # already initialised
        if dataset is None:
            path = path or settings.dataset_path
            logger.info("Loading dataset from %s …", path)
            dataset = Dataset.load(path)
        u_grid = performance_grid(settings.u_step)
        frontiers = provider_frontiers(dataset, settings.b_max, settings.grid_step, u_grid)
        cls._frontiers = {f.label: f for f in frontiers}
        cls._market = market_frontier(frontiers)
        cls._dataset = dataset
        logger.info("Store ready: %s providers x %s problems", len(dataset.providers), len(dataset))

    @classmethod
    def close_store(cls) -> None:
        if cls._dataset is not None:
            logger.info("Releasing dataset store …")
        cls._dataset, cls._frontiers, cls._market = None, {}, None

    @classmethod
    def ready(cls) -> bool:
        return cls._dataset is not None

    @classmethod
    def dataset(cls) -> Dataset:
        if cls._dataset is None:
            raise StoreNotReady("Store not initialised. Call init_store() first.")
        return cls._dataset

    @classmethod
    def frontiers(cls) -> dict[str, PriceFrontier]:
        cls.dataset()
        return cls._frontiers

    @classmethod
    def market(cls) -> PriceFrontier:
        cls.dataset()
        return cls._market
