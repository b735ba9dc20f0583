"""FastAPI application exposing analytical endpoints over an ingested attempt dataset.

Run locally with:

    uvicorn src.api.main:app --reload

The dataset is the file written by ``python -m src.cli ingest`` (path from
``settings.dataset_path``). Endpoints answer market questions: who offers which
performance at what cost, and whether a given cascade could undercut them.
"""
from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException, Path, Query, Request
from fastapi.responses import JSONResponse

from src.errors import DataError, ProviderNotFoundError

from . import crud, schemas
from .store import DatasetStore, StoreNotReady

logger = logging.getLogger(__name__)

app = FastAPI(title="Inference Arbitrage API", version="0.1.0")


# ---------------------------------------------------------------------------
# Lifespan events
# ---------------------------------------------------------------------------

@app.on_event("startup")
async def _startup() -> None:  # pragma: no cover – side-effect only
    try:
        DatasetStore.init_store()
        logger.info("API started – dataset store initialised")
    except (OSError, DataError) as exc:
        logger.warning("API started without data: %s", exc)


@app.on_event("shutdown")
async def _shutdown() -> None:  # pragma: no cover
    DatasetStore.close_store()
    logger.info("API shutdown – dataset store released")


@app.exception_handler(StoreNotReady)
async def _store_not_ready(request: Request, exc: StoreNotReady) -> JSONResponse:
    logger.warning("%s %s before the dataset store was loaded", request.method, request.url.path)
    return JSONResponse(
        status_code=503, content={"detail": "No dataset loaded; run `python -m src.cli ingest` first"}
    )


# ---------------------------------------------------------------------------
# Endpoints
# ---------------------------------------------------------------------------

@app.get(
    "/api/providers",
    response_model=schemas.ProvidersResponse,
    summary="Providers in the dataset",
)
async def providers() -> schemas.ProvidersResponse:
    items = [schemas.ProviderSummary(**row) for row in crud.fetch_providers()]
    return schemas.ProvidersResponse(items=items)


@app.get(
    "/api/providers/{provider_id}/frontier",
    response_model=schemas.FrontierResponse,
    summary="Cost to reach each performance level with one provider",
)
async def provider_frontier(
    provider_id: str = Path(..., title="Provider id"),
    stride: int = Query(10, ge=1, le=1000),
) -> schemas.FrontierResponse:
    rows = crud.fetch_frontier(provider_id, stride)
    if rows is None:
        raise HTTPException(status_code=404, detail="Provider not found")
    points = [schemas.FrontierPoint(**row) for row in rows]
    return schemas.FrontierResponse(provider_id=provider_id, points=points)


@app.get(
    "/api/market/price",
    response_model=schemas.MarketPriceResponse,
    summary="Market price of a performance level",
)
async def market_price(u: float = Query(..., ge=0, le=1)) -> schemas.MarketPriceResponse:
    return schemas.MarketPriceResponse(**crud.fetch_market_price(u))


@app.post(
    "/api/arbitrage/evaluate",
    response_model=schemas.EvaluateResponse,
    summary="Profit of a cascade policy against the market",
)
async def evaluate(request: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    u_range = None if request.u_min is None else (request.u_min, request.u_max)
    try:
        row = crud.evaluate_policy(request.policy, u_range)
    except ProviderNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except DataError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return schemas.EvaluateResponse(**row)


# ---------------------------------------------------------------------------
# Health and root
# ---------------------------------------------------------------------------

@app.get("/health")
async def health() -> JSONResponse:
    return JSONResponse({"status": "ok", "dataset_loaded": DatasetStore.ready()})


@app.get("/")
async def root() -> JSONResponse:
    return JSONResponse({"message": "Inference Arbitrage API – see /docs"})
