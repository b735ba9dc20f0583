"""Pydantic request and response models for the analytical API."""
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from src.cascade import CascadePolicy


class ProviderSummary(BaseModel):
    provider_id: str
    problems: int = Field(..., ge=0, description="Problems with recorded attempts")
    attempts: int = Field(..., ge=0)
    mean_attempt_cost: Optional[float] = None
    max_performance: Optional[float] = Field(None, description="Highest reachable performance level")
    cost_unit: str


class ProvidersResponse(BaseModel):
    items: List[ProviderSummary]


class FrontierPoint(BaseModel):
    performance: float
    cost: Optional[float] = Field(None, description="Expected cost; null where unreachable")


class FrontierResponse(BaseModel):
    provider_id: str
    points: List[FrontierPoint]


class MarketPriceResponse(BaseModel):
    u: float
    cost: Optional[float] = None
    provider_id: Optional[str] = None


class EvaluateRequest(BaseModel):
    policy: CascadePolicy
    u_min: Optional[float] = Field(None, ge=0, le=1)
    u_max: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def check_range(self) -> "EvaluateRequest":
        if (self.u_min is None) != (self.u_max is None):
            raise ValueError("u_min and u_max go together")
        if self.u_min is not None and self.u_min > self.u_max:
            raise ValueError("u_min exceeds u_max")
        return self


class EvaluateResponse(BaseModel):
    policy: str
    opportunity: bool
    witness_u: Optional[float] = None
    aggregate_profit: float = Field(..., ge=0)
    max_margin: float
    max_markup: float
