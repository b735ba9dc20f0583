"""Load provider attempt logs, price them and aggregate per provider x problem.

An attempt log is a JSON-lines file, one attempt per line:

    {"provider_id": "gpt-5-mini", "problem_id": "django__django-11099",
     "success": false, "input_tokens": 81234, "output_tokens": 2210,
     "cached_input_tokens": 60000, "tags": ["django"]}

A line carries either a `cost` (already in the dataset's cost unit) or token
counts that are priced with a pricing table (USD per 1M tokens, with a cache
discount) or converted to FLOPs as 2 * N * D.

Aggregation folds attempts into `ProblemStats(n, m, s_hat)`. Provider x problem
pairs that were never observed are imputed on lookup: they never solve and cost
the provider's mean `s_hat` per attempt.

Usage:
    python -m src.cli ingest --logs attempts.jsonl --pricing pricing.csv
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from src.errors import (
    DataError,
    DegenerateCostError,
    EmptyDatasetError,
    InvalidRecordError,
    LogParseError,
    ProblemNotFoundError,
    ProviderNotFoundError,
    UnitMismatchError,
)

logger = logging.getLogger(__name__)

TOKENS_PER_PRICE_UNIT = 1_000_000
PRICING_COLUMNS = ("provider_id", "input_price", "output_price", "cache_discount")


class CostUnit(str, Enum):
    USD = "USD"
    FLOPS = "FLOPs"
    ABSTRACT = "abstract"


def _normalise_tags(value: Iterable[str] | None) -> tuple[str, ...]:
    return tuple(sorted(set(value or ())))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class AttemptRecord(BaseModel):
    """One observed attempt of one provider on one problem."""

    model_config = ConfigDict(frozen=True)

    provider_id: str = Field(..., min_length=1)
    problem_id: str = Field(..., min_length=1)
    success: bool
    cost: float | None = Field(default=None, ge=0)
    input_tokens: int | None = Field(default=None, ge=0)
    output_tokens: int | None = Field(default=None, ge=0)
    cached_input_tokens: int | None = Field(default=None, ge=0)
    cost_unit: CostUnit | None = None
    tags: tuple[str, ...] = ()

    @field_validator("tags", mode="before")
    @classmethod
    def normalise_tags(cls, value: Iterable[str] | None) -> tuple[str, ...]:
        return _normalise_tags(value)

    @model_validator(mode="after")
    def check_counts(self) -> "AttemptRecord":
        if (
            self.cached_input_tokens is not None
            and self.input_tokens is not None
            and self.cached_input_tokens > self.input_tokens
        ):
            raise ValueError("cached_input_tokens exceeds input_tokens")
        if self.cost is None and self.input_tokens is None and self.output_tokens is None:
            raise ValueError("record needs a cost or token counts")
        return self


class PricingEntry(BaseModel):
    """Per-provider token prices, per 1M tokens."""

    model_config = ConfigDict(frozen=True)

    provider_id: str = Field(..., min_length=1)
    input_price: float = Field(..., ge=0)
    output_price: float = Field(..., ge=0)
    cache_discount: float = Field(default=0.0, ge=0, le=1)
    model_params: float | None = Field(default=None, gt=0, description="Parameter count N for FLOP pricing")


class ProblemStats(BaseModel):
    """Aggregated attempts of one provider on one problem."""

    model_config = ConfigDict(frozen=True)

    provider_id: str
    problem_id: str
    n: int = Field(..., ge=0)
    m: int = Field(..., ge=0)
    s_hat: float = Field(..., gt=0)
    tags: tuple[str, ...] = ()
    imputed: bool = False

    @field_validator("tags", mode="before")
    @classmethod
    def normalise_tags(cls, value: Iterable[str] | None) -> tuple[str, ...]:
        return _normalise_tags(value)

    @model_validator(mode="after")
    def check_counts(self) -> "ProblemStats":
        if self.m > self.n:
            raise ValueError("m exceeds n")
        if self.n == 0 and not self.imputed:
            raise ValueError("observed stats need at least one attempt")
        return self


class Dataset(BaseModel):
    """Per provider x problem statistics in a single cost unit."""

    model_config = ConfigDict(frozen=True)

    cost_unit: CostUnit = CostUnit.ABSTRACT
    providers: tuple[str, ...]
    stats: tuple[ProblemStats, ...] = ()

    _index: dict[tuple[str, str], ProblemStats] = PrivateAttr(default_factory=dict)
    _problems: tuple[str, ...] = PrivateAttr(default=())
    _problem_tags: dict[str, tuple[str, ...]] = PrivateAttr(default_factory=dict)
    _mean_s_hat: dict[str, float] = PrivateAttr(default_factory=dict)

    @field_validator("providers", mode="before")
    @classmethod
    def sort_providers(cls, value: Iterable[str]) -> tuple[str, ...]:
        return tuple(sorted(set(value)))

    @field_validator("stats", mode="after")
    @classmethod
    def sort_stats(cls, value: tuple[ProblemStats, ...]) -> tuple[ProblemStats, ...]:
        return tuple(sorted(value, key=lambda s: (s.provider_id, s.problem_id)))

    @model_validator(mode="after")
    def check_pairs(self) -> "Dataset":
        seen: set[tuple[str, str]] = set()
        for s in self.stats:
            key = (s.provider_id, s.problem_id)
            if key in seen:
                raise ValueError(f"duplicate stats for provider {key[0]!r} on problem {key[1]!r}")
            if s.provider_id not in self.providers:
                raise ValueError(f"stats reference unknown provider {s.provider_id!r}")
            if s.imputed:
                raise ValueError("imputed stats are never stored")
            seen.add(key)
        return self

    def model_post_init(self, __context) -> None:
        tags: dict[str, set[str]] = defaultdict(set)
        costs: dict[str, list[float]] = defaultdict(list)
        for s in self.stats:
            self._index[(s.provider_id, s.problem_id)] = s
            tags[s.problem_id].update(s.tags)
            costs[s.provider_id].append(s.s_hat)
        self._problems = tuple(sorted(tags))
        self._problem_tags = {j: tuple(sorted(t)) for j, t in tags.items()}
        self._mean_s_hat = {p: math.fsum(c) / len(c) for p, c in costs.items()}

    # -- accessors ----------------------------------------------------------

    @property
    def problems(self) -> tuple[str, ...]:
        return self._problems

    def __len__(self) -> int:
        return len(self._problems)

    def require_provider(self, provider_id: str) -> None:
        if provider_id not in self.providers:
            raise ProviderNotFoundError(f"unknown provider {provider_id!r}")

    def problem_tags(self, problem_id: str) -> tuple[str, ...]:
        return self._problem_tags.get(problem_id, ())

    def lookup(self, provider_id: str, problem_id: str) -> ProblemStats:
        """Stats for a pair; unobserved pairs come back imputed (n = 0)."""
        self.require_provider(provider_id)
        if problem_id not in self._problem_tags:
            raise ProblemNotFoundError(f"unknown problem {problem_id!r}")
        found = self._index.get((provider_id, problem_id))
        if found is not None:
            return found
        return ProblemStats(
            provider_id=provider_id,
            problem_id=problem_id,
            n=0,
            m=0,
            s_hat=self._mean_s_hat.get(provider_id, 1.0),
            tags=self.problem_tags(problem_id),
            imputed=True,
        )

    def stats_for(self, provider_id: str) -> list[ProblemStats]:
        return [self.lookup(provider_id, j) for j in self._problems]

    def subset(self, problem_ids: Iterable[str]) -> "Dataset":
        keep = set(problem_ids)
        return Dataset(
            cost_unit=self.cost_unit,
            providers=self.providers,
            stats=tuple(s for s in self.stats if s.problem_id in keep),
        )

    def with_providers(self, provider_ids: Iterable[str]) -> "Dataset":
        """The same problems seen by a subset of the providers."""
        keep = set(provider_ids)
        for p in keep:
            self.require_provider(p)
        return Dataset(
            cost_unit=self.cost_unit,
            providers=keep,
            stats=tuple(s for s in self.stats if s.provider_id in keep),
        )

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "provider_id": s.provider_id,
                "problem_id": s.problem_id,
                "n": s.n,
                "m": s.m,
                "s_hat": s.s_hat,
                "tags": ";".join(s.tags),
            }
            for s in self.stats
        ]
        return pd.DataFrame(rows, columns=["provider_id", "problem_id", "n", "m", "s_hat", "tags"])

    # -- persistence --------------------------------------------------------

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Dataset":
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: not UTF-8 text (byte {exc.start})") from exc
        except ValidationError as exc:
            raise DataError(f"{path}: not a valid dataset file ({exc.error_count()} errors)") from exc


# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------

def price_attempt(
    input_tokens: int,
    output_tokens: int,
    cached_input_tokens: int,
    pricing: PricingEntry,
) -> float:
    """USD cost of one attempt; cached input is billed at (1 - cache_discount)."""
    if min(input_tokens, output_tokens, cached_input_tokens) < 0:
        raise InvalidRecordError("token counts must be non-negative")
    if cached_input_tokens > input_tokens:
        raise InvalidRecordError(
            f"cached_input_tokens ({cached_input_tokens}) exceeds input_tokens ({input_tokens})"
        )
    uncached = input_tokens - cached_input_tokens
    total = (
        uncached * pricing.input_price
        + cached_input_tokens * pricing.input_price * (1.0 - pricing.cache_discount)
        + output_tokens * pricing.output_price
    )
    return total / TOKENS_PER_PRICE_UNIT


def flop_cost(model_params: float, generated_tokens: float) -> float:
    """Inference FLOPs approximated as 2 * N * D."""
    if model_params <= 0 or generated_tokens < 0:
        raise InvalidRecordError("flop_cost needs N > 0 and D >= 0")
    return 2.0 * model_params * generated_tokens


def price_records(
    records: Sequence[AttemptRecord],
    pricing: Mapping[str, PricingEntry],
    cost_unit: CostUnit = CostUnit.USD,
) -> list[AttemptRecord]:
    """Fill in `cost` for token-only records; records with a cost are kept as is."""
    priced: list[AttemptRecord] = []
    for r in records:
        if r.cost_unit is not None and r.cost_unit != cost_unit:
            raise UnitMismatchError(f"record in {r.cost_unit.value} while pricing in {cost_unit.value}")
        if r.cost is not None:
            priced.append(r if r.cost_unit else r.model_copy(update={"cost_unit": cost_unit}))
            continue
        entry = pricing.get(r.provider_id)
        if entry is None:
            raise ProviderNotFoundError(f"no pricing entry for provider {r.provider_id!r}")
        if cost_unit is CostUnit.USD:
            cost = price_attempt(r.input_tokens or 0, r.output_tokens or 0, r.cached_input_tokens or 0, entry)
        elif cost_unit is CostUnit.FLOPS:
            if entry.model_params is None:
                raise DataError(f"pricing entry for {r.provider_id!r} has no model_params for FLOP pricing")
            cost = flop_cost(entry.model_params, r.output_tokens or 0)
        else:
            raise UnitMismatchError("token counts can only be priced in USD or FLOPs")
        priced.append(r.model_copy(update={"cost": cost, "cost_unit": cost_unit}))
    return priced


def reprice_cached(record: AttemptRecord, pricing: PricingEntry, cached_input_tokens: int) -> AttemptRecord:
    """Re-price a token record as if `cached_input_tokens` had been served from cache."""
    if record.input_tokens is None:
        raise InvalidRecordError("re-pricing needs token counts")
    cost = price_attempt(record.input_tokens, record.output_tokens or 0, cached_input_tokens, pricing)
    return record.model_copy(
        update={"cost": cost, "cached_input_tokens": cached_input_tokens, "cost_unit": CostUnit.USD}
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate(records: Sequence[AttemptRecord], cost_unit: CostUnit | None = None) -> Dataset:
    """Fold priced attempts into one ProblemStats per provider x problem."""
    if not records:
        raise EmptyDatasetError("no attempt records to aggregate")
    units = {r.cost_unit for r in records if r.cost_unit is not None}
    if cost_unit is not None:
        units.add(cost_unit)
    if len(units) > 1:
        raise UnitMismatchError(f"records mix cost units: {sorted(u.value for u in units)}")
    unit = units.pop() if units else CostUnit.ABSTRACT

    outcomes: dict[tuple[str, str], list[tuple[bool, float]]] = defaultdict(list)
    tags: dict[str, set[str]] = defaultdict(set)
    for r in records:
        if r.cost is None:
            raise InvalidRecordError(
                f"unpriced attempt of {r.provider_id!r} on {r.problem_id!r}; price it with a pricing table first"
            )
        outcomes[(r.provider_id, r.problem_id)].append((r.success, r.cost))
        tags[r.problem_id].update(r.tags)

    stats = []
    for (provider_id, problem_id), attempts in sorted(outcomes.items()):
        s_hat = math.fsum(c for _, c in attempts) / len(attempts)
        if s_hat <= 0:
            raise DegenerateCostError(f"all attempts of {provider_id!r} on {problem_id!r} cost 0")
        stats.append(
            ProblemStats(
                provider_id=provider_id,
                problem_id=problem_id,
                n=len(attempts),
                m=sum(1 for ok, _ in attempts if ok),
                s_hat=s_hat,
                tags=tags[problem_id],
            )
        )
    dataset = Dataset(cost_unit=unit, providers={p for p, _ in outcomes}, stats=tuple(stats))
    logger.info(
        "Aggregated %s attempts into %s providers x %s problems (%s)",
        len(records), len(dataset.providers), len(dataset), unit.value,
    )
    return dataset


def merge_datasets(left: Dataset, right: Dataset) -> Dataset:
    """Merge two shards holding disjoint provider x problem pairs."""
    if left.cost_unit != right.cost_unit:
        raise UnitMismatchError(f"cannot merge {left.cost_unit.value} with {right.cost_unit.value}")
    tags: dict[str, set[str]] = defaultdict(set)
    for s in (*left.stats, *right.stats):
        tags[s.problem_id].update(s.tags)
    stats = tuple(s.model_copy(update={"tags": tuple(sorted(tags[s.problem_id]))}) for s in (*left.stats, *right.stats))
    try:
        return Dataset(cost_unit=left.cost_unit, providers=(*left.providers, *right.providers), stats=stats)
    except ValidationError as exc:
        raise DataError(f"shards overlap: {exc.errors()[0]['msg']}") from exc


def split_by_tag(dataset: Dataset, tag: str) -> tuple[Dataset, Dataset]:
    """Partition problems by tag membership; every provider is kept on both sides."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    tagged = [j for j in dataset.problems if tag in dataset.problem_tags(j)]
    untagged = [j for j in dataset.problems if tag not in dataset.problem_tags(j)]
    if not tagged or not untagged:
        logger.warning("Tag %r leaves one split empty (%s with, %s without)", tag, len(tagged), len(untagged))
    return dataset.subset(tagged), dataset.subset(untagged)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def load_attempt_log(path: Path) -> list[AttemptRecord]:
    """Parse a JSON-lines attempt log; a bad line raises LogParseError with its number."""
    records: list[AttemptRecord] = []
    with path.open("rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise LogParseError(str(path), line_no, f"invalid UTF-8 at byte {exc.start}") from exc
            if not line.strip():
                continue
            try:
                records.append(AttemptRecord.model_validate_json(line))
            except ValidationError as exc:
                raise LogParseError(str(path), line_no, exc.errors()[0]["msg"]) from exc
    logger.info("Loaded %s attempts from %s", len(records), path.name)
    return records


def load_pricing_table(path: Path) -> dict[str, PricingEntry]:
    """Read a pricing CSV (provider_id, input_price, output_price, cache_discount[, model_params])."""
    try:
        frame = pd.read_csv(path, comment="#")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: unreadable pricing table: {exc}") from exc
    missing = [c for c in PRICING_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: pricing table lacks columns {missing}")
    table: dict[str, PricingEntry] = {}
    for row_no, row in enumerate(frame.to_dict(orient="records"), start=2):
        row = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
        try:
            entry = PricingEntry(**row)
        except ValidationError as exc:
            raise LogParseError(str(path), row_no, exc.errors()[0]["msg"]) from exc
        table[entry.provider_id] = entry
    return table
