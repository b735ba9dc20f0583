"""Command-line pipeline: ingest attempt logs and run every analysis on them.

Usage:
    python -m src.cli ingest --logs attempts.jsonl --pricing pricing.csv
    python -m src.cli frontier --dataset output/ingest/dataset.json
    python -m src.cli optimize --dataset output/ingest/dataset.json --u-min 0.7 --u-max 0.75
    python -m src.cli compete|revenue|robustness|ood|simulate ...

Each subcommand writes CSV tables and a manifest.json into --out (default
`settings.output_dir`). Exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.arbitrage import DemandWeights, OrderStrategy, detect_opportunity, optimize_policy
from src.cascade import (
    CascadePolicy,
    cascade_expected_cost,
    cascade_frontier,
    cascade_performance,
    load_policy,
    revenue_split,
    save_policy,
)
from src.competition import (
    MarketState,
    bertrand_simulate,
    marginal_revenue_change,
    market_entry,
    profit_trajectory,
    trajectory_frame,
)
from src.config import LOG_FORMAT, settings
from src.curves import (
    PriceFrontier,
    build_provider_curve,
    market_frontier,
    performance_grid,
    provider_expected_cost,
    provider_frontiers,
    provider_performance,
)
from src.errors import ArbitrageError, DataError, UsageError
from src.ingest import CostUnit, Dataset, aggregate, load_attempt_log, load_pricing_table, price_records, split_by_tag
from src.mc_oracle import SimConfig, SpendMode, simulate_cascade, simulate_dataset_provider
from src.reporting import OutputWriter
from src.robustness import AccountingMode, OptimizerConfig, ood_evaluate, search_budget_sweep

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.json"
POLICY_FILE = "policy.json"


class RunConfig(BaseModel):
    """Validated view of the command-line flags."""

    model_config = ConfigDict(frozen=True)

    logs: Path | None = None
    pricing: Path | None = None
    dataset: Path | None = None
    policy: Path | None = None
    demand: Path | None = None
    out: Path = settings.output_dir
    cost_unit: CostUnit | None = None
    b_max: float = Field(default=settings.b_max, gt=0)
    grid_step: float = Field(default=settings.grid_step, gt=0)
    u_step: float = Field(default=settings.u_step, gt=0, le=1)
    cap_step: float = Field(default=settings.cap_step, gt=0)
    u_min: float | None = Field(default=None, ge=0, le=1)
    u_max: float | None = Field(default=None, ge=0, le=1)
    order: OrderStrategy | tuple[str, ...] = OrderStrategy.HEURISTIC
    undercut: float = Field(default=settings.undercut_fraction, gt=0, lt=1)
    rounds: int = Field(default=settings.rounds, ge=0)
    arbitrageurs: int = Field(default=2, ge=1)
    entrant: str | None = None
    seed: int = settings.seed
    trials: int = Field(default=settings.trials, ge=1)
    spend_mode: SpendMode = SpendMode.CONTINUOUS
    points: int = Field(default=10, ge=1)
    search_budgets: tuple[float, ...] = (settings.search_budget,)
    per_query_cap: float = Field(default=settings.per_query_cap, gt=0)
    resamples: int = Field(default=settings.resamples, ge=1)
    accounting: AccountingMode = AccountingMode.WORST_CASE
    split_tag: str | None = None

    @model_validator(mode="after")
    def check_range(self) -> "RunConfig":
        if (self.u_min is None) != (self.u_max is None):
            raise ValueError("--u-min and --u-max go together")
        if self.u_min is not None and self.u_min > self.u_max:
            raise ValueError("--u-min exceeds --u-max")
        if any(b <= 0 for b in self.search_budgets):
            raise ValueError("search budgets must be positive")
        performance_grid(self.u_step)
        return self

    @property
    def u_range(self) -> tuple[float, float] | None:
        return None if self.u_min is None else (self.u_min, self.u_max)

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            order=self.order, b_max=self.b_max, cap_step=self.cap_step, grid_step=self.grid_step, u_step=self.u_step
        )

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        values = {k: v for k, v in vars(args).items() if v is not None and k in cls.model_fields}
        try:
            return cls(**values)
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise UsageError(f"{where}: {first['msg']}" if where else first["msg"]) from exc


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _order(value: str) -> OrderStrategy | tuple[str, ...]:
    try:
        return OrderStrategy(value)
    except ValueError:
        return tuple(p.strip() for p in value.split(",") if p.strip())


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    inputs = common.add_argument_group("inputs")
    inputs.add_argument("--logs", type=Path, help="JSON-lines attempt log")
    inputs.add_argument("--pricing", type=Path, help="pricing table CSV (USD per 1M tokens)")
    inputs.add_argument("--dataset", type=Path, help="dataset file written by `ingest`")
    inputs.add_argument("--policy", type=Path, help="cascade policy JSON (skips the optimizer)")
    inputs.add_argument("--demand", type=Path, help="u,weight CSV weighting the profit integral")
    inputs.add_argument("--cost-unit", choices=[u.value for u in CostUnit])
    inputs.add_argument("--out", type=Path, help="output directory (env ARBITRAGE_OUTPUT_DIR)")

    grid = common.add_argument_group("grids")
    grid.add_argument("--b-max", type=float)
    grid.add_argument("--grid-step", type=float)
    grid.add_argument("--u-step", type=float)
    grid.add_argument("--u-min", type=float)
    grid.add_argument("--u-max", type=float)
    grid.add_argument("--cap-step", type=float)
    grid.add_argument("--order", type=_order, help="heuristic, exhaustive, or a comma-separated provider list")

    comp = common.add_argument_group("competition")
    comp.add_argument("--undercut", type=float)
    comp.add_argument("--rounds", type=int)
    comp.add_argument("--arbitrageurs", type=int)
    comp.add_argument("--entrant", help="provider whose entry `revenue` measures against the others")

    sampling = common.add_argument_group("sampling")
    sampling.add_argument("--seed", type=int)
    sampling.add_argument("--trials", type=int)
    sampling.add_argument("--spend-mode", choices=[m.value for m in SpendMode])
    sampling.add_argument("--points", type=int, help="budget points compared by `simulate`")
    sampling.add_argument("--search-budget", dest="search_budgets", type=_floats, help="one or more, comma-separated")
    sampling.add_argument("--per-query-cap", type=float)
    sampling.add_argument("--resamples", type=int)
    sampling.add_argument("--accounting", choices=[a.value for a in AccountingMode])
    sampling.add_argument("--split-tag")

    common.add_argument("--log-level", default=settings.log_level)

    parser = _Parser(prog="python -m src.cli", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMAND_HELP.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


# ---------------------------------------------------------------------------
# Shared steps
# ---------------------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> Dataset:
    for path in (cfg.dataset, cfg.logs, cfg.pricing, cfg.demand):
        if path is not None and not path.exists():
            raise UsageError(f"no such file: {path}")
    if cfg.dataset is not None:
        return Dataset.load(cfg.dataset)
    if cfg.logs is not None:
        records = load_attempt_log(cfg.logs)
        if cfg.pricing is not None:
            records = price_records(records, load_pricing_table(cfg.pricing), cfg.cost_unit or CostUnit.USD)
        return aggregate(records, cfg.cost_unit)
    if settings.dataset_path.exists():
        return Dataset.load(settings.dataset_path)
    raise UsageError("no input: pass --logs or --dataset")


def _writer(cfg: RunConfig, command: str, dataset: Dataset, **extra) -> OutputWriter:
    header = {
        "cost_unit": dataset.cost_unit,
        "b_max": cfg.b_max,
        "grid_step": cfg.grid_step,
        "u_step": cfg.u_step,
        **extra,
    }
    return OutputWriter(cfg.out, command, header)


def _market(cfg: RunConfig, dataset: Dataset) -> tuple[list[PriceFrontier], PriceFrontier]:
    frontiers = provider_frontiers(dataset, cfg.b_max, cfg.grid_step, performance_grid(cfg.u_step))
    return frontiers, market_frontier(frontiers)


def _demand(cfg: RunConfig) -> DemandWeights | None:
    return DemandWeights.from_csv(cfg.demand) if cfg.demand is not None else None


def _fitted_policy(cfg: RunConfig, dataset: Dataset) -> tuple[CascadePolicy, PriceFrontier]:
    """The --policy file if given, otherwise the optimizer's best cascade."""
    if cfg.policy is not None:
        policy = load_policy(cfg.policy)
        return policy, cascade_frontier(policy, dataset, cfg.b_max, cfg.grid_step, performance_grid(cfg.u_step))
    result = cfg.optimizer.optimize(dataset, cfg.u_range, _demand(cfg))
    return result.policy, result.buy_frontier


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(cfg, "ingest", dataset)
    dataset.save(cfg.out / DATASET_FILE)
    out.register(DATASET_FILE, "aggregated provider x problem statistics")
    out.table("problem_stats.csv", dataset.to_frame(), "n, m and mean attempt cost per provider x problem")
    return out


def cmd_frontier(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(cfg, "frontier", dataset)
    curves = [build_provider_curve(dataset, p, cfg.b_max, cfg.grid_step) for p in dataset.providers]
    out.table(
        "provider_curves.csv",
        pd.concat([c.to_frame() for c in curves], ignore_index=True),
        "performance and expected cost per per-issue budget",
    )
    frontiers, market = _market(cfg, dataset)
    out.table(
        "frontiers.csv",
        pd.concat([f.to_frame() for f in frontiers], ignore_index=True),
        "cost to reach each performance level per provider",
    )
    out.table("market.csv", market.to_frame(), "market price and the provider setting it")
    return out


def cmd_optimize(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(
        cfg, "optimize", dataset,
        cap_step=cfg.cap_step, u_range=cfg.u_range or "market", demand=cfg.demand.name if cfg.demand else "uniform",
    )
    result = optimize_policy(
        dataset, cfg.order, cfg.b_max, cfg.cap_step, _demand(cfg), cfg.u_range, cfg.grid_step, cfg.u_step
    )
    save_policy(result.policy, cfg.out / POLICY_FILE)
    out.register(POLICY_FILE, "profit-maximising cascade policy")
    exists, witness = detect_opportunity(result.market, result.buy_frontier)
    caps = pd.DataFrame(
        {"position": range(len(result.policy.steps)), "provider_id": result.policy.providers, "cap": result.policy.caps}
    )
    out.table("policy_caps.csv", caps, "provider order and caps of the best cascade")
    summary = pd.DataFrame(
        [
            {
                "policy": result.policy.label,
                "aggregate_profit": result.profit,
                "opportunity": exists,
                "witness_u": witness if witness is not None else np.nan,
                "evaluated": result.evaluated,
                "null_result": result.null_result,
            }
        ]
    )
    out.table("optimize_summary.csv", summary, "aggregate profit of the best cascade")
    out.table("profit_curve.csv", result.profit_curve().to_frame(), "marginal profit, margin and markup per level")
    return out


def cmd_compete(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(cfg, "compete", dataset, undercut=cfg.undercut, rounds=cfg.rounds)
    frontiers, _ = _market(cfg, dataset)
    policy, buy = _fitted_policy(cfg, dataset)
    state = MarketState.open(frontiers, {f"arb-{i + 1}": buy for i in range(cfg.arbitrageurs)})
    trajectory = bertrand_simulate(state, cfg.rounds, cfg.undercut)
    out.table("trajectory.csv", trajectory_frame(trajectory), "prevailing and quoted prices per round")
    profits = profit_trajectory(trajectory, buy, None, cfg.u_range)
    out.table(
        "profit_trajectory.csv",
        pd.DataFrame({"round": [s.round for s in trajectory], "aggregate_profit": profits}),
        f"aggregate profit of {policy.label} against the prevailing price",
    )
    return out


def cmd_revenue(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(cfg, "revenue", dataset)
    frontiers, _ = _market(cfg, dataset)
    policy, _ = _fitted_policy(cfg, dataset)
    change = marginal_revenue_change(dataset, frontiers, policy, cfg.u_range, cfg.b_max, cfg.grid_step, cfg.cap_step)
    out.table("revenue.csv", change.to_frame(), "provider revenue per level before and after arbitrage")
    rows = [{"phase": "before", "u": u} for u in change.boundaries_before]
    rows += [{"phase": "after", "u": u} for u in change.boundaries_after]
    out.table("segmentation.csv", pd.DataFrame(rows, columns=["phase", "u"]), "levels where the top earner changes")
    losses = pd.DataFrame(
        {"provider_id": sorted(change.before), "max_loss_fraction": [change.loss_fraction(p) for p in sorted(change.before)]}
    )
    out.table("revenue_loss.csv", losses, "largest relative revenue drop per provider")
    if cfg.entrant is not None:
        if cfg.entrant not in dataset.providers:
            raise UsageError(f"unknown entrant {cfg.entrant!r}")
        incumbents = [p for p in dataset.providers if p != cfg.entrant]
        entry = market_entry(
            dataset, incumbents, cfg.entrant, cfg.u_range, cfg.b_max, cfg.grid_step, cfg.cap_step, cfg.u_step
        )
        out.table("market_entry.csv", entry, f"arbitrage-free revenue before and after {cfg.entrant} enters")
    return out


def cmd_robustness(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(
        cfg, "robustness", dataset,
        per_query_cap=cfg.per_query_cap, resamples=cfg.resamples, seed=cfg.seed, accounting=cfg.accounting,
    )
    sweep = search_budget_sweep(
        dataset, cfg.search_budgets, cfg.per_query_cap, cfg.resamples, cfg.seed, cfg.u_range,
        cfg.optimizer, accounting=cfg.accounting,
    )
    out.table("robustness.csv", sweep, "bootstrap mean margin and 95% interval per search budget")
    return out


def cmd_ood(cfg: RunConfig) -> OutputWriter:
    if not cfg.split_tag:
        raise UsageError("ood needs --split-tag")
    dataset = load_dataset(cfg)
    out = _writer(cfg, "ood", dataset, split_tag=cfg.split_tag)
    tagged, untagged = split_by_tag(dataset, cfg.split_tag)
    if len(tagged) == 0 or len(untagged) == 0:
        raise DataError(f"tag {cfg.split_tag!r} does not split the problems in two")
    splits = {cfg.split_tag: tagged, f"not-{cfg.split_tag}": untagged}
    rows = []
    for train_name, train in splits.items():
        for test_name, test in splits.items():
            margin = ood_evaluate(train, test, cfg.optimizer, cfg.u_range, allow_overlap=train_name == test_name)
            rows.append({"train": train_name, "test": test_name, "mean_margin": margin})
    out.table("ood.csv", pd.DataFrame(rows), "mean margin of a policy fitted on one split, evaluated on another")
    return out


def cmd_simulate(cfg: RunConfig) -> OutputWriter:
    dataset = load_dataset(cfg)
    out = _writer(cfg, "simulate", dataset, trials=cfg.trials, seed=cfg.seed, spend_mode=cfg.spend_mode)
    sim = SimConfig(trials=cfg.trials, seed=cfg.seed, spend_mode=cfg.spend_mode)
    budgets = np.linspace(cfg.b_max / cfg.points, cfg.b_max, cfg.points)
    rows = []
    for p in dataset.providers:
        for b in budgets:
            result = simulate_dataset_provider(dataset, p, float(b), sim)
            rows.append(
                {
                    "subject": p,
                    "budget": b,
                    "analytic_performance": provider_performance(dataset, p, float(b)),
                    "simulated_performance": result.performance,
                    "performance_stderr": result.performance_stderr,
                    "analytic_cost": provider_expected_cost(dataset, p, float(b), cfg.grid_step),
                    "simulated_cost": result.expected_cost,
                }
            )
    if cfg.policy is not None:
        policy = load_policy(cfg.policy)
        split_rows = []
        for b in budgets:
            result = simulate_cascade(policy, dataset, float(b), sim)
            rows.append(
                {
                    "subject": policy.label,
                    "budget": b,
                    "analytic_performance": cascade_performance(policy, dataset, float(b)),
                    "simulated_performance": result.performance,
                    "performance_stderr": result.performance_stderr,
                    "analytic_cost": cascade_expected_cost(policy, dataset, float(b), cfg.grid_step),
                    "simulated_cost": result.expected_cost,
                }
            )
            analytic = revenue_split(policy, dataset, float(b), cfg.grid_step)
            for provider, spend in result.provider_spend.items():
                split_rows.append(
                    {"budget": b, "provider_id": provider, "analytic_revenue": analytic[provider], "simulated_spend": spend}
                )
        out.table("revenue_split.csv", pd.DataFrame(split_rows), "cascade revenue per provider, analytic vs simulated")
    out.table("simulate.csv", pd.DataFrame(rows), "analytic curves against Monte Carlo estimates")
    return out


COMMAND_HELP = {
    "ingest": "aggregate attempt logs into a dataset file",
    "frontier": "per-provider cost/performance curves and the market price",
    "optimize": "search the profit-maximising cascade",
    "compete": "price competition between arbitrageurs",
    "revenue": "provider revenue before and after arbitrage",
    "robustness": "search-budget sweep with bootstrap intervals",
    "ood": "fit on one tag split, evaluate on the other",
    "simulate": "Monte Carlo check of the analytic curves",
}

COMMANDS: dict[str, Callable[[RunConfig], OutputWriter]] = {
    "ingest": cmd_ingest,
    "frontier": cmd_frontier,
    "optimize": cmd_optimize,
    "compete": cmd_compete,
    "revenue": cmd_revenue,
    "robustness": cmd_robustness,
    "ood": cmd_ood,
    "simulate": cmd_simulate,
}


def run(command: str, cfg: RunConfig) -> int:
    """Execute one subcommand and return its exit status."""
    try:
        COMMANDS[command](cfg).write_manifest()
    except ArbitrageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        logger.exception("Internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    logger.info("Finished %s; outputs in %s", command, cfg.out)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.from_args(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format=LOG_FORMAT)
    return run(args.command, cfg)


if __name__ == "__main__":
    raise SystemExit(main())
