"""Dagster ops wrapping the CLI subcommands.

Each op simply shells out to `python -m src.cli <subcommand>`, so the CLI stays
the single source of truth. Outputs land in `settings.output_dir/<subcommand>/`;
later steps read the dataset and policy files written by earlier ones.
"""

import subprocess
import sys
from pathlib import Path

from dagster import In, Nothing, OpExecutionContext, Out, op

from src.config import settings

PROJECT_ROOT = Path(__file__).resolve().parents[2]
PY_EXE = sys.executable  # e.g., path to python within the venv


def _out(command: str) -> Path:
    return settings.output_dir / command


def _dataset() -> Path:
    return _out("ingest") / "dataset.json"


def _policy() -> Path:
    return _out("optimize") / "policy.json"


def cli_command(command: str, *flags: str) -> list[str]:
    return [PY_EXE, "-m", "src.cli", command, "--out", str(_out(command)), *flags]


def _run(cmd: list[str], context: OpExecutionContext) -> None:
    """Run *cmd* in a subprocess, streaming output to Dagster logs."""
    context.log.info("Running: %s" % " ".join(cmd))
    subprocess.run(cmd, cwd=PROJECT_ROOT, check=True)


@op(out=Out(Nothing))
def ingest_attempt_logs(context: OpExecutionContext) -> None:
    """Aggregate the attempt log (priced with the pricing table, if set) into a dataset."""
    flags = ["--logs", str(settings.logs_path)] if settings.logs_path else ["--dataset", str(settings.dataset_path)]
    if settings.pricing_path:
        flags += ["--pricing", str(settings.pricing_path)]
    _run(cli_command("ingest", *flags), context)


@op(ins={"upstream": In(Nothing)}, out=Out(Nothing))
def build_frontiers(context: OpExecutionContext) -> None:
    """Per-provider curves, frontiers and the market price."""
    _run(cli_command("frontier", "--dataset", str(_dataset())), context)


@op(ins={"upstream": In(Nothing)}, out=Out(Nothing))
def optimize_cascade(context: OpExecutionContext) -> None:
    """Search the profit-maximising cascade and save it as policy.json."""
    _run(cli_command("optimize", "--dataset", str(_dataset())), context)


@op(ins={"upstream": In(Nothing)}, out=Out(Nothing))
def simulate_competition(context: OpExecutionContext) -> None:
    _run(cli_command("compete", "--dataset", str(_dataset()), "--policy", str(_policy())), context)


@op(ins={"upstream": In(Nothing)}, out=Out(Nothing))
def analyse_revenue(context: OpExecutionContext) -> None:
    _run(cli_command("revenue", "--dataset", str(_dataset()), "--policy", str(_policy())), context)


@op(ins={"upstream": In(Nothing)}, out=Out(Nothing))
def run_robustness_sweep(context: OpExecutionContext) -> None:
    """Search-budget sweep with bootstrap intervals."""
    _run(cli_command("robustness", "--dataset", str(_dataset())), context)
