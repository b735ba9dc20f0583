"""Central configuration loader.
Loads environment variables from a `.env` file at project root using python-dotenv.
Access via:

    from src.config import settings

Library functions always take their parameters explicitly; these values are the
defaults used by the CLI, the read API and the dagster pipeline.
"""
from pathlib import Path

from dotenv import load_dotenv
from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Determine project root (two levels up from this file)
PROJECT_ROOT = Path(__file__).resolve().parents[1]
ENV_FILE = PROJECT_ROOT / ".env"

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"

# Load variables if .env exists; silently ignore if not
if ENV_FILE.exists():
    load_dotenv(ENV_FILE)


def _env(name: str) -> AliasChoices:
    return AliasChoices(f"ARBITRAGE_{name}", name)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=ENV_FILE,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )
    # Paths
    output_dir: Path = Field(default=Path("output"), validation_alias=_env("OUTPUT_DIR"))
    dataset_path: Path = Field(default=Path("output/ingest/dataset.json"), validation_alias=_env("DATASET_PATH"))
    logs_path: Path | None = Field(default=None, validation_alias=_env("LOGS_PATH"))
    pricing_path: Path | None = Field(default=None, validation_alias=_env("PRICING_PATH"))

    # Grids (per-issue budget in cost units, performance in [0, 1])
    b_max: float = Field(default=1.0, gt=0, validation_alias=_env("B_MAX"))
    grid_step: float = Field(default=0.001, gt=0, validation_alias=_env("GRID_STEP"))
    u_step: float = Field(default=0.001, gt=0, validation_alias=_env("U_STEP"))
    cap_step: float = Field(default=0.01, gt=0, validation_alias=_env("CAP_STEP"))

    # Competition
    undercut_fraction: float = Field(default=0.01, gt=0, lt=1, validation_alias=_env("UNDERCUT"))
    rounds: int = Field(default=1000, ge=0, validation_alias=_env("ROUNDS"))

    # Sampling
    seed: int = Field(default=0, validation_alias=_env("SEED"))
    trials: int = Field(default=100_000, ge=1, validation_alias=_env("TRIALS"))
    resamples: int = Field(default=1000, ge=1, validation_alias=_env("RESAMPLES"))
    search_budget: float = Field(default=10.0, gt=0, validation_alias=_env("SEARCH_BUDGET"))
    per_query_cap: float = Field(default=0.5, gt=0, validation_alias=_env("PER_QUERY_CAP"))

    log_level: str = Field(default="INFO", validation_alias=_env("LOG_LEVEL"))


settings = Settings()
