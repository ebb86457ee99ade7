"""Configuration management using Pydantic and Pydantic Settings.

Supports:
- Trainer and run configuration with validation (unknown keys rejected)
- JSON config files with per-flag overrides (flag > file > default)
- Environment variables (KRLSDL_* prefix) and .env file loading
- Numerical tolerances shared by every module
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from krlsdl.exceptions import ConfigurationError, KrlsError
from krlsdl.kernels import Kernel

logger = logging.getLogger(__name__)


# ── Numerical tolerances (frozen dataclass) ─────────────────────────


@dataclass(frozen=True)
class Tolerances:
    """Thresholds for singularity guards and consistency checks."""

    # α and α_m inverses
    max_condition: float = 1e12
    min_relative_det: float = 1e-12
    # KORMP
    degenerate_atom: float = 1e-12
    orthogonal_remainder: float = 1e-10
    stop_residual: float = 1e-12
    # normalization
    min_atom_norm2: float = 1e-14
    # coherence gate
    unit_coherence: float = 1e-12
    # Profile.validate
    symmetry: float = 1e-10
    consistency: float = 1e-7
    u_identity: float = 1e-8
    gram_identity: float = 1e-8


TOLERANCES = Tolerances()

DEFAULT_OUTPUT_DIR = "krlsdl-runs"
DEFAULT_KERNEL = "poly:2:1"
DEFAULT_MISSING_FRACTIONS = [round(0.1 * i, 1) for i in range(10)]
DEFAULT_BENCH_SIZES = [100, 200, 400]


# ── Trainer configuration ───────────────────────────────────────────


class TrainerConfig(BaseModel):
    """Online training parameters.

    Defaults are the standard benchmark settings: Q=30 atoms, a
    profile cap of 200 samples, mini-batches of 10, γ=0.1, sparsity 5 and
    a forgetting factor ramping linearly from 0.98 to 1 over the first 80%
    of batches.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    q: int = Field(default=30, ge=2, description="Number of dictionary atoms (Q)")
    l_max: int = Field(default=200, ge=2, description="Profile size cap (L_max)")
    batch_size: int = Field(default=10, ge=1, description="Mini-batch size (M)")
    gamma: float = Field(default=0.1, gt=0.0, description="Base regularization γ")
    delta: float = Field(default=0.99, gt=0.0, le=1.0, description="Coherence threshold δ")
    sparsity: int = Field(default=5, ge=1, description="Non-zeros per code (s)")
    lambda0: float = Field(default=0.98, gt=0.0, le=1.0, description="Initial forgetting factor")
    ramp_fraction: float = Field(default=0.8, ge=0.0, le=1.0)
    epochs: int = Field(default=1, ge=1, description="Passes over the training stream")
    n_batches: int | None = Field(
        default=None, ge=1, description="Total mini-batches; overrides epochs when set"
    )
    checkpoint_count: int = Field(default=20, ge=1)
    normalize_tol: float = Field(default=0.1, gt=0.0)
    refresh_gram: bool = Field(
        default=True, description="Recompute Ψ = U K Uᵀ at every normalization check"
    )
    validate_updates: bool = Field(
        default=False, description="Check all profile invariants after every update"
    )
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_sizes(self) -> TrainerConfig:
        if not self.sparsity < self.q <= self.l_max:
            raise ValueError(
                f"need sparsity < q <= l_max, got s={self.sparsity}, "
                f"q={self.q}, l_max={self.l_max}"
            )
        if self.batch_size > self.q:
            raise ValueError(
                f"batch_size ({self.batch_size}) cannot exceed q ({self.q})"
            )
        return self


class RunConfig(TrainerConfig):
    """Everything a CLI command needs: trainer fields plus run options.

    Runs replay the training data for three passes by default, so every
    class sees its samples again once the profile is full.
    """

    epochs: int = Field(default=3, ge=1, description="Passes over the training stream")
    kernel: str = Field(default=DEFAULT_KERNEL, description="e.g. poly:2:1, linear, rbf:0.5")
    folds: int = Field(default=5, ge=2)
    kmod_iters: int = Field(default=20, ge=1)
    missing_fractions: list[float] = Field(
        default_factory=lambda: list(DEFAULT_MISSING_FRACTIONS)
    )
    bench_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_BENCH_SIZES))
    bench_repeats: int = Field(default=15, ge=1)
    timings: bool = Field(
        default=False, description="Write measured timings into metrics CSVs"
    )
    preset: str = Field(default="planted-3class", description="Bundled synthetic dataset")

    @field_validator("kernel")
    @classmethod
    def validate_kernel(cls, v: str) -> str:
        try:
            return Kernel.parse(v).spec
        except KrlsError as e:
            raise ValueError(e.message) from e

    @field_validator("missing_fractions")
    @classmethod
    def validate_fractions(cls, v: list[float]) -> list[float]:
        if not v or any(not 0.0 <= f <= 1.0 for f in v):
            raise ValueError("missing_fractions must be a non-empty list within [0, 1]")
        return v

    def trainer(self) -> TrainerConfig:
        """The TrainerConfig subset of this run configuration."""
        fields = TrainerConfig.model_fields.keys()
        return TrainerConfig(**{k: getattr(self, k) for k in fields})

    def make_kernel(self) -> Kernel:
        return Kernel.parse(self.kernel)


def resolve_run_config(
    config_path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Build a RunConfig with precedence flag > file > default.

    ``overrides`` holds flag values; entries that are None were not given.
    """
    data: dict[str, Any] = {}
    if config_path is not None:
        try:
            with open(config_path, "r") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigurationError(
                f"Cannot read config file '{config_path}': {e.strerror}",
                details={"path": str(config_path)},
            ) from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(
                f"Invalid JSON in config file '{config_path}': {e}",
                details={"path": str(config_path)},
            ) from e
        if not isinstance(data, dict):
            raise ConfigurationError(
                f"Config file '{config_path}' must hold a JSON object, "
                f"got {type(data).__name__}"
            )

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigurationError(
            f"Invalid configuration ({where}): {first['msg']}",
            details={"errors": str(e.error_count())},
        ) from e
    logger.debug("Resolved config: %s", cfg.model_dump())
    return cfg


# ── Pydantic Settings ───────────────────────────────────────────────


class Settings(BaseSettings):
    """Application settings loaded from environment and .env file.

    Environment variables are prefixed with KRLSDL_
    Example: KRLSDL_LOG_LEVEL=DEBUG
    """

    model_config = SettingsConfigDict(
        env_prefix="KRLSDL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="WARNING",
        description="Logging level",
    )

    output_dir: Path = Field(
        default_factory=lambda: Path(DEFAULT_OUTPUT_DIR),
        description="Default directory for run artifacts",
    )


# Global settings instance (loaded once at startup)
_settings: Settings | None = None


def get_settings() -> Settings:
    """Get or create global settings instance."""
    global _settings
    if _settings is None:
        try:
            _settings = Settings()
            logger.debug("Settings loaded: %s", _settings.model_dump())
        except Exception as e:
            raise ConfigurationError(
                f"Failed to load settings: {e}",
                details={"error": str(e)},
            ) from e
    return _settings


def reload_settings() -> Settings:
    """Force reload settings (useful for testing)."""
    global _settings
    _settings = None
    return get_settings()
