"""Pydantic models for every document krlsdl reads or writes.

Profile snapshots, evaluation reports and the run manifest are validated
on load, so a malformed file fails before any computation starts.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SNAPSHOT_FORMAT = "krlsdl-profile"
SNAPSHOT_VERSION = 1


class ProfileDims(BaseModel):
    """Explicit dimensions stored alongside the matrices."""

    N: int = Field(ge=1, description="Input dimension")
    L: int = Field(ge=1, description="Retained samples")
    Q: int = Field(ge=1, description="Dictionary atoms")


class ProfileSnapshot(BaseModel):
    """Versioned JSON document holding a complete profile.

    Matrices are row-major nested lists; shapes must agree with ``dims``.
    """

    model_config = ConfigDict(extra="forbid")

    format: Literal["krlsdl-profile"] = SNAPSHOT_FORMAT
    version: Literal[1] = SNAPSHOT_VERSION
    kernel: str
    dims: ProfileDims
    gamma: float = Field(gt=0.0)
    xi: float = Field(gt=0.0)
    lam: list[float]
    reg_scale: list[float]
    X: list[list[float]]
    K: list[list[float]]
    W: list[list[float]]
    C: list[list[float]]
    U: list[list[float]]
    Psi: list[list[float]]

    @model_validator(mode="after")
    def _check_shapes(self) -> ProfileSnapshot:
        n, l, q = self.dims.N, self.dims.L, self.dims.Q
        expected = {
            "X": (n, l),
            "K": (l, l),
            "W": (q, l),
            "C": (q, q),
            "U": (q, l),
            "Psi": (q, q),
        }
        for name, (rows, cols) in expected.items():
            m = getattr(self, name)
            if len(m) != rows or any(len(r) != cols for r in m):
                raise ValueError(f"matrix {name} does not have shape {rows}x{cols}")
        if len(self.lam) != l:
            raise ValueError(f"lam must have {l} entries")
        if len(self.reg_scale) != q:
            raise ValueError(f"reg_scale must have {q} entries")
        return self


class Checkpoint(BaseModel):
    """Accuracy of the current dictionaries at one training batch."""

    batch_index: int = Field(ge=0)
    accuracy: float = Field(ge=0.0, le=1.0)
    grow_ms: float | None = Field(
        default=None, description="Mean ms per grow of one dictionary so far"
    )
    prune_ms: float | None = Field(
        default=None, description="Mean ms per prune of one dictionary so far"
    )


class EvalReport(BaseModel):
    """Accuracy curve for one fold (or one plain training run)."""

    fold: int = 0
    checkpoints: list[Checkpoint] = Field(default_factory=list)
    per_class_errors: list[list[float]] | None = Field(
        default=None, description="Mean held-out error, true class x dictionary"
    )
    timings: dict[str, float] = Field(default_factory=dict)

    @field_validator("checkpoints")
    @classmethod
    def _strictly_increasing(cls, v: list[Checkpoint]) -> list[Checkpoint]:
        idx = [c.batch_index for c in v]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("checkpoint batch indices must be strictly increasing")
        return v

    @property
    def final_accuracy(self) -> float:
        return self.checkpoints[-1].accuracy if self.checkpoints else 0.0


class CrossValidationReport(BaseModel):
    """Per-fold curves plus their checkpoint-wise mean."""

    folds: list[EvalReport] = Field(default_factory=list)
    mean: list[Checkpoint] = Field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.mean[-1].accuracy if self.mean else 0.0


class CorruptionPoint(BaseModel):
    """Accuracy on test samples with a fraction of entries zeroed."""

    fraction: float = Field(ge=0.0, le=1.0)
    fold: int | None = Field(default=None, description="None for the mean row")
    accuracy: float = Field(ge=0.0, le=1.0)


class ScalingPoint(BaseModel):
    """Median single-sample grow/prune time at one profile size."""

    L: int
    grow_ms_median: float
    prune_ms_median: float
    repeats: int


class RunManifest(BaseModel):
    """Everything needed to reproduce a CLI run."""

    command: str
    seed: int
    config: dict[str, Any]
    versions: dict[str, str]
    started_at: str
    wall_seconds: float = 0.0
    data: str
    label_mapping: dict[str, str] = Field(default_factory=dict)
    artifacts: list[str] = Field(default_factory=list)
