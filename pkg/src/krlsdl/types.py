"""Core numeric records shared across the library.

Array-carrying results are frozen dataclasses; documents that get
serialized live in ``krlsdl.models`` as Pydantic models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


class KernelKind(str, Enum):
    """Supported kernel families."""

    LINEAR = "linear"
    POLYNOMIAL = "poly"
    RBF = "rbf"


@dataclass(frozen=True)
class SparseCode:
    """Output of a sparse coder for one signal.

    ``support`` lists atom indices in selection order, ``coeffs`` is aligned
    with it and ``sq_error`` is the squared feature-space residual.
    """

    support: tuple[int, ...]
    coeffs: FloatArray
    sq_error: float

    def dense(self, q: int) -> FloatArray:
        """Expand to a length-``q`` coefficient vector, zero off-support."""
        w = np.zeros(q)
        if self.support:
            w[list(self.support)] = self.coeffs
        return w

    @property
    def size(self) -> int:
        return len(self.support)

    @classmethod
    def empty(cls, sq_error: float) -> SparseCode:
        return cls(support=(), coeffs=np.zeros(0), sq_error=sq_error)


@dataclass(frozen=True)
class ExplicitDictionary:
    """A dictionary materialized in explicit (polynomial) feature space."""

    D: FloatArray  # F x Q
    Phi: FloatArray  # F x L

    @property
    def feature_dim(self) -> int:
        return int(self.D.shape[0])


@dataclass(frozen=True)
class IdentityCheck:
    """Relative error of one derived update identity."""

    name: str
    relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.relative_error <= self.tolerance)


@dataclass
class PhaseTimings:
    """Accumulated wall time (milliseconds) spent growing and pruning."""

    grow_ms: float = 0.0
    prune_ms: float = 0.0
    grows: int = 0
    prunes: int = 0

    def add(self, other: PhaseTimings) -> None:
        self.grow_ms += other.grow_ms
        self.prune_ms += other.prune_ms
        self.grows += other.grows
        self.prunes += other.prunes

    @property
    def mean_grow_ms(self) -> float:
        """Average time of one grow, i.e. one dictionary over one mini-batch."""
        return self.grow_ms / self.grows if self.grows else 0.0

    @property
    def mean_prune_ms(self) -> float:
        return self.prune_ms / self.prunes if self.prunes else 0.0

    def summary(self) -> dict[str, float]:
        return {
            "grow_ms": self.grow_ms,
            "prune_ms": self.prune_ms,
            "grows": float(self.grows),
            "prunes": float(self.prunes),
            "grow_ms_mean": self.mean_grow_ms,
            "prune_ms_mean": self.mean_prune_ms,
        }


@dataclass
class TrainStats:
    """Counters collected by an online trainer."""

    batches: int = 0
    grown: int = 0
    pruned: int = 0
    normalizations: int = 0
    skipped_uninformative: int = 0
    rejected_grows: int = 0
    dropped_batches: int = 0
    skipped_prunes: int = 0
    timings: PhaseTimings = field(default_factory=PhaseTimings)
