"""Kernel functions, Gram matrices and the explicit polynomial feature map.

Samples are stored as matrix columns throughout (N x L). A ``Kernel`` is an
immutable Pydantic model; every method is a pure function of its inputs.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from krlsdl.exceptions import UnsupportedKernelError, ValidationError
from krlsdl.types import FloatArray, KernelKind

logger = logging.getLogger(__name__)

_KIND_ALIASES: dict[str, KernelKind] = {
    "linear": KernelKind.LINEAR,
    "lin": KernelKind.LINEAR,
    "poly": KernelKind.POLYNOMIAL,
    "polynomial": KernelKind.POLYNOMIAL,
    "rbf": KernelKind.RBF,
    "gaussian": KernelKind.RBF,
}


def as_columns(a: FloatArray | list, name: str = "samples") -> FloatArray:
    """Coerce to a finite float64 matrix; a 1-D input becomes one column."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(
            f"{name} must be a vector or a matrix, got {arr.ndim} dimensions"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _as_vector(x: FloatArray | list, name: str) -> FloatArray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@lru_cache(maxsize=32)
def _monomials(n: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Exponent table (F x n) in graded lexicographic order and the weights.

    The weight of multi-index k is the multinomial coefficient
    d! / ((d-|k|)! k_1! ... k_n!) so that summing weight * c^(d-|k|) * x^k y^k
    over all |k| <= d reproduces (c + x.y)^d.
    """
    rows: list[np.ndarray] = []
    weights: list[float] = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(n), total):
            exps = np.bincount(np.asarray(combo, dtype=np.int64), minlength=n)
            coef = math.factorial(degree) // math.factorial(degree - total)
            for e in exps:
                coef //= math.factorial(int(e))
            rows.append(exps)
            weights.append(float(coef))
    table = np.vstack(rows) if n > 0 else np.zeros((1, 0), dtype=np.int64)
    return table, np.asarray(weights)


class Kernel(BaseModel):
    """Kernel descriptor: linear, inhomogeneous polynomial or RBF.

    - linear:      k(x, y) = xᵀy
    - polynomial:  k(x, y) = (offset + xᵀy)^degree
    - rbf:         k(x, y) = exp(-gamma * ||x - y||²)
    """

    model_config = ConfigDict(frozen=True)

    kind: KernelKind = KernelKind.POLYNOMIAL
    degree: int = Field(default=2, ge=1, le=10)
    offset: float = Field(default=1.0, ge=0.0)
    gamma: float = Field(default=1.0, gt=0.0)

    # ── Construction ────────────────────────────────────────────

    @classmethod
    def linear(cls) -> Kernel:
        return cls(kind=KernelKind.LINEAR)

    @classmethod
    def polynomial(cls, degree: int = 2, offset: float = 1.0) -> Kernel:
        return cls(kind=KernelKind.POLYNOMIAL, degree=degree, offset=offset)

    @classmethod
    def rbf(cls, gamma: float = 1.0) -> Kernel:
        return cls(kind=KernelKind.RBF, gamma=gamma)

    @classmethod
    def parse(cls, spec: str) -> Kernel:
        """Parse ``linear``, ``poly:<degree>[:<offset>]`` or ``rbf:<gamma>``."""
        parts = [p.strip() for p in spec.strip().lower().split(":")]
        kind = _KIND_ALIASES.get(parts[0])
        if kind is None:
            raise ValidationError(
                f"Unknown kernel '{spec}'. Use linear, poly:<degree>[:<offset>] "
                "or rbf:<gamma>",
                details={"kernel": spec},
            )
        try:
            args = [float(p) for p in parts[1:]]
        except ValueError as e:
            raise ValidationError(
                f"Kernel parameters must be numeric in '{spec}'",
                details={"kernel": spec},
            ) from e

        try:
            if kind is KernelKind.LINEAR and not args:
                return cls.linear()
            if kind is KernelKind.POLYNOMIAL and len(args) <= 2:
                degree = args[0] if args else 2.0
                if degree != int(degree):
                    raise ValidationError(f"Polynomial degree must be an integer in '{spec}'")
                offset = args[1] if len(args) == 2 else 1.0
                return cls.polynomial(int(degree), offset)
            if kind is KernelKind.RBF and len(args) <= 1:
                return cls.rbf(args[0] if args else 1.0)
        except ValueError as e:  # pydantic field bounds
            raise ValidationError(
                f"Invalid kernel parameters in '{spec}'", details={"kernel": spec}
            ) from e
        raise ValidationError(
            f"Wrong number of parameters for kernel '{spec}'", details={"kernel": spec}
        )

    @property
    def spec(self) -> str:
        """Canonical spec string; ``Kernel.parse(k.spec) == k``."""
        if self.kind is KernelKind.LINEAR:
            return "linear"
        if self.kind is KernelKind.POLYNOMIAL:
            return f"poly:{self.degree}:{self.offset:g}"
        return f"rbf:{self.gamma:g}"

    # ── Evaluation ──────────────────────────────────────────────

    def eval(self, x: FloatArray | list, y: FloatArray | list) -> float:
        """k(x, y) for two vectors of equal length."""
        xv = _as_vector(x, "x")
        yv = _as_vector(y, "y")
        if xv.shape != yv.shape:
            raise ValidationError(
                f"Dimension mismatch: x has {xv.size} entries, y has {yv.size}"
            )
        return float(self.cross_gram(xv[:, None], yv[:, None])[0, 0])

    def cross_gram(self, A: FloatArray, B: FloatArray) -> FloatArray:
        """Matrix of k(A[:, i], B[:, j]) with shape (A cols) x (B cols)."""
        A = as_columns(A, "A")
        B = as_columns(B, "B")
        if A.shape[0] != B.shape[0]:
            raise ValidationError(
                f"Dimension mismatch: {A.shape[0]} vs {B.shape[0]} rows"
            )
        if self.kind is KernelKind.LINEAR:
            return A.T @ B
        if self.kind is KernelKind.POLYNOMIAL:
            return (self.offset + A.T @ B) ** self.degree
        return np.exp(-self.gamma * cdist(A.T, B.T, "sqeuclidean"))

    def gram(self, A: FloatArray) -> FloatArray:
        """Symmetric kernel matrix of the columns of A."""
        K = self.cross_gram(A, A)
        return 0.5 * (K + K.T)

    def diag(self, A: FloatArray) -> FloatArray:
        """k(a_j, a_j) for every column, without the full Gram matrix."""
        A = as_columns(A, "A")
        if self.kind is KernelKind.LINEAR:
            return np.einsum("ij,ij->j", A, A)
        if self.kind is KernelKind.POLYNOMIAL:
            return (self.offset + np.einsum("ij,ij->j", A, A)) ** self.degree
        return np.ones(A.shape[1])

    # ── Explicit feature space ──────────────────────────────────

    @property
    def has_explicit_map(self) -> bool:
        return self.kind is not KernelKind.RBF

    def feature_dim(self, n: int) -> int:
        """F, the explicit feature dimension for N-dimensional inputs."""
        if self.kind is KernelKind.LINEAR:
            return n
        if self.kind is KernelKind.POLYNOMIAL:
            return math.comb(n + self.degree, self.degree)
        raise UnsupportedKernelError("RBF kernels have no finite feature map")

    def explicit_map(self, x: FloatArray) -> FloatArray:
        """φ(x) for a vector, or Φ (F x L) for a matrix of columns.

        Linear kernels map to the identity; polynomial kernels to
        graded-lex weighted monomials.
        """
        if self.kind is KernelKind.RBF:
            raise UnsupportedKernelError(
                "explicit_map is only defined for linear and polynomial kernels",
                details={"kernel": self.spec},
            )
        vector = np.ndim(x) == 1
        X = as_columns(x, "x")
        if self.kind is KernelKind.LINEAR:
            Phi = X.copy()
        else:
            exps, weights = _monomials(X.shape[0], self.degree)
            scale = np.sqrt(weights * self.offset ** (self.degree - exps.sum(axis=1)))
            monos = np.prod(X[None, :, :] ** exps[:, :, None], axis=1)
            Phi = scale[:, None] * monos
        return Phi[:, 0] if vector else Phi
