"""Kernel order recursive matching pursuit (KORMP).

Sparse coding in feature space from Gram quantities alone: the dictionary
Gram matrix Ψ, the correlations h = Dᵀφ(x) and the signal energy
σ² = k(x, x). The dictionary itself is never formed.

The recursion keeps the rows of a partial QR factorization of the
dictionary, expressed through Ψ: row t holds the coordinates of every atom
along the t-th orthonormal basis vector. Each step picks the atom whose
orthogonal remainder best explains the current residual.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import solve_triangular

from krlsdl.config import TOLERANCES
from krlsdl.exceptions import ValidationError
from krlsdl.types import FloatArray, SparseCode

if TYPE_CHECKING:
    from krlsdl.profile import Profile

logger = logging.getLogger(__name__)


def _check_inputs(psi: FloatArray, h: FloatArray, sigma2: float, s: int) -> None:
    q = h.shape[0]
    if psi.shape != (q, q):
        raise ValidationError(
            f"psi must be {q}x{q} to match h, got {psi.shape[0]}x{psi.shape[1]}"
        )
    if not 1 <= s <= q:
        raise ValidationError(f"sparsity must lie in [1, {q}], got {s}")
    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(h)) and np.isfinite(sigma2)):
        raise ValidationError("KORMP inputs contain non-finite values")
    if sigma2 < 0:
        raise ValidationError(f"sigma2 must be non-negative, got {sigma2}")


def residual_error(
    psi: FloatArray, h: FloatArray, sigma2: float, support: tuple[int, ...], coeffs: FloatArray
) -> float:
    """σ² − 2·h_Sᵀw + wᵀΨ_SS·w for a code restricted to ``support``."""
    if not support:
        return float(sigma2)
    idx = list(support)
    w = np.asarray(coeffs)
    return float(sigma2 - 2.0 * h[idx] @ w + w @ psi[np.ix_(idx, idx)] @ w)


def solve(psi: FloatArray, h: FloatArray, sigma2: float, s: int) -> SparseCode:
    """Code one signal with at most ``s`` atoms.

    Atoms with Ψ_jj at or below a tiny fraction of the largest diagonal
    entry are never selected, nor are atoms lying (numerically) in the span
    of those already chosen. Ties go to the lowest atom index. Selection
    stops early once the residual is negligible relative to σ².
    """
    psi = np.asarray(psi, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).ravel()
    sigma2 = float(sigma2)
    _check_inputs(psi, h, sigma2, s)

    if sigma2 <= 0.0:
        return SparseCode.empty(0.0)

    q = h.shape[0]
    tol = TOLERANCES
    diag = np.diag(psi).copy()
    max_diag = float(diag.max())
    if max_diag <= 0.0:
        return SparseCode.empty(sigma2)
    usable = diag > tol.degenerate_atom * max_diag

    rows = np.zeros((s, q))
    remainder = diag.copy()
    corr = h.copy()
    z = np.zeros(s)
    support: list[int] = []
    selected = np.zeros(q, dtype=bool)
    err = sigma2
    stop = tol.stop_residual * sigma2

    for t in range(s):
        candidates = usable & ~selected & (remainder > tol.orthogonal_remainder * diag)
        if not candidates.any():
            logger.debug("KORMP: no admissible atom left after %d selections", t)
            break
        scores = np.full(q, -np.inf)
        scores[candidates] = corr[candidates] ** 2 / remainder[candidates]
        j = int(np.argmax(scores))
        if scores[j] <= stop:
            break

        norm = np.sqrt(remainder[j])
        row = (psi[j] - rows[:t].T @ rows[:t, j]) / norm
        rows[t] = row
        z[t] = corr[j] / norm
        support.append(j)
        selected[j] = True

        remainder = remainder - row**2
        corr = corr - row * z[t]
        err -= z[t] ** 2
        if err <= stop:
            break

    if not support:
        return SparseCode.empty(sigma2)

    k = len(support)
    R = np.triu(rows[:k][:, support])
    coeffs = solve_triangular(R, z[:k], lower=False)
    sq_error = residual_error(psi, h, sigma2, tuple(support), coeffs)
    return SparseCode(support=tuple(support), coeffs=coeffs, sq_error=max(sq_error, 0.0))


def solve_many(
    psi: FloatArray, H: FloatArray, sigma2: FloatArray, s: int
) -> list[SparseCode]:
    """Code every column of H (Q x M) with its own energy ``sigma2[j]``."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=np.float64))
    if sigma2.shape[0] != H.shape[1]:
        raise ValidationError(
            f"Need one sigma2 per signal: {H.shape[1]} signals, {sigma2.shape[0]} energies"
        )
    return [solve(psi, H[:, j], float(sigma2[j]), s) for j in range(H.shape[1])]


def codes_to_matrix(codes: list[SparseCode], q: int) -> FloatArray:
    """Stack dense codes as the columns of a Q x M matrix."""
    if not codes:
        return np.zeros((q, 0))
    return np.column_stack([c.dense(q) for c in codes])


def sparse_code(profile: Profile, x: FloatArray, s: int) -> list[SparseCode]:
    """Code each column of ``x`` against the profile's dictionary."""
    h, sigma2 = profile.code_terms(x)
    return solve_many(profile.Psi, h, sigma2, s)
