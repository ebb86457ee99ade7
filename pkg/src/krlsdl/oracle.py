"""Reference computations used to check the recursive updates.

Nothing here is on the online training path. It provides:

- ``batch_wls``: the direct WLS dictionary solution (C, U, Ψ).
- An explicit feature-space path for linear and polynomial kernels: the
  dictionary D = Φ·Uᵀ, signal-domain ORMP and the rank-M dictionary update
  identities of grow and prune.
- ``batch_kmod``: batch kernel MOD, the benchmark the online learner is
  compared with.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve

from krlsdl.config import TOLERANCES
from krlsdl.exceptions import NumericalError, UnsupportedKernelError, ValidationError
from krlsdl.kernels import Kernel, as_columns
from krlsdl.kormp import codes_to_matrix, solve_many
from krlsdl.profile import Profile, guarded_inverse, relative_error
from krlsdl.types import ExplicitDictionary, FloatArray, IdentityCheck, SparseCode

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-8


# ── Direct WLS solution ─────────────────────────────────────────────


def batch_wls(
    W: FloatArray,
    lam: FloatArray,
    xi: float,
    K: FloatArray,
    reg_scale: FloatArray | None = None,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """C = (WΛWᵀ + ξ·diag(g))⁻¹, U = C·W·Λ and Ψ = U·K·Uᵀ, computed directly."""
    W = np.asarray(W, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    q, l = W.shape
    if lam.shape != (l,) or K.shape != (l, l):
        raise ValidationError(
            f"batch_wls dimension mismatch: W {W.shape}, lam {lam.shape}, K {K.shape}"
        )
    if xi <= 0:
        raise ValidationError(f"xi must be positive, got {xi}")
    g = np.ones(q) if reg_scale is None else np.asarray(reg_scale, dtype=np.float64)
    A = (W * lam[None, :]) @ W.T + xi * np.diag(g)
    try:
        C = solve(A, np.eye(q), assume_a="pos")
    except LinAlgError as e:
        raise NumericalError(f"WΛWᵀ + ξI is singular: {e}") from e
    C = 0.5 * (C + C.T)
    U = C @ (W * lam[None, :])
    Psi = U @ K @ U.T
    return C, U, 0.5 * (Psi + Psi.T)


# ── Explicit feature space ──────────────────────────────────────────


def _require_explicit(kernel: Kernel) -> None:
    if not kernel.has_explicit_map:
        raise UnsupportedKernelError(
            f"kernel '{kernel.spec}' has no explicit feature map",
            details={"kernel": kernel.spec},
        )


def explicit_dictionary(profile: Profile) -> ExplicitDictionary:
    """Materialize D = Φ·Uᵀ for a profile with an explicit kernel map."""
    _require_explicit(profile.kernel)
    Phi = profile.kernel.explicit_map(profile.X)
    return ExplicitDictionary(D=Phi @ profile.U.T, Phi=Phi)


def explicit_ormp(D: FloatArray, phi: FloatArray, s: int) -> SparseCode:
    """ORMP on explicit vectors, with the same selection rule as KORMP.

    Works with the orthogonal complement of the chosen atoms directly, so it
    shares no arithmetic with the Gram-only recursion.
    """
    D = np.asarray(D, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64).ravel()
    f, q = D.shape
    if phi.shape[0] != f:
        raise ValidationError(f"phi has {phi.shape[0]} entries, D has {f} rows")
    if not 1 <= s <= q:
        raise ValidationError(f"sparsity must lie in [1, {q}], got {s}")

    sigma2 = float(phi @ phi)
    if sigma2 <= 0.0:
        return SparseCode.empty(0.0)
    tol = TOLERANCES
    norms2 = np.einsum("ij,ij->j", D, D)
    if norms2.max() <= 0.0:
        return SparseCode.empty(sigma2)
    usable = norms2 > tol.degenerate_atom * norms2.max()
    stop = tol.stop_residual * sigma2

    basis = np.zeros((f, 0))
    residual = phi.copy()
    support: list[int] = []
    for _ in range(s):
        D_perp = D - basis @ (basis.T @ D)
        remainder = np.einsum("ij,ij->j", D_perp, D_perp)
        candidates = usable & (remainder > tol.orthogonal_remainder * norms2)
        candidates[support] = False
        if not candidates.any():
            break
        scores = np.full(q, -np.inf)
        scores[candidates] = (D_perp[:, candidates].T @ residual) ** 2 / remainder[candidates]
        j = int(np.argmax(scores))
        if scores[j] <= stop:
            break
        e = D_perp[:, j] / np.sqrt(remainder[j])
        basis = np.column_stack([basis, e])
        residual = residual - e * (e @ residual)
        support.append(j)
        if residual @ residual <= stop:
            break

    if not support:
        return SparseCode.empty(sigma2)
    coeffs, *_ = np.linalg.lstsq(D[:, support], phi, rcond=None)
    r = phi - D[:, support] @ coeffs
    return SparseCode(support=tuple(support), coeffs=coeffs, sq_error=float(r @ r))


def _check(name: str, actual: FloatArray, expected: FloatArray) -> IdentityCheck:
    return IdentityCheck(
        name=name,
        relative_error=relative_error(actual, expected),
        tolerance=IDENTITY_TOLERANCE,
    )


def explicit_grow_check(
    before: Profile, x: FloatArray, w: FloatArray, lam: float
) -> IdentityCheck:
    """Check D_new = D_old + r·α·uᵀ with r = φ(x) − D_old·w after a grow."""
    _require_explicit(before.kernel)
    x = as_columns(x, "x")
    w = np.asarray(w, dtype=np.float64).reshape(before.n_atoms, x.shape[1])
    D_old = explicit_dictionary(before).D
    u = before.C @ w
    alpha = np.linalg.inv(lam * np.eye(w.shape[1]) + w.T @ u)
    r = before.kernel.explicit_map(x) - D_old @ w
    after = before.copy().grow(x, w, lam)
    return _check("D update (grow)", explicit_dictionary(after).D, D_old + r @ alpha @ u.T)


def explicit_prune_check(before: Profile, m: Sequence[int]) -> IdentityCheck:
    """Check D̂ = D − r_m·α_m·u_mᵀ with r_m the residuals of the removed samples."""
    _require_explicit(before.kernel)
    idx = np.sort(np.asarray(list(m), dtype=np.int64))
    ex = explicit_dictionary(before)
    wm = before.W[:, idx]
    um = before.C @ wm
    alpha = np.linalg.inv(np.diag(1.0 / before.lam[idx]) - wm.T @ um)
    r_m = ex.Phi[:, idx] - ex.D @ wm
    after = before.copy().prune(idx)
    return _check("D-hat final (prune)", explicit_dictionary(after).D, ex.D - r_m @ alpha @ um.T)


def update_identities(
    profile: Profile,
    x: FloatArray,
    w: FloatArray,
    lam: float,
    m: Sequence[int],
) -> list[IdentityCheck]:
    """Verify every derived grow and prune identity in explicit space.

    Grows a copy of ``profile`` by (x, w, lam), then prunes indices ``m`` from
    the grown copy. Returns one check per identity: U, D and Ψ after the
    grow; Ĉ, the intermediate D̂, the Φ·v_m identity, the final D̂ and Ψ̂
    after the prune.
    """
    _require_explicit(profile.kernel)
    x = as_columns(x, "x")
    w = np.asarray(w, dtype=np.float64).reshape(profile.n_atoms, x.shape[1])
    checks: list[IdentityCheck] = []

    # grow
    grown = profile.copy().grow(x, w, lam)
    _, U_direct, _ = batch_wls(grown.W, grown.lam, grown.xi, grown.K, grown.reg_scale)
    checks.append(_check("U update (grow)", grown.U, U_direct))
    checks.append(explicit_grow_check(profile, x, w, lam))
    D_grown = explicit_dictionary(grown).D
    checks.append(_check("Psi update (grow)", grown.Psi, D_grown.T @ D_grown))

    # prune
    idx = np.sort(np.asarray(list(m), dtype=np.int64))
    keep = np.ones(grown.size, dtype=bool)
    keep[idx] = False
    ex = explicit_dictionary(grown)
    wm = grown.W[:, idx]
    um = grown.C @ wm
    lam_m = grown.lam[idx]
    alpha = np.linalg.inv(np.diag(1.0 / lam_m) - wm.T @ um)
    lam_hat = grown.lam.copy()
    lam_hat[idx] = 0.0
    vm = (lam_hat[:, None] * grown.W.T) @ um

    pruned = grown.copy().prune(idx)
    C_direct, _, _ = batch_wls(
        pruned.W, pruned.lam, pruned.xi, pruned.K, pruned.reg_scale
    )
    checks.append(_check("C-hat (prune)", pruned.C, C_direct))

    U_zeroed = grown.U.copy()
    U_zeroed[:, idx] = 0.0
    D_intermediate = ex.Phi @ (U_zeroed + um @ alpha @ vm.T).T
    D_pruned = explicit_dictionary(pruned).D
    checks.append(_check("D-hat intermediate (prune)", D_intermediate, D_pruned))

    Phi_m = ex.Phi[:, idx]
    checks.append(
        _check(
            "Phi v identity (prune)",
            ex.Phi @ vm,
            ex.D @ wm - (Phi_m * lam_m[None, :]) @ (wm.T @ um),
        )
    )
    checks.append(explicit_prune_check(grown, idx))
    checks.append(_check("Psi-hat (prune)", pruned.Psi, D_pruned.T @ D_pruned))
    return checks


# ── Batch kernel MOD ────────────────────────────────────────────────


def total_error(K: FloatArray, U: FloatArray, W: FloatArray, Psi: FloatArray) -> float:
    """Σ_j ‖φ(x_j) − D·w_j‖² for D = Φ·Uᵀ, from Gram quantities only."""
    UK = U @ K
    return float(np.trace(K) - 2.0 * np.sum(W * UK) + np.sum(W * (Psi @ W)))


@dataclass
class KmodResult:
    """Final batch KMOD state plus its per-iteration error trace."""

    kernel: Kernel
    gamma: float
    X: FloatArray
    K: FloatArray
    W: FloatArray
    C: FloatArray
    U: FloatArray
    Psi: FloatArray
    reg_scale: FloatArray
    coding_errors: list[float] = field(default_factory=list)
    update_errors: list[float] = field(default_factory=list)
    coding_objectives: list[float] = field(default_factory=list)
    update_objectives: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.coding_errors)

    def to_profile(self) -> Profile:
        """The batch solution as a Profile over all training samples."""
        return Profile(
            kernel=self.kernel,
            gamma=self.gamma,
            X=self.X,
            K=self.K,
            W=self.W,
            C=self.C,
            U=self.U,
            Psi=self.Psi,
            lam=np.ones(self.X.shape[1]),
            xi=self.gamma,
            reg_scale=self.reg_scale,
        )


def batch_kmod(
    X: FloatArray,
    kernel: Kernel,
    q: int,
    s: int,
    gamma: float,
    iters: int,
    seed: int | np.random.Generator = 0,
) -> KmodResult:
    """Alternate KORMP coding of all samples with the direct WLS update.

    The dictionary starts from Q distinct random samples. After every update
    atoms are rescaled to unit norm; an atom that no code uses collapses to
    zero and is replaced by the currently worst represented sample. Unused
    atoms after the last update stay zero.
    """
    if iters < 1:
        raise ValidationError(f"batch_kmod needs at least one iteration, got {iters}")
    X = as_columns(X, "X")
    n_samples = X.shape[1]
    if n_samples < q:
        raise ValidationError(f"need at least Q={q} samples, got {n_samples}")
    if not 1 <= s <= q:
        raise ValidationError(f"sparsity must lie in [1, {q}], got {s}")
    rng = np.random.default_rng(seed)

    K = kernel.gram(X)
    k_diag = np.diag(K)
    U = np.zeros((q, n_samples))
    start = rng.choice(n_samples, size=q, replace=False)
    U[np.arange(q), start] = 1.0
    scale = np.sqrt(np.maximum(k_diag[start], TOLERANCES.min_atom_norm2))
    U /= scale[:, None]
    reg_scale = np.ones(q)
    C = np.eye(q)
    W = np.zeros((q, n_samples))
    result = KmodResult(
        kernel=kernel, gamma=gamma, X=X, K=K, W=W, C=C, U=U,
        Psi=U @ K @ U.T, reg_scale=reg_scale,
    )

    for it in range(iters):
        Psi = U @ K @ U.T
        Psi = 0.5 * (Psi + Psi.T)
        codes = solve_many(Psi, U @ K, k_diag, s)
        W = codes_to_matrix(codes, q)
        per_sample = np.array([c.sq_error for c in codes])
        coding_err = float(per_sample.sum())
        result.coding_errors.append(coding_err)
        result.coding_objectives.append(coding_err + gamma * float(np.trace(Psi)))

        C, U, Psi = batch_wls(W, np.ones(n_samples), gamma, K)
        update_err = total_error(K, U, W, Psi)
        result.update_errors.append(update_err)
        result.update_objectives.append(update_err + gamma * float(np.trace(Psi)))
        logger.debug(
            "kmod iter %d: coding error %.6g, update error %.6g", it, coding_err, update_err
        )

        d = np.diag(Psi).copy()
        dead = np.flatnonzero(d <= TOLERANCES.min_atom_norm2)
        # a replaced atom only matters to the next coding pass; the final
        # state must keep U = C·W
        if dead.size and it < iters - 1:
            worst = np.argsort(-per_sample, kind="stable")[: dead.size]
            logger.debug("kmod iter %d: replacing unused atoms %s", it, dead.tolist())
            for atom, sample in zip(dead, worst):
                U[atom] = 0.0
                U[atom, sample] = 1.0
            Psi = U @ K @ U.T
            d = np.diag(Psi).copy()
        d[d <= TOLERANCES.min_atom_norm2] = 1.0

        s_atoms = np.sqrt(d)
        U = U / s_atoms[:, None]
        W = W * s_atoms[:, None]
        C = C / np.outer(s_atoms, s_atoms)
        reg_scale = d
        Psi = U @ K @ U.T

    result.W, result.C, result.U = W, C, U
    result.Psi = 0.5 * (Psi + Psi.T)
    result.reg_scale = reg_scale
    return result
