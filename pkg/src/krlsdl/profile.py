"""The feature-space profile: the online dictionary state and its updates.

A profile stores the retained samples X and every derived matrix needed to
work with the virtual dictionary D = Φ·Uᵀ without ever forming it:

    K   = k(X, X)                                 L x L
    W   sparse codes of the retained samples      Q x L
    C   = (W·Λ·Wᵀ + ξ·diag(g))⁻¹                  Q x Q
    U   = C·W·Λ                                   Q x L
    Psi = U·K·Uᵀ = DᵀD                            Q x Q

Λ = diag(lam) holds per-sample forgetting weights and ξ = γ·∏λ the matched
regularizer. The per-atom scale g (``reg_scale``) is all ones until the
first normalization; rescaling atom j by s_j multiplies g_j by s_j².

Profiles are mutable single-writer objects: ``grow``, ``prune`` and
``normalize`` update in place (rank-M recursions, O(L²) for M = 1) and
return ``self``. Read-only methods may be called freely between updates.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from scipy.linalg import inv

from krlsdl import kormp
from krlsdl.config import TOLERANCES, Tolerances
from krlsdl.exceptions import (
    DegenerateAtomError,
    InvariantError,
    KrlsError,
    NumericalError,
    PruneRejectedError,
    SnapshotError,
    UpdateRejectedError,
    ValidationError,
)
from krlsdl.kernels import Kernel, as_columns
from krlsdl.models import ProfileDims, ProfileSnapshot
from krlsdl.types import FloatArray, SparseCode

logger = logging.getLogger(__name__)


def _sym(A: FloatArray) -> FloatArray:
    return 0.5 * (A + A.T)


def relative_error(A: FloatArray, B: FloatArray) -> float:
    """‖A − B‖_F relative to the larger of ‖A‖_F and ‖B‖_F."""
    A = np.asarray(A)
    B = np.asarray(B)
    scale = max(float(np.linalg.norm(A)), float(np.linalg.norm(B)), 1e-300)
    return float(np.linalg.norm(A - B)) / scale


def guarded_inverse(
    A: FloatArray,
    reference: float,
    error: type[NumericalError],
    what: str,
    tol: Tolerances = TOLERANCES,
) -> FloatArray:
    """Invert a small symmetric matrix, refusing numerically singular input.

    ``reference`` is the magnitude of the terms whose combination produced
    A; A is rejected when its smallest singular value falls below
    ``tol.min_relative_det * reference`` or its condition number exceeds
    ``tol.max_condition``. M = 1 is a plain division.
    """
    if not np.all(np.isfinite(A)):
        raise error(f"{what} contains non-finite values")
    floor = tol.min_relative_det * max(reference, np.finfo(float).tiny)
    if A.shape == (1, 1):
        a = float(A[0, 0])
        if abs(a) <= floor:
            raise error(
                f"{what} is numerically singular ({a:.3e})",
                details={"value": f"{a:.6e}"},
            )
        return np.array([[1.0 / a]])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= floor or sv[0] > tol.max_condition * sv[-1]:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise error(
            f"{what} is numerically singular (condition {cond:.3e})",
            details={"condition": f"{cond:.6e}"},
        )
    return _sym(inv(A))


class Profile:
    """Online kernel dictionary state (see module docstring for notation)."""

    def __init__(
        self,
        kernel: Kernel,
        gamma: float,
        X: FloatArray,
        K: FloatArray,
        W: FloatArray,
        C: FloatArray,
        U: FloatArray,
        Psi: FloatArray,
        lam: FloatArray,
        xi: float,
        reg_scale: FloatArray | None = None,
    ) -> None:
        self.kernel = kernel
        self.gamma = float(gamma)
        self.X = np.asarray(X, dtype=np.float64)
        self.K = np.asarray(K, dtype=np.float64)
        self.W = np.asarray(W, dtype=np.float64)
        self.C = np.asarray(C, dtype=np.float64)
        self.U = np.asarray(U, dtype=np.float64)
        self.Psi = np.asarray(Psi, dtype=np.float64)
        self.lam = np.asarray(lam, dtype=np.float64)
        self.xi = float(xi)
        q = self.W.shape[0]
        self.reg_scale = (
            np.ones(q) if reg_scale is None else np.asarray(reg_scale, dtype=np.float64)
        )

    # ── Construction ────────────────────────────────────────────

    @classmethod
    def init(
        cls, X0: FloatArray, kernel: Kernel, gamma: float, q: int | None = None
    ) -> Profile:
        """Start a profile from Q samples, one atom per sample.

        W = I and lam = 1 with ξ = γ; C, U and Ψ are the matching WLS
        solution, so every atom is its sample scaled by 1/(1+γ).
        """
        X0 = as_columns(X0, "X0")
        q = X0.shape[1] if q is None else q
        if q < 1:
            raise ValidationError("a profile needs at least one atom")
        if X0.shape[1] < q:
            raise ValidationError(
                f"need {q} initial samples, got {X0.shape[1]}",
                details={"q": str(q), "available": str(X0.shape[1])},
            )
        if gamma <= 0:
            raise ValidationError(f"gamma must be positive, got {gamma}")
        X = X0[:, :q].copy()
        K = kernel.gram(X)
        eye = np.eye(q)
        c = 1.0 / (1.0 + gamma)
        logger.debug("Profile initialized: N=%d Q=%d gamma=%g", X.shape[0], q, gamma)
        return cls(
            kernel=kernel,
            gamma=gamma,
            X=X,
            K=K,
            W=eye.copy(),
            C=c * eye,
            U=c * eye,
            Psi=(c * c) * K,
            lam=np.ones(q),
            xi=gamma,
        )

    def copy(self) -> Profile:
        return Profile(
            kernel=self.kernel,
            gamma=self.gamma,
            X=self.X.copy(),
            K=self.K.copy(),
            W=self.W.copy(),
            C=self.C.copy(),
            U=self.U.copy(),
            Psi=self.Psi.copy(),
            lam=self.lam.copy(),
            xi=self.xi,
            reg_scale=self.reg_scale.copy(),
        )

    # ── Shape helpers ───────────────────────────────────────────

    @property
    def n_features(self) -> int:
        return int(self.X.shape[0])

    @property
    def size(self) -> int:
        """L, the number of retained samples."""
        return int(self.X.shape[1])

    @property
    def n_atoms(self) -> int:
        return int(self.W.shape[0])

    def _check_signal(self, x: FloatArray) -> FloatArray:
        x = as_columns(x, "x")
        if x.shape[0] != self.n_features:
            raise ValidationError(
                f"Dimension mismatch: samples have {x.shape[0]} features, "
                f"profile expects {self.n_features}"
            )
        return x

    # ── Sparse-coding inputs ────────────────────────────────────

    def code_inputs(self, x: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """(h, σ², k) for the columns of x: h = U·k, σ² = k(x, x), k = k(X, x)."""
        x = self._check_signal(x)
        kvec = self.kernel.cross_gram(self.X, x)
        return self.U @ kvec, self.kernel.gram(x), kvec

    def code_terms(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        """h and the diagonal of σ² only; what coding a batch needs."""
        x = self._check_signal(x)
        return self.U @ self.kernel.cross_gram(self.X, x), self.kernel.diag(x)

    def sparse_code(self, x: FloatArray, s: int) -> list[SparseCode]:
        return kormp.sparse_code(self, x, s)

    def representation_error(self, x: FloatArray, s: int) -> float:
        """Squared feature-space residual of x after KORMP with s atoms."""
        h, sigma2 = self.code_terms(x)
        if h.shape[1] != 1:
            raise ValidationError("representation_error takes a single sample")
        return kormp.solve(self.Psi, h[:, 0], float(sigma2[0]), s).sq_error

    def representation_errors(self, x: FloatArray, s: int) -> FloatArray:
        """Representation error of every column of x."""
        h, sigma2 = self.code_terms(x)
        return np.array(
            [kormp.solve(self.Psi, h[:, j], float(sigma2[j]), s).sq_error
             for j in range(h.shape[1])]
        )

    # ── Grow ────────────────────────────────────────────────────

    def grow(self, x: FloatArray, w: FloatArray, lam: float = 1.0) -> Profile:
        """Add the M columns of x with codes w, discounting the past by lam."""
        x = self._check_signal(x)
        w = np.asarray(w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        m = x.shape[1]
        q = self.n_atoms
        if w.shape != (q, m):
            raise ValidationError(
                f"codes must have shape {q}x{m}, got {w.shape[0]}x{w.shape[1]}"
            )
        if m > q:
            raise ValidationError(
                f"cannot add {m} samples at once with only {q} atoms",
                details={"M": str(m), "Q": str(q)},
            )
        if not 0.0 < lam <= 1.0:
            raise ValidationError(f"forgetting factor must lie in (0, 1], got {lam}")

        u = self.C @ w
        wu = w.T @ u
        alpha = guarded_inverse(
            lam * np.eye(m) + wu,
            reference=max(lam, float(np.abs(wu).max())),
            error=UpdateRejectedError,
            what="grow matrix (lambda*I + wᵀCw)",
        )
        v = (self.lam[:, None] * self.W.T) @ u
        kvec = self.kernel.cross_gram(self.X, x)
        sigma2 = self.kernel.gram(x)
        Kv = self.K @ v
        u_tilde = self.U @ (kvec - Kv)
        r2 = v.T @ Kv - v.T @ kvec - kvec.T @ v + sigma2
        ua = u @ alpha

        self.Psi = _sym(self.Psi + ua @ u_tilde.T + u_tilde @ ua.T + ua @ r2 @ ua.T)
        self.C = _sym((self.C - ua @ u.T) / lam)
        self.U = np.hstack([self.U - ua @ v.T, ua])
        self.K = np.block([[self.K, kvec], [kvec.T, _sym(sigma2)]])
        self.X = np.hstack([self.X, x])
        self.W = np.hstack([self.W, w])
        self.lam = np.concatenate([lam * self.lam, np.ones(m)])
        self.xi *= lam
        logger.debug("grow: M=%d lambda=%.6f -> L=%d xi=%.3e", m, lam, self.size, self.xi)
        return self

    # ── Prune ───────────────────────────────────────────────────

    def _normalize_indices(self, m: Sequence[int]) -> np.ndarray:
        idx = np.asarray(list(m), dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValidationError("prune needs a non-empty list of sample indices")
        if np.unique(idx).size != idx.size:
            raise ValidationError(f"prune indices must be distinct, got {idx.tolist()}")
        if idx.min() < 0 or idx.max() >= self.size:
            raise ValidationError(
                f"prune indices must lie in [0, {self.size}), got {idx.tolist()}"
            )
        return np.sort(idx)

    def _prune_terms(self, idx: np.ndarray) -> tuple[FloatArray, FloatArray, np.ndarray]:
        """u_m, α_m and the survivor mask, or PruneRejectedError."""
        if self.size - idx.size < self.n_atoms:
            raise PruneRejectedError(
                f"pruning {idx.size} samples would leave fewer than Q={self.n_atoms}",
                details={"L": str(self.size), "M": str(idx.size)},
            )
        keep = np.ones(self.size, dtype=bool)
        keep[idx] = False
        nonzero_rows = np.any(self.W[:, keep] != 0.0, axis=1)
        if not nonzero_rows.all():
            row = int(np.flatnonzero(~nonzero_rows)[0])
            raise PruneRejectedError(
                f"removing samples {idx.tolist()} would zero out row {row} of W",
                details={"row": str(row)},
            )
        wm = self.W[:, idx]
        um = self.C @ wm
        inv_lam = np.diag(1.0 / self.lam[idx])
        wu = wm.T @ um
        alpha = guarded_inverse(
            inv_lam - wu,
            reference=max(float(np.abs(inv_lam).max()), float(np.abs(wu).max())),
            error=PruneRejectedError,
            what="prune matrix (diag(lam_m)⁻¹ − w_mᵀC w_m)",
        )
        return um, alpha, keep

    def prune_obstruction(self, m: Sequence[int]) -> str | None:
        """Why pruning m would fail, or None if it is allowed."""
        try:
            self._prune_terms(self._normalize_indices(m))
        except PruneRejectedError as e:
            return e.message
        return None

    def prune(self, m: Sequence[int]) -> Profile:
        """Remove the samples at indices m, keeping the WLS solution exact."""
        idx = self._normalize_indices(m)
        um, alpha, keep = self._prune_terms(idx)
        lam_m = self.lam[idx]

        lam_hat = self.lam.copy()
        lam_hat[idx] = 0.0
        vm = (lam_hat[:, None] * self.W.T) @ um
        km = self.K[:, idx]
        sig_m = self.K[np.ix_(idx, idx)]
        Kvm_a = self.K @ vm @ alpha
        u_hat = self.U @ (km * lam_m[None, :] - Kvm_a)
        cross = (lam_m[:, None] * (km.T @ vm)) @ alpha
        inner = (
            lam_m[:, None] * sig_m * lam_m[None, :]
            - cross
            - cross.T
            + alpha @ vm.T @ Kvm_a
        )

        self.Psi = _sym(self.Psi - (um @ u_hat.T + u_hat @ um.T) + um @ inner @ um.T)
        self.C = _sym(self.C + um @ alpha @ um.T)
        self.U = self.U[:, keep] + um @ alpha @ vm[keep].T
        self.X = self.X[:, keep]
        self.W = self.W[:, keep]
        self.K = self.K[np.ix_(keep, keep)]
        self.lam = self.lam[keep]
        logger.debug("prune: removed %s -> L=%d", idx.tolist(), self.size)
        return self

    # ── Normalization ───────────────────────────────────────────

    def needs_normalization(self, tol: float) -> bool:
        return bool(np.max(np.abs(np.diag(self.Psi) - 1.0)) > tol)

    def normalize(self) -> Profile:
        """Rescale every atom to unit norm; UᵀW is left unchanged."""
        d = np.diag(self.Psi).copy()
        bad = np.flatnonzero(d <= TOLERANCES.min_atom_norm2)
        if bad.size:
            raise DegenerateAtomError(
                f"atoms {bad.tolist()} have near-zero norm and cannot be normalized",
                details={"atoms": ",".join(str(i) for i in bad)},
            )
        s = np.sqrt(d)
        self.Psi = _sym(self.Psi / np.outer(s, s))
        np.fill_diagonal(self.Psi, 1.0)
        self.W = s[:, None] * self.W
        self.C = _sym(self.C / np.outer(s, s))
        self.U = self.U / s[:, None]
        self.reg_scale = self.reg_scale * d
        logger.debug("normalize: atom norms in [%.4f, %.4f]", s.min(), s.max())
        return self

    def refresh_gram(self) -> Profile:
        """Recompute Ψ = U·K·Uᵀ from scratch to cancel accumulated drift."""
        self.Psi = _sym(self.U @ self.K @ self.U.T)
        return self

    # ── Derived quantities ──────────────────────────────────────

    def contribution_scores(self) -> FloatArray:
        """ℓ2 norm of each row of B = UᵀW (one score per retained sample)."""
        return np.linalg.norm(self.U.T @ self.W, axis=1)

    def weighted_gram_inverse(self) -> FloatArray:
        """W·Λ·Wᵀ + ξ·diag(g), the matrix C is the inverse of."""
        return (self.W * self.lam[None, :]) @ self.W.T + self.xi * np.diag(self.reg_scale)

    def invariant_errors(self) -> dict[str, float]:
        """Relative violation of each profile invariant."""
        q = self.n_atoms
        return {
            "C symmetry": relative_error(self.C, self.C.T),
            "Psi symmetry": relative_error(self.Psi, self.Psi.T),
            "K symmetry": relative_error(self.K, self.K.T),
            "C consistency": relative_error(self.C @ self.weighted_gram_inverse(), np.eye(q)),
            "U identity": relative_error(self.U, self.C @ self.W * self.lam[None, :]),
            "Psi identity": relative_error(self.Psi, self.U @ self.K @ self.U.T),
        }

    def validate(self, tol: Tolerances = TOLERANCES) -> None:
        """Raise InvariantError unless every consistency invariant holds."""
        n, l, q = self.n_features, self.size, self.n_atoms
        shapes = {
            "K": (self.K.shape, (l, l)),
            "W": (self.W.shape, (q, l)),
            "C": (self.C.shape, (q, q)),
            "U": (self.U.shape, (q, l)),
            "Psi": (self.Psi.shape, (q, q)),
            "lam": (self.lam.shape, (l,)),
            "reg_scale": (self.reg_scale.shape, (q,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise InvariantError(
                    f"{name} has shape {got}, expected {want} for N={n} L={l} Q={q}"
                )
        if np.any(self.lam <= 0.0) or np.any(self.lam > 1.0):
            raise InvariantError("sample weights must lie in (0, 1]")
        if self.xi <= 0.0:
            raise InvariantError(f"xi must be positive, got {self.xi}")

        limits = {
            "C symmetry": tol.symmetry,
            "Psi symmetry": tol.symmetry,
            "K symmetry": tol.symmetry,
            "C consistency": tol.consistency,
            "U identity": tol.u_identity,
            "Psi identity": tol.gram_identity,
        }
        errors = self.invariant_errors()
        failed = {k: v for k, v in errors.items() if v > limits[k]}
        if failed:
            name, err = next(iter(failed.items()))
            raise InvariantError(
                f"profile invariant '{name}' violated (relative error {err:.3e})",
                details={k: f"{v:.3e}" for k, v in failed.items()},
            )

    # ── Persistence ─────────────────────────────────────────────

    def to_snapshot(self) -> ProfileSnapshot:
        return ProfileSnapshot(
            kernel=self.kernel.spec,
            dims=ProfileDims(N=self.n_features, L=self.size, Q=self.n_atoms),
            gamma=self.gamma,
            xi=self.xi,
            lam=self.lam.tolist(),
            reg_scale=self.reg_scale.tolist(),
            X=self.X.tolist(),
            K=self.K.tolist(),
            W=self.W.tolist(),
            C=self.C.tolist(),
            U=self.U.tolist(),
            Psi=self.Psi.tolist(),
        )

    @classmethod
    def from_snapshot(cls, snap: ProfileSnapshot, validate: bool = True) -> Profile:
        """Rebuild a profile; all invariants are checked unless told otherwise."""
        try:
            kernel = Kernel.parse(snap.kernel)
        except KrlsError as e:
            raise SnapshotError(f"snapshot kernel is invalid: {e.message}") from e
        profile = cls(
            kernel=kernel,
            gamma=snap.gamma,
            X=np.array(snap.X, dtype=np.float64),
            K=np.array(snap.K, dtype=np.float64),
            W=np.array(snap.W, dtype=np.float64),
            C=np.array(snap.C, dtype=np.float64),
            U=np.array(snap.U, dtype=np.float64),
            Psi=np.array(snap.Psi, dtype=np.float64),
            lam=np.array(snap.lam, dtype=np.float64),
            xi=snap.xi,
            reg_scale=np.array(snap.reg_scale, dtype=np.float64),
        )
        if validate:
            try:
                profile.validate()
            except InvariantError as e:
                raise SnapshotError(
                    f"snapshot fails profile checks: {e.message}", details=e.details
                ) from e
        return profile

    def save(self, path: str | Path) -> Path:
        target = Path(path)
        target.write_text(self.to_snapshot().model_dump_json(indent=1))
        return target

    @classmethod
    def load(cls, path: str | Path) -> Profile:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise SnapshotError(f"Cannot read snapshot '{path}': {e.strerror}") from e
        try:
            snap = ProfileSnapshot.model_validate_json(text)
        except PydanticValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"]) or "document"
            raise SnapshotError(
                f"Invalid profile snapshot '{path}' ({where}): {first['msg']}"
            ) from e
        return cls.from_snapshot(snap)

    def __repr__(self) -> str:
        return (
            f"Profile(kernel={self.kernel.spec!r}, N={self.n_features}, "
            f"L={self.size}, Q={self.n_atoms}, xi={self.xi:.3e})"
        )
