"""Online training loop: gate, code, grow, prune, normalize.

One ``OnlineTrainer`` owns one Profile. ``train_online`` drives a trainer
over a sample matrix; the classifier steps one trainer per class in
lock-step. Checkpoint callbacks receive the batch index, the live profile
and the accumulated grow/prune timings.
"""

from __future__ import annotations

import logging
import math
import time
from typing import Callable, Iterator, Sequence

import numpy as np

from krlsdl import kormp
from krlsdl.config import TOLERANCES, TrainerConfig
from krlsdl.exceptions import (
    DegenerateAtomError,
    PruneRejectedError,
    UpdateRejectedError,
    ValidationError,
)
from krlsdl.kernels import Kernel, as_columns
from krlsdl.profile import Profile
from krlsdl.types import FloatArray, PhaseTimings, TrainStats

logger = logging.getLogger(__name__)

CheckpointCallback = Callable[[int, Profile, PhaseTimings], None]


# ── Schedule and selection rules ────────────────────────────────────


def forgetting_factor(cfg: TrainerConfig, batch_index: int, total_batches: int) -> float:
    """λ ramps linearly from lambda0 to 1 over the first ramp_fraction of batches."""
    if not 0 <= batch_index < total_batches:
        raise ValidationError(
            f"batch index {batch_index} outside [0, {total_batches})"
        )
    end = math.floor(cfg.ramp_fraction * total_batches)
    if batch_index >= end:
        return 1.0
    return cfg.lambda0 + (1.0 - cfg.lambda0) * batch_index / end


def coherence(profile: Profile, x: FloatArray) -> FloatArray:
    """max_j |k(x_j', x)| / sqrt(k(x, x)·K_jj) for every column of x.

    Stored samples with zero self-similarity are ignored; a zero-energy
    signal gets coherence +inf so it is never informative.
    """
    x = as_columns(x, "x")
    kvec = profile.kernel.cross_gram(profile.X, x)
    k_diag = np.diag(profile.K)
    sigma2 = profile.kernel.diag(x)
    out = np.full(x.shape[1], np.inf)
    live = k_diag > 0.0
    if not live.any():
        out[sigma2 > 0.0] = 0.0
        return out
    for j in np.flatnonzero(sigma2 > 0.0):
        out[j] = np.max(np.abs(kvec[live, j]) / np.sqrt(sigma2[j] * k_diag[live]))
    # round-off around the Cauchy-Schwarz bound snaps to exactly 1
    out[np.isfinite(out) & (out > 1.0 - TOLERANCES.unit_coherence)] = 1.0
    return out


def is_informative(profile: Profile, x: FloatArray, delta: float) -> bool:
    """True iff the sample's coherence with the profile is strictly below delta."""
    if not 0.0 < delta <= 1.0:
        raise ValidationError(f"delta must lie in (0, 1], got {delta}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("is_informative takes a single sample vector")
    return bool(coherence(profile, x)[0] < delta)


def select_prune_candidates(
    profile: Profile, count: int, protect_newest: int = 0
) -> list[int]:
    """Pick up to ``count`` low-contribution samples that can be removed together.

    Candidates come from the older half of the profile in ascending score
    order (ties by index). Each is kept only if the accumulated set still
    passes both prune conditions. If the older half runs dry the scan
    continues over the rest of the profile, leaving out the newest
    ``protect_newest`` samples. May return fewer than ``count`` indices.
    """
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}")
    L = profile.size
    scores = profile.contribution_scores()
    order = np.argsort(scores, kind="stable")
    half = L // 2
    first = [int(j) for j in order if j < half]
    rest = [int(j) for j in order if half <= j < L - protect_newest]

    chosen: list[int] = []
    for pool in (first, rest):
        for j in pool:
            if profile.prune_obstruction(chosen + [j]) is None:
                chosen.append(j)
                if len(chosen) == count:
                    return sorted(chosen)
        if pool is first:
            logger.debug(
                "prune selection: %d of %d candidates in the older half", len(chosen), count
            )
    return sorted(chosen)


def checkpoint_indices(total_batches: int, count: int) -> list[int]:
    """Evenly spaced batch indices; the last one is always the final batch."""
    if total_batches < 1:
        return []
    count = min(count, total_batches)
    return [((j + 1) * total_batches + count - 1) // count - 1 for j in range(count)]


def total_batches(cfg: TrainerConfig, n_samples: int) -> int:
    """Mini-batches in a run over ``n_samples`` columns (first Q initialize)."""
    if cfg.n_batches is not None:
        return cfg.n_batches
    positions = (n_samples - cfg.q) + (cfg.epochs - 1) * n_samples
    return max(1, math.ceil(positions / cfg.batch_size))


class BatchStream:
    """Cyclic mini-batch source over the columns of X.

    The first pass starts right after the initialization columns; later
    passes replay every column in order.
    """

    def __init__(self, X: FloatArray, batch_size: int, start: int = 0) -> None:
        self.X = as_columns(X, "stream")
        if self.X.shape[1] == 0:
            raise ValidationError("sample stream is empty")
        self.batch_size = batch_size
        self.start = start

    @property
    def n_samples(self) -> int:
        return int(self.X.shape[1])

    def indices(self, batch_index: int) -> np.ndarray:
        offset = self.start + batch_index * self.batch_size
        return (offset + np.arange(self.batch_size)) % self.n_samples

    def batch(self, batch_index: int) -> FloatArray:
        return self.X[:, self.indices(batch_index)]

    def __iter__(self) -> Iterator[FloatArray]:
        b = 0
        while True:
            yield self.batch(b)
            b += 1


# ── Trainer ─────────────────────────────────────────────────────────


class OnlineTrainer:
    """Runs the per-batch update sequence on a single profile."""

    def __init__(self, cfg: TrainerConfig, kernel: Kernel) -> None:
        self.cfg = cfg
        self.kernel = kernel
        self.profile: Profile | None = None
        self.stats = TrainStats()

    def initialize(self, X0: FloatArray) -> Profile:
        X0 = as_columns(X0, "initial samples")
        if X0.shape[1] < self.cfg.q:
            raise ValidationError(
                f"stream ended after {X0.shape[1]} samples; need Q={self.cfg.q} "
                "to initialize",
                details={"available": str(X0.shape[1]), "q": str(self.cfg.q)},
            )
        self.profile = Profile.init(X0, self.kernel, self.cfg.gamma, q=self.cfg.q)
        return self.profile

    def _require_profile(self) -> Profile:
        if self.profile is None:
            raise ValidationError("trainer used before initialize()")
        return self.profile

    def step(self, batch: FloatArray, batch_index: int, n_batches: int) -> None:
        """Process one mini-batch (columns of ``batch``)."""
        profile = self._require_profile()
        cfg = self.cfg
        batch = as_columns(batch, "batch")
        self.stats.batches += 1
        lam = forgetting_factor(cfg, batch_index, n_batches)

        if profile.size > cfg.l_max:
            # an earlier prune was skipped; shrink before taking more samples
            self._timed_prune(profile, protect_newest=0)

        t0 = time.perf_counter()
        keep = coherence(profile, batch) < cfg.delta
        self.stats.skipped_uninformative += int((~keep).sum())
        if not keep.any():
            logger.debug("batch %d: no informative samples", batch_index)
            return
        xs = batch[:, keep]
        m = xs.shape[1]
        if profile.size + m > cfg.l_max + cfg.batch_size:
            self.stats.dropped_batches += 1
            logger.warning(
                "batch %d dropped: profile at %d samples cannot take %d more",
                batch_index, profile.size, m,
            )
            return

        codes = kormp.sparse_code(profile, xs, cfg.sparsity)
        w = kormp.codes_to_matrix(codes, profile.n_atoms)
        try:
            profile.grow(xs, w, lam)
        except UpdateRejectedError as e:
            self.stats.rejected_grows += 1
            logger.warning("batch %d discarded: %s", batch_index, e.message)
            return
        self.stats.grown += m
        self.stats.timings.grow_ms += (time.perf_counter() - t0) * 1e3
        self.stats.timings.grows += 1
        if cfg.validate_updates:
            profile.validate()

        if profile.size > cfg.l_max:
            self._timed_prune(profile, protect_newest=m)

    def _timed_prune(self, profile: Profile, protect_newest: int) -> None:
        t1 = time.perf_counter()
        self._prune(profile, protect_newest)
        self.stats.timings.prune_ms += (time.perf_counter() - t1) * 1e3
        self.stats.timings.prunes += 1

    def _prune(self, profile: Profile, protect_newest: int) -> None:
        cfg = self.cfg
        target = max(cfg.l_max - cfg.batch_size, cfg.q)
        count = profile.size - target
        candidates = select_prune_candidates(profile, count, protect_newest)
        if len(candidates) < count:
            self.stats.skipped_prunes += 1
            logger.warning(
                "prune skipped: only %d of %d samples can be removed safely",
                len(candidates), count,
            )
            return
        try:
            profile.prune(candidates)
        except PruneRejectedError as e:
            self.stats.skipped_prunes += 1
            logger.warning("prune skipped: %s", e.message)
            return
        self.stats.pruned += count

        if cfg.refresh_gram:
            profile.refresh_gram()
        if profile.needs_normalization(cfg.normalize_tol):
            try:
                profile.normalize()
                self.stats.normalizations += 1
            except DegenerateAtomError as e:
                logger.warning("normalization skipped: %s", e.message)
        if cfg.validate_updates:
            profile.validate()

    def fit(
        self,
        X: FloatArray,
        callbacks: Sequence[CheckpointCallback] = (),
        n_batches: int | None = None,
    ) -> Profile:
        """Initialize from the first Q columns of X, then stream the rest."""
        X = as_columns(X, "stream")
        self.initialize(X[:, : self.cfg.q])
        stream = BatchStream(X, self.cfg.batch_size, start=self.cfg.q)
        total = n_batches or total_batches(self.cfg, stream.n_samples)
        marks = set(checkpoint_indices(total, self.cfg.checkpoint_count))
        for b in range(total):
            self.step(stream.batch(b), b, total)
            if b in marks:
                _notify(callbacks, b, self._require_profile(), self.stats.timings)
        logger.info(
            "training done: %d batches, %d grown, %d pruned, %d normalizations",
            self.stats.batches, self.stats.grown, self.stats.pruned,
            self.stats.normalizations,
        )
        return self._require_profile()


def _notify(
    callbacks: Sequence[CheckpointCallback],
    batch_index: int,
    profile: Profile,
    timings: PhaseTimings,
) -> None:
    snapshot = PhaseTimings(timings.grow_ms, timings.prune_ms, timings.grows, timings.prunes)
    for cb in callbacks:
        cb(batch_index, profile, snapshot)


def train_online(
    X: FloatArray,
    cfg: TrainerConfig,
    kernel: Kernel,
    callbacks: Sequence[CheckpointCallback] = (),
) -> Profile:
    """Train one profile on the columns of X (see ``OnlineTrainer.fit``)."""
    return OnlineTrainer(cfg, kernel).fit(X, callbacks)
