"""Wall-time scaling of single-sample grow and prune against profile size."""

from __future__ import annotations

import logging
import time
from typing import Callable

import numpy as np

from krlsdl import kormp
from krlsdl.exceptions import ValidationError
from krlsdl.kernels import Kernel
from krlsdl.models import ScalingPoint
from krlsdl.profile import Profile
from krlsdl.trainer import select_prune_candidates
from krlsdl.types import FloatArray

logger = logging.getLogger(__name__)


def build_profile(
    size: int,
    n_features: int,
    q: int,
    sparsity: int,
    gamma: float,
    kernel: Kernel,
    rng: np.random.Generator,
) -> Profile:
    """A profile of ``size`` random samples grown one at a time with KORMP codes."""
    if size < q:
        raise ValidationError(f"profile size {size} is below Q={q}")
    X = rng.standard_normal((n_features, size))
    profile = Profile.init(X[:, :q], kernel, gamma)
    for j in range(q, size):
        x = X[:, j : j + 1]
        w = kormp.codes_to_matrix(kormp.sparse_code(profile, x, sparsity), q)
        profile.grow(x, w, 1.0)
    return profile


def _median_ms(samples: list[float]) -> float:
    return float(np.median(samples)) * 1e3


def bench_scaling(
    sizes: list[int],
    repeats: int,
    n_features: int,
    q: int,
    sparsity: int,
    gamma: float,
    kernel: Kernel,
    seed: int = 0,
    progress: Callable[[ScalingPoint], None] | None = None,
) -> list[ScalingPoint]:
    """Median time of one M=1 grow and one M=1 prune at each profile size.

    Coding and candidate selection happen outside the timed region; each
    repeat works on a fresh copy of the same profile.
    """
    rng = np.random.default_rng(seed)
    points: list[ScalingPoint] = []
    for size in sizes:
        base = build_profile(size, n_features, q, sparsity, gamma, kernel, rng)
        grow_times: list[float] = []
        prune_times: list[float] = []
        for _ in range(repeats):
            x: FloatArray = rng.standard_normal((n_features, 1))
            w = kormp.codes_to_matrix(kormp.sparse_code(base, x, sparsity), q)
            profile = base.copy()
            t0 = time.perf_counter()
            profile.grow(x, w, 1.0)
            grow_times.append(time.perf_counter() - t0)

            candidates = select_prune_candidates(profile, 1, protect_newest=1)
            if not candidates:
                logger.warning("no prunable sample at L=%d", profile.size)
                continue
            t0 = time.perf_counter()
            profile.prune(candidates)
            prune_times.append(time.perf_counter() - t0)

        point = ScalingPoint(
            L=size,
            grow_ms_median=_median_ms(grow_times),
            prune_ms_median=_median_ms(prune_times) if prune_times else float("nan"),
            repeats=repeats,
        )
        logger.info(
            "L=%d: grow %.3f ms, prune %.3f ms", size, point.grow_ms_median, point.prune_ms_median
        )
        points.append(point)
        if progress is not None:
            progress(point)
    return points


def growth_ratio(points: list[ScalingPoint], small: int, large: int) -> float:
    """grow time at ``large`` divided by grow time at ``small``."""
    by_size = {p.L: p for p in points}
    if small not in by_size or large not in by_size:
        raise ValidationError(f"need timings at L={small} and L={large}")
    return by_size[large].grow_ms_median / by_size[small].grow_ms_median
