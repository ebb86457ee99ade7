"""Shared test fixtures for the krlsdl test suite."""

from __future__ import annotations

import numpy as np
import pytest

from krlsdl.config import TrainerConfig, reload_settings
from krlsdl.dataset import load_preset
from krlsdl.kernels import Kernel
from krlsdl.presets import clear_cache
from krlsdl.profile import Profile


def grow_random(
    profile: Profile,
    rng: np.random.Generator,
    steps: int,
    m: int = 1,
    lam: float = 1.0,
) -> Profile:
    """Grow ``steps`` batches of M random samples with dense random codes.

    Dense codes keep every row of W populated, so any older sample can
    later be pruned.
    """
    for _ in range(steps):
        x = 0.5 * rng.standard_normal((profile.n_features, m))
        w = rng.standard_normal((profile.n_atoms, m))
        profile.grow(x, w, lam)
    return profile


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def poly_kernel():
    return Kernel.polynomial(2, 1.0)


@pytest.fixture
def linear_kernel():
    return Kernel.linear()


@pytest.fixture
def rbf_kernel():
    return Kernel.rbf(0.5)


@pytest.fixture
def grow(rng):
    """Grow a profile in place with random samples and dense codes."""

    def _grow(profile: Profile, steps: int, m: int = 1, lam: float = 1.0) -> Profile:
        return grow_random(profile, rng, steps, m=m, lam=lam)

    return _grow


@pytest.fixture
def make_profile(rng):
    """Factory for a random profile: Q initial samples plus grown batches."""

    def _make(
        kernel: Kernel,
        n: int = 4,
        q: int = 3,
        steps: int = 4,
        m: int = 1,
        lam: float = 1.0,
        gamma: float = 0.1,
    ) -> Profile:
        X0 = 0.5 * rng.standard_normal((n, q))
        profile = Profile.init(X0, kernel, gamma)
        return grow_random(profile, rng, steps, m=m, lam=lam)

    return _make


@pytest.fixture
def small_dataset():
    """Two planted classes, N=8, 60 samples each."""
    return load_preset("planted-small")


@pytest.fixture
def small_cfg():
    return TrainerConfig(
        q=6,
        l_max=18,
        batch_size=3,
        sparsity=4,
        gamma=0.1,
        checkpoint_count=4,
        seed=3,
    )


@pytest.fixture(autouse=True)
def _clear_caches(monkeypatch, tmp_path):
    """Isolate every test from cached presets and environment settings."""
    monkeypatch.delenv("KRLSDL_LOG_LEVEL", raising=False)
    monkeypatch.delenv("KRLSDL_OUTPUT_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    clear_cache()
    reload_settings()
    yield
    clear_cache()
