"""Tests for the bundled benchmark presets."""

import pytest

from krlsdl.exceptions import ConfigurationError
from krlsdl.presets import (
    clear_cache,
    get_bench_preset,
    get_dataset_preset,
    list_dataset_presets,
    load_presets,
)


class TestPresets:
    def test_lists_bundled_datasets(self):
        assert list_dataset_presets() == ["planted-3class", "planted-small"]

    def test_default_benchmark_shape(self):
        spec = get_dataset_preset("planted-3class")
        assert spec["n_classes"] == 3
        assert spec["samples_per_class"] == 600

    def test_returns_copy(self):
        get_dataset_preset("planted-small")["seed"] = -1
        assert get_dataset_preset("planted-small")["seed"] == 11

    def test_unknown(self):
        with pytest.raises(ConfigurationError, match="Available: planted-3class"):
            get_dataset_preset("mnist")

    def test_bench(self):
        assert get_bench_preset()["n_features"] == 20

    def test_custom_mapping(self):
        presets = {"datasets": {"tiny": {"n_features": 2}}, "bench": {}}
        assert list_dataset_presets(presets) == ["tiny"]
        assert get_dataset_preset("tiny", presets) == {"n_features": 2}

    def test_cache(self):
        assert load_presets() is load_presets()
        first = load_presets()
        clear_cache()
        assert load_presets() is not first
