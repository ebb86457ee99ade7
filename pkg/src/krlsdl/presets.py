"""Load and access benchmark presets from the bundled YAML file."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Any

import yaml

from krlsdl.exceptions import ConfigurationError


def _default_presets_path() -> Path:
    """Return the default presets.yaml path (bundled with the package)."""
    return Path(__file__).resolve().parent / "data" / "presets.yaml"


@lru_cache(maxsize=1)
def load_presets(path: str | None = None) -> dict[str, Any]:
    """Load and cache all presets from the YAML file."""
    target = Path(path) if path else _default_presets_path()
    with open(target, "r") as f:
        return yaml.safe_load(f)


def clear_cache() -> None:
    """Clear the preset cache (useful for testing)."""
    load_presets.cache_clear()


def list_dataset_presets(presets: dict | None = None) -> list[str]:
    p = presets or load_presets()
    return sorted(p["datasets"])


def get_dataset_preset(name: str, presets: dict | None = None) -> dict[str, Any]:
    p = presets or load_presets()
    try:
        return dict(p["datasets"][name])
    except KeyError as e:
        raise ConfigurationError(
            f"Unknown dataset preset '{name}'. "
            f"Available: {', '.join(list_dataset_presets(p))}",
            details={"preset": name},
        ) from e


def get_bench_preset(presets: dict | None = None) -> dict[str, Any]:
    p = presets or load_presets()
    return dict(p["bench"])
