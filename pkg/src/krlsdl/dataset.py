"""Labeled sample sets: CSV ingestion, CSV export and synthetic generation.

Samples are stored column-wise (N x L_tot). Labels are always the
contiguous integers 0..C-1; ``label_names`` maps them back to the values
found in the source file.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from krlsdl.exceptions import ParseError, ValidationError
from krlsdl.presets import get_dataset_preset
from krlsdl.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


@dataclass
class Dataset:
    """Feature matrix (one sample per column) plus integer labels."""

    samples: FloatArray
    labels: IntArray
    label_names: list[str]
    feature_names: list[str] | None = None
    source: str = field(default="memory")

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValidationError("dataset samples must be a matrix")
        if self.labels.shape != (self.samples.shape[1],):
            raise ValidationError(
                f"{self.labels.shape[0]} labels for {self.samples.shape[1]} samples"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("dataset contains non-finite values")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.label_names)
        ):
            raise ValidationError("labels must index into label_names")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValidationError(
                f"{len(self.feature_names)} feature names for {self.n_features} features"
            )

    @property
    def n_features(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def label_mapping(self) -> dict[str, str]:
        """Integer label (as text) to original label value."""
        return {str(i): name for i, name in enumerate(self.label_names)}

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def _sort_key(values: list[str]) -> list[str]:
    try:
        return sorted(values, key=lambda v: int(v))
    except ValueError:
        return sorted(values)


def ingest_csv(path: str | Path) -> Dataset:
    """Read a CSV with a header, one ``label`` column and numeric features.

    Rows are samples. Errors name the 1-based data row (the header is not
    counted) and the offending column.
    """
    path = Path(path)
    try:
        handle = open(path, "r", newline="")
    except OSError as e:
        raise ParseError(f"Cannot read dataset '{path}': {e.strerror}") from e

    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"Dataset '{path}' is empty")
        header = [h.strip() for h in header]
        if LABEL_COLUMN not in header:
            raise ParseError(
                f"Dataset '{path}' has no '{LABEL_COLUMN}' column",
                details={"columns": ",".join(header)},
            )
        label_at = header.index(LABEL_COLUMN)
        feature_names = [h for i, h in enumerate(header) if i != label_at]
        if not feature_names:
            raise ParseError(f"Dataset '{path}' has no feature columns")

        raw_labels: list[str] = []
        rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_no}: expected {len(header)} fields, found {len(row)}",
                    details={"row": str(row_no)},
                )
            values: list[float] = []
            for i, cell in enumerate(row):
                if i == label_at:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {row_no}: column '{header[i]}' is not numeric ({cell!r})",
                        details={"row": str(row_no), "column": header[i]},
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(
                        f"row {row_no}: column '{header[i]}' is not finite ({cell!r})",
                        details={"row": str(row_no), "column": header[i]},
                    )
                values.append(value)
            label = row[label_at].strip()
            if not label:
                raise ParseError(
                    f"row {row_no}: empty label", details={"row": str(row_no)}
                )
            raw_labels.append(label)
            rows.append(values)

    if not rows:
        raise ParseError(f"Dataset '{path}' has no data rows")

    names = _sort_key(sorted(set(raw_labels)))
    index = {name: i for i, name in enumerate(names)}
    dataset = Dataset(
        samples=np.asarray(rows, dtype=np.float64).T,
        labels=np.asarray([index[v] for v in raw_labels], dtype=np.int64),
        label_names=names,
        feature_names=feature_names,
        source=str(path),
    )
    logger.info(
        "Loaded %s: N=%d, %d samples, %d classes",
        path, dataset.n_features, dataset.n_samples, dataset.n_classes,
    )
    return dataset


def write_csv(dataset: Dataset, path: str | Path) -> Path:
    """Write a dataset so that ``ingest_csv`` reads it back unchanged."""
    path = Path(path)
    names = dataset.feature_names or [f"x{i}" for i in range(dataset.n_features)]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([LABEL_COLUMN, *names])
        for j in range(dataset.n_samples):
            writer.writerow(
                [dataset.label_names[dataset.labels[j]],
                 *(repr(float(v)) for v in dataset.samples[:, j])]
            )
    return path


def make_planted_dataset(
    n_features: int,
    n_classes: int,
    atoms_per_class: int,
    samples_per_class: int,
    active_atoms: int,
    noise: float,
    seed: int,
) -> Dataset:
    """Samples drawn as sparse combinations of per-class planted atoms.

    Each class gets ``atoms_per_class`` random unit vectors; each sample
    combines ``active_atoms`` of them with N(0, 1) weights and adds
    N(0, noise²) entries. Classes are interleaved in sample order.
    """
    if active_atoms > atoms_per_class:
        raise ValidationError("active_atoms cannot exceed atoms_per_class")
    rng = np.random.default_rng(seed)
    blocks: list[FloatArray] = []
    for _ in range(n_classes):
        atoms = rng.standard_normal((n_features, atoms_per_class))
        atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
        codes = np.zeros((atoms_per_class, samples_per_class))
        for j in range(samples_per_class):
            support = rng.choice(atoms_per_class, size=active_atoms, replace=False)
            codes[support, j] = rng.standard_normal(active_atoms)
        block = atoms @ codes + noise * rng.standard_normal((n_features, samples_per_class))
        blocks.append(block)

    order = np.arange(n_classes * samples_per_class)
    labels = order % n_classes
    samples = np.empty((n_features, order.size))
    for c in range(n_classes):
        samples[:, labels == c] = blocks[c]
    return Dataset(
        samples=samples,
        labels=labels,
        label_names=[str(c) for c in range(n_classes)],
        feature_names=[f"x{i}" for i in range(n_features)],
        source="synthetic",
    )


def load_preset(name: str) -> Dataset:
    """Generate one of the bundled synthetic datasets."""
    spec = get_dataset_preset(name)
    dataset = make_planted_dataset(**spec)
    dataset.source = f"preset:{name}"
    return dataset
