"""Metrics files, JSON documents and the run-artifact lifecycle.

Every CSV starts with the schema line ``# krls-metrics v1``. Floats are
written with ``repr`` so files are exact and reproducible; timing columns
stay empty unless timings were requested, which keeps seeded runs
byte-identical.
"""

from __future__ import annotations

import csv
import logging
import shutil
from pathlib import Path
from types import TracebackType
from typing import Iterable, Sequence

from pydantic import BaseModel

from krlsdl.models import Checkpoint, CorruptionPoint, CrossValidationReport, ScalingPoint
from krlsdl.oracle import KmodResult

logger = logging.getLogger(__name__)

METRICS_HEADER = "# krls-metrics v1"

CURVE_COLUMNS = ["fold", "batch_index", "accuracy", "grow_ms", "prune_ms"]
CORRUPTION_COLUMNS = ["fraction", "fold", "accuracy"]
KMOD_ACCURACY_COLUMNS = ["fold", "accuracy"]
KMOD_TRACE_COLUMNS = ["fold", "class", "iteration", "coding_error", "update_error"]
SCALING_COLUMNS = ["L", "grow_ms_median", "prune_ms_median", "repeats"]


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    with open(path, "w", newline="") as f:
        f.write(METRICS_HEADER + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    return path


def _curve_rows(
    fold: str, checkpoints: Sequence[Checkpoint], timings: bool
) -> list[list[str]]:
    return [
        [
            fold,
            str(c.batch_index),
            _fmt(c.accuracy),
            _fmt(c.grow_ms) if timings else "",
            _fmt(c.prune_ms) if timings else "",
        ]
        for c in checkpoints
    ]


def write_curve_csv(
    path: Path, report: CrossValidationReport, timings: bool = False
) -> Path:
    """One row per (fold, checkpoint), then one ``mean`` row per checkpoint."""
    rows: list[list[str]] = []
    for f in report.folds:
        rows.extend(_curve_rows(str(f.fold), f.checkpoints, timings))
    rows.extend(_curve_rows("mean", report.mean, timings))
    return _write_rows(path, CURVE_COLUMNS, rows)


def write_corruption_csv(path: Path, points: Sequence[CorruptionPoint]) -> Path:
    rows = [
        [_fmt(p.fraction), "mean" if p.fold is None else str(p.fold), _fmt(p.accuracy)]
        for p in points
    ]
    return _write_rows(path, CORRUPTION_COLUMNS, rows)


def write_kmod_accuracy_csv(path: Path, accuracies: Sequence[float]) -> Path:
    rows = [[str(i), _fmt(a)] for i, a in enumerate(accuracies)]
    if accuracies:
        rows.append(["mean", _fmt(sum(accuracies) / len(accuracies))])
    return _write_rows(path, KMOD_ACCURACY_COLUMNS, rows)


def write_kmod_trace_csv(path: Path, traces: Sequence[dict[int, KmodResult]]) -> Path:
    rows: list[list[str]] = []
    for fold, per_class in enumerate(traces):
        for label in sorted(per_class):
            res = per_class[label]
            for it, (ce, ue) in enumerate(zip(res.coding_errors, res.update_errors)):
                rows.append([str(fold), str(label), str(it), _fmt(ce), _fmt(ue)])
    return _write_rows(path, KMOD_TRACE_COLUMNS, rows)


def write_scaling_csv(path: Path, points: Sequence[ScalingPoint]) -> Path:
    rows = [
        [str(p.L), _fmt(p.grow_ms_median), _fmt(p.prune_ms_median), str(p.repeats)]
        for p in points
    ]
    return _write_rows(path, SCALING_COLUMNS, rows)


def write_json(path: Path, document: BaseModel) -> Path:
    path.write_text(document.model_dump_json(indent=2) + "\n")
    return path


def read_metrics_rows(path: Path) -> list[dict[str, str]]:
    """Parse a metrics CSV back into dict rows (schema line checked)."""
    with open(path, "r", newline="") as f:
        first = f.readline().rstrip("\n")
        if first != METRICS_HEADER:
            raise ValueError(f"{path} is not a krls-metrics v1 file")
        return list(csv.DictReader(f))


class ArtifactWriter:
    """Tracks files written for one run and removes them if the run fails.

    Use as a context manager around a command body. Paths handed out by
    ``path()`` are recorded; on an exception they are deleted, along with
    the output directory when this writer created it.
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self._created_dir = False
        self.artifacts: list[Path] = []

    def __enter__(self) -> ArtifactWriter:
        if not self.out_dir.exists():
            self.out_dir.mkdir(parents=True)
            self._created_dir = True
        return self

    def path(self, name: str) -> Path:
        target = self.out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(target)
        return target

    def relative(self) -> list[str]:
        return [str(p.relative_to(self.out_dir)) for p in self.artifacts]

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if exc_type is None:
            return
        for target in self.artifacts:
            target.unlink(missing_ok=True)
        if self._created_dir:
            shutil.rmtree(self.out_dir, ignore_errors=True)
        logger.debug("removed partial artifacts in %s", self.out_dir)
