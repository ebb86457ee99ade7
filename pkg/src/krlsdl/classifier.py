"""Minimum-representation-error classification with one dictionary per class.

Class profiles are trained by independent online trainers stepped in
lock-step, so every class sees batch b before any class sees batch b+1
and checkpoints evaluate all dictionaries at the same point in training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.model_selection import StratifiedKFold

from krlsdl.config import TrainerConfig
from krlsdl.exceptions import KrlsError, NumericalError, ValidationError
from krlsdl.kernels import Kernel, as_columns
from krlsdl.models import Checkpoint, CorruptionPoint, CrossValidationReport, EvalReport
from krlsdl.oracle import KmodResult, batch_kmod
from krlsdl.profile import Profile
from krlsdl.trainer import BatchStream, OnlineTrainer, checkpoint_indices, total_batches
from krlsdl.types import FloatArray, IntArray, PhaseTimings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierModel:
    """One trained profile per class, in ascending label order."""

    classes: tuple[tuple[int, Profile], ...]
    kernel: Kernel
    cfg: TrainerConfig

    @property
    def labels(self) -> list[int]:
        return [label for label, _ in self.classes]

    @property
    def profiles(self) -> list[Profile]:
        return [p for _, p in self.classes]


ModelCallback = Callable[[int, ClassifierModel, PhaseTimings], None]


def _split_by_class(X: FloatArray, y: IntArray, q: int) -> dict[int, FloatArray]:
    X = as_columns(X, "samples")
    y = np.asarray(y)
    if y.shape != (X.shape[1],):
        raise ValidationError(
            f"got {y.shape[0] if y.ndim else 0} labels for {X.shape[1]} samples"
        )
    groups: dict[int, FloatArray] = {}
    for label in np.unique(y):
        cols = X[:, y == label]
        if cols.shape[1] < q:
            raise ValidationError(
                f"class {int(label)} has {cols.shape[1]} samples, fewer than Q={q}",
                details={"class": str(int(label))},
            )
        groups[int(label)] = cols
    if not groups:
        raise ValidationError("no training samples")
    return groups


def planned_batches(X: FloatArray, y: IntArray, cfg: TrainerConfig) -> int:
    """Lock-step batch count: enough for the largest class to finish its epochs."""
    counts = np.unique(np.asarray(y), return_counts=True)[1]
    return max(total_batches(cfg, int(n)) for n in counts)


def fit(
    X: FloatArray,
    y: IntArray,
    cfg: TrainerConfig,
    kernel: Kernel,
    callback: ModelCallback | None = None,
    n_batches: int | None = None,
) -> ClassifierModel:
    """Train one profile per class on that class's samples only."""
    groups = _split_by_class(X, y, cfg.q)
    trainers = {label: OnlineTrainer(cfg, kernel) for label in groups}
    streams = {}
    for label, cols in groups.items():
        trainers[label].initialize(cols[:, : cfg.q])
        streams[label] = BatchStream(cols, cfg.batch_size, start=cfg.q)

    model = ClassifierModel(
        classes=tuple((label, trainers[label].profile) for label in sorted(groups)),
        kernel=kernel,
        cfg=cfg,
    )
    total = n_batches or planned_batches(X, y, cfg)
    marks = set(checkpoint_indices(total, cfg.checkpoint_count))
    for b in range(total):
        for label in sorted(groups):
            trainers[label].step(streams[label].batch(b), b, total)
        if callback is not None and b in marks:
            timings = PhaseTimings()
            for t in trainers.values():
                timings.add(t.stats.timings)
            callback(b, model, timings)

    for label in sorted(groups):
        s = trainers[label].stats
        logger.info(
            "class %d: L=%d grown=%d pruned=%d dropped=%d",
            label, trainers[label].profile.size, s.grown, s.pruned, s.dropped_batches,
        )
    return model


def fit_batch_kmod(
    X: FloatArray,
    y: IntArray,
    cfg: TrainerConfig,
    kernel: Kernel,
    iters: int,
    seed: int | list[int] = 0,
) -> tuple[ClassifierModel, dict[int, KmodResult]]:
    """Per-class batch KMOD dictionaries wrapped as a classifier."""
    groups = _split_by_class(X, y, cfg.q)
    results: dict[int, KmodResult] = {}
    base = [seed] if isinstance(seed, int) else list(seed)
    for label in sorted(groups):
        rng = np.random.default_rng(base + [label])
        results[label] = batch_kmod(
            groups[label], kernel, cfg.q, cfg.sparsity, cfg.gamma, iters, rng
        )
    model = ClassifierModel(
        classes=tuple((label, results[label].to_profile()) for label in sorted(groups)),
        kernel=kernel,
        cfg=cfg,
    )
    return model, results


# ── Prediction ──────────────────────────────────────────────────────


def errors(model: ClassifierModel, X: FloatArray, s: int | None = None) -> FloatArray:
    """Representation error of every sample under every class (classes x samples).

    A class whose coding fails gets +inf for the whole block.
    """
    if not model.classes:
        raise ValidationError("classifier model has no classes")
    s = model.cfg.sparsity if s is None else s
    X = as_columns(X, "samples")
    out = np.empty((len(model.classes), X.shape[1]))
    for i, (label, profile) in enumerate(model.classes):
        try:
            out[i] = profile.representation_errors(X, s)
        except (NumericalError, ValidationError) as e:
            logger.warning("class %d could not code the samples: %s", label, e.message)
            out[i] = np.inf
    return out


def predict_many(model: ClassifierModel, X: FloatArray, s: int | None = None) -> IntArray:
    """Label with the minimum representation error per column (first class on ties)."""
    E = errors(model, X, s)
    failed = ~np.isfinite(E).any(axis=0)
    if failed.any():
        raise NumericalError(
            f"no class could represent {int(failed.sum())} sample(s)"
        )
    labels = np.asarray(model.labels)
    return labels[np.argmin(E, axis=0)]


def predict(model: ClassifierModel, x: FloatArray, s: int | None = None) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("predict takes a single sample vector")
    return int(predict_many(model, x[:, None], s)[0])


def accuracy(model: ClassifierModel, X: FloatArray, y: IntArray, s: int | None = None) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    return float(np.mean(predict_many(model, X, s) == y))


def class_error_matrix(model: ClassifierModel, X: FloatArray, y: IntArray) -> list[list[float]]:
    """Mean representation error per (true class, dictionary)."""
    E = errors(model, X)
    y = np.asarray(y)
    return [
        [float(np.mean(E[j, y == label])) if np.any(y == label) else float("nan")
         for j in range(len(model.classes))]
        for label in model.labels
    ]


# ── Missing-data corruption ─────────────────────────────────────────


def corrupt_missing(x: FloatArray, fraction: float, rng: np.random.Generator) -> FloatArray:
    """Zero exactly round(fraction·N) uniformly chosen entries of a copy of x."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"fraction must lie in [0, 1], got {fraction}")
    out = np.array(x, dtype=np.float64, copy=True)
    n = out.shape[0]
    count = int(round(fraction * n))
    if count:
        out[rng.choice(n, size=count, replace=False)] = 0.0
    return out


def _corrupt_columns(X: FloatArray, fraction: float, rng: np.random.Generator) -> FloatArray:
    return np.column_stack([corrupt_missing(X[:, j], fraction, rng) for j in range(X.shape[1])])


# ── Cross-validation ────────────────────────────────────────────────


def _folds(y: IntArray, k: int, seed: int) -> list[tuple[IntArray, IntArray]]:
    if k < 2:
        raise ValidationError(f"need at least 2 folds, got {k}")
    y = np.asarray(y)
    labels, counts = np.unique(y, return_counts=True)
    small = labels[counts < k]
    if small.size:
        raise ValidationError(
            f"class {int(small[0])} has fewer samples than the {k} folds",
            details={"class": str(int(small[0]))},
        )
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed % 2**32)
    return list(splitter.split(np.zeros(y.shape[0]), y))


def _fold_plan(
    X: FloatArray, y: IntArray, k: int, cfg: TrainerConfig
) -> tuple[list[tuple[IntArray, IntArray]], int]:
    """Splits plus a batch count shared by every fold so curves line up."""
    splits = _folds(y, k, cfg.seed)
    y = np.asarray(y)
    n_batches = cfg.n_batches or min(planned_batches(X, y[tr], cfg) for tr, _ in splits)
    return splits, n_batches


def _mean_curve(folds: list[EvalReport]) -> list[Checkpoint]:
    mean: list[Checkpoint] = []
    for points in zip(*(f.checkpoints for f in folds)):
        grow = [p.grow_ms for p in points]
        prune = [p.prune_ms for p in points]
        mean.append(
            Checkpoint(
                batch_index=points[0].batch_index,
                accuracy=float(np.mean([p.accuracy for p in points])),
                grow_ms=float(np.mean(grow)) if None not in grow else None,
                prune_ms=float(np.mean(prune)) if None not in prune else None,
            )
        )
    return mean


def evaluate_run(
    X_train: FloatArray,
    y_train: IntArray,
    X_test: FloatArray,
    y_test: IntArray,
    cfg: TrainerConfig,
    kernel: Kernel,
    fold: int = 0,
    n_batches: int | None = None,
) -> tuple[ClassifierModel, EvalReport]:
    """Train on one split, scoring the held-out set at every checkpoint.

    Checkpoint timings are mean milliseconds per dictionary per mini-batch;
    ``report.timings`` adds the totals and update counts at the last one.
    """
    report = EvalReport(fold=fold)

    def on_checkpoint(b: int, model: ClassifierModel, timings: PhaseTimings) -> None:
        acc = accuracy(model, X_test, y_test)
        report.timings = timings.summary()
        report.checkpoints.append(
            Checkpoint(
                batch_index=b,
                accuracy=acc,
                grow_ms=timings.mean_grow_ms,
                prune_ms=timings.mean_prune_ms,
            )
        )
        logger.debug("fold %d batch %d: accuracy %.4f", fold, b, acc)

    model = fit(X_train, y_train, cfg, kernel, on_checkpoint, n_batches=n_batches)
    report.per_class_errors = class_error_matrix(model, X_test, y_test)
    return model, report


def cross_validate(
    X: FloatArray,
    y: IntArray,
    k: int,
    cfg: TrainerConfig,
    kernel: Kernel,
    on_fold: Callable[[EvalReport], None] | None = None,
) -> CrossValidationReport:
    """Stratified k-fold accuracy-vs-batch curves, per fold and averaged."""
    X = as_columns(X, "samples")
    splits, n_batches = _fold_plan(X, y, k, cfg)
    y = np.asarray(y)
    reports: list[EvalReport] = []
    for fold, (tr, te) in enumerate(splits):
        _, report = evaluate_run(
            X[:, tr], y[tr], X[:, te], y[te], cfg, kernel, fold=fold, n_batches=n_batches
        )
        reports.append(report)
        if on_fold is not None:
            on_fold(report)
    return CrossValidationReport(folds=reports, mean=_mean_curve(reports))


def corrupt_eval(
    X: FloatArray,
    y: IntArray,
    k: int,
    cfg: TrainerConfig,
    kernel: Kernel,
    fractions: list[float],
) -> list[CorruptionPoint]:
    """Accuracy of the final dictionaries on test samples with entries zeroed.

    Uses the same folds and batch count as ``cross_validate``, so the
    fraction-0 rows equal its final accuracies. Rows come per fold, then
    one mean row per fraction (fold None).
    """
    X = as_columns(X, "samples")
    splits, n_batches = _fold_plan(X, y, k, cfg)
    y = np.asarray(y)
    points: list[CorruptionPoint] = []
    per_fraction: dict[int, list[float]] = {i: [] for i in range(len(fractions))}
    for fold, (tr, te) in enumerate(splits):
        model = fit(X[:, tr], y[tr], cfg, kernel, n_batches=n_batches)
        for i, frac in enumerate(fractions):
            rng = np.random.default_rng([cfg.seed, fold, i])
            acc = accuracy(model, _corrupt_columns(X[:, te], frac, rng), y[te])
            per_fraction[i].append(acc)
            points.append(CorruptionPoint(fraction=frac, fold=fold, accuracy=acc))
        logger.info("corrupt-eval fold %d done", fold)
    for i, frac in enumerate(fractions):
        points.append(
            CorruptionPoint(fraction=frac, fold=None, accuracy=float(np.mean(per_fraction[i])))
        )
    return points


def kmod_cross_validate(
    X: FloatArray,
    y: IntArray,
    k: int,
    cfg: TrainerConfig,
    kernel: Kernel,
    iters: int,
) -> tuple[list[float], list[dict[int, KmodResult]]]:
    """Held-out accuracy of batch KMOD dictionaries on the same folds."""
    X = as_columns(X, "samples")
    splits, _ = _fold_plan(X, y, k, cfg)
    y = np.asarray(y)
    accs: list[float] = []
    traces: list[dict[int, KmodResult]] = []
    for fold, (tr, te) in enumerate(splits):
        try:
            model, results = fit_batch_kmod(
                X[:, tr], y[tr], cfg, kernel, iters, seed=[cfg.seed, fold]
            )
        except KrlsError:
            logger.error("batch KMOD failed on fold %d", fold)
            raise
        accs.append(accuracy(model, X[:, te], y[te]))
        traces.append(results)
    return accs, traces
