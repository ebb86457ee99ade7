"""CLI entry point for krlsdl."""

from __future__ import annotations

import logging
import platform
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np
import scipy
import sklearn
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from krlsdl import __version__
from krlsdl import classifier
from krlsdl.bench import bench_scaling, growth_ratio
from krlsdl.config import RunConfig, get_settings, resolve_run_config
from krlsdl.dataset import Dataset, ingest_csv, load_preset, write_csv
from krlsdl.exceptions import ConfigurationError, KrlsError
from krlsdl.metrics import (
    ArtifactWriter,
    write_corruption_csv,
    write_curve_csv,
    write_json,
    write_kmod_accuracy_csv,
    write_kmod_trace_csv,
    write_scaling_csv,
)
from krlsdl.models import Checkpoint, CrossValidationReport, EvalReport, RunManifest
from krlsdl.presets import get_bench_preset, list_dataset_presets

console = Console()


# ── Custom help formatter ─────────────────────────────────────────────


class KrlsdlHelpFormatter(click.HelpFormatter):
    """Wider formatter so examples don't wrap awkwardly."""

    def __init__(self, **kwargs):
        kwargs.setdefault("max_width", 90)
        super().__init__(**kwargs)


class KrlsdlGroup(click.Group):
    """Command group with a hand-laid-out top-level help page."""

    def format_help(self, ctx: click.Context, formatter: click.HelpFormatter) -> None:
        formatter = KrlsdlHelpFormatter()

        formatter.write("\n")
        formatter.write("  krlsdl — online kernel dictionary learning by recursive least squares\n")
        formatter.write("\n")

        formatter.write("  USAGE\n")
        formatter.write("    krlsdl <command> [options]\n")
        formatter.write("\n")

        formatter.write("  COMMANDS\n")
        formatter.write("    train           Train one dictionary per class, save profiles\n")
        formatter.write("    cv              k-fold accuracy vs. training batch\n")
        formatter.write("    corrupt-eval    Accuracy vs. fraction of zeroed test entries\n")
        formatter.write("    bench-scaling   Grow/prune wall time vs. profile size (M=1)\n")
        formatter.write("    batch-kmod      Batch kernel MOD benchmark accuracy\n")
        formatter.write("    synth           Write a bundled synthetic dataset as CSV\n")
        formatter.write("\n")

        formatter.write("  COMMON OPTIONS\n")
        formatter.write("    --data PATH         Feature CSV with a 'label' column\n")
        formatter.write("                        (default: bundled synthetic preset)\n")
        formatter.write("    --config PATH       JSON config; flags override its keys\n")
        formatter.write("    --out DIR           Output directory\n")
        formatter.write("    --seed N            Random seed\n")
        formatter.write("    --q, --l-max, --batch-size, --gamma, --delta, --sparsity\n")
        formatter.write("    --kernel SPEC       linear | poly:<degree>[:<offset>] | rbf:<gamma>\n")
        formatter.write("    --timings           Write measured timings into metrics CSVs\n")
        formatter.write("    -v, --verbose       Show debug logs\n")
        formatter.write("    --version           Show version\n")
        formatter.write("\n")

        formatter.write("  EXAMPLES\n")
        formatter.write("    krlsdl cv --out runs/cv\n")
        formatter.write("    krlsdl cv --data usps.csv --q 30 --l-max 200 --kernel poly:2:1\n")
        formatter.write("    krlsdl corrupt-eval --config run.json --seed 7\n")
        formatter.write("    krlsdl bench-scaling --out runs/bench\n")
        formatter.write("    krlsdl synth --preset planted-3class --out planted.csv\n")
        formatter.write("\n")

        formatter.write("  CONFIG PRECEDENCE\n")
        formatter.write("    command-line flag  >  --config JSON  >  built-in default\n")
        formatter.write("\n")

        click.echo(formatter.getvalue(), color=ctx.color)


# ── Shared options ───────────────────────────────────────────────────


@dataclass
class RunContext:
    command: str
    cfg: RunConfig
    dataset: Dataset | None
    writer: ArtifactWriter


_OVERRIDE_KEYS = (
    "seed", "q", "l_max", "batch_size", "gamma", "delta", "sparsity", "kernel",
    "epochs", "n_batches", "checkpoint_count", "folds", "kmod_iters", "timings",
    "preset",
)


def run_options(needs_data: bool = True) -> Callable:
    """Attach the options every run command shares."""

    def decorator(f: Callable) -> Callable:
        options = [
            click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                         help="JSON config file."),
            click.option("--out", "out_dir", type=click.Path(file_okay=False),
                         help="Output directory."),
            click.option("--seed", type=click.IntRange(min=0), help="Random seed."),
            click.option("--q", type=int, help="Number of atoms (Q)."),
            click.option("--l-max", "l_max", type=int, help="Profile size cap."),
            click.option("--batch-size", type=int, help="Mini-batch size (M)."),
            click.option("--gamma", type=float, help="Regularization γ."),
            click.option("--delta", type=float, help="Coherence threshold δ."),
            click.option("--sparsity", type=int, help="Non-zeros per code (s)."),
            click.option("--kernel", help="Kernel spec, e.g. poly:2:1."),
            click.option("--epochs", type=int, help="Passes over the data."),
            click.option("--n-batches", "n_batches", type=int, help="Total mini-batches."),
            click.option("--checkpoints", "checkpoint_count", type=int,
                         help="Number of evaluation points."),
            click.option("--timings/--no-timings", default=None,
                         help="Write timings into metrics CSVs."),
            click.option("-v", "--verbose", is_flag=True, help="Enable debug logging."),
        ]
        if needs_data:
            options += [
                click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
                             help="Feature CSV (default: bundled synthetic preset)."),
                click.option("--preset", help="Bundled synthetic dataset name."),
                click.option("--folds", type=int, help="Cross-validation folds (k)."),
                click.option("--kmod-iters", "kmod_iters", type=int,
                             help="Batch KMOD iterations."),
            ]
        for option in reversed(options):
            f = option(f)
        return f

    return decorator


def _collect_overrides(flags: dict[str, Any]) -> dict[str, Any]:
    """Map command-line flags onto RunConfig keys; unset flags stay None."""
    overrides = {k: flags.get(k) for k in _OVERRIDE_KEYS if k in flags}
    if flags.get("sizes"):
        try:
            overrides["bench_sizes"] = [int(s) for s in flags["sizes"].split(",")]
        except ValueError as e:
            raise ConfigurationError(
                f"--sizes must be comma-separated integers, got '{flags['sizes']}'"
            ) from e
    if flags.get("repeats") is not None:
        overrides["bench_repeats"] = flags["repeats"]
    return overrides


def _setup_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else get_settings().log_level
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s: %(message)s")


def _load_dataset(data_path: str | None, cfg: RunConfig) -> Dataset:
    if data_path:
        return ingest_csv(data_path)
    return load_preset(cfg.preset)


def _echo_config(command: str, cfg: RunConfig, dataset: Dataset | None, out: Path) -> None:
    table = Table(title=f"krlsdl {command}", show_header=False, title_justify="left")
    table.add_column("key", style="cyan")
    table.add_column("value")
    if dataset is not None:
        table.add_row("data", f"{dataset.source} (N={dataset.n_features}, "
                      f"{dataset.n_samples} samples, {dataset.n_classes} classes)")
    for key, value in cfg.model_dump().items():
        table.add_row(key, str(value))
    table.add_row("out", str(out))
    console.print(table)


def _versions() -> dict[str, str]:
    return {
        "krlsdl": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def run_command(command: str, needs_data: bool = True) -> Callable:
    """Wrap a command body with config resolution, artifacts and error handling.

    The body receives a RunContext. On a KrlsError the partial outputs are
    removed and the process exits with status 1.
    """

    def decorator(body: Callable[[RunContext], None]) -> Callable:
        @wraps(body)
        def wrapper(
            config_path: str | None,
            out_dir: str | None,
            verbose: bool,
            data_path: str | None = None,
            **flags: Any,
        ) -> None:
            started = datetime.now(timezone.utc)
            t0 = time.perf_counter()
            try:
                _setup_logging(verbose)
                overrides = _collect_overrides(flags)
                cfg = resolve_run_config(config_path, overrides)
                out = Path(out_dir) if out_dir else get_settings().output_dir / command
                dataset = _load_dataset(data_path, cfg) if needs_data else None
                _echo_config(command, cfg, dataset, out)
                with ArtifactWriter(out) as writer:
                    ctx = RunContext(command=command, cfg=cfg, dataset=dataset, writer=writer)
                    body(ctx)
                    manifest_path = writer.path("manifest.json")
                    manifest = RunManifest(
                        command=command,
                        seed=cfg.seed,
                        config=cfg.model_dump(),
                        versions=_versions(),
                        started_at=started.isoformat(),
                        wall_seconds=time.perf_counter() - t0,
                        data=dataset.source if dataset is not None else "",
                        label_mapping=dataset.label_mapping() if dataset is not None else {},
                        artifacts=writer.relative(),
                    )
                    write_json(manifest_path, manifest)
            except KrlsError as e:
                console.print(f"[red]Error:[/red] {escape(e.message)}")
                sys.exit(1)
            except OSError as e:
                console.print(f"[red]Error:[/red] {escape(str(e))}")
                sys.exit(1)
            except KeyboardInterrupt:
                click.echo("\n\nInterrupted. Partial outputs removed.")
                sys.exit(130)
            console.print(f"[green]Done[/green] in {time.perf_counter() - t0:.1f}s → {out}")

        return wrapper

    return decorator


# ── Commands ─────────────────────────────────────────────────────────


@click.group(cls=KrlsdlGroup)
@click.version_option(package_name="krlsdl")
def main() -> None:
    """krlsdl — online kernel dictionary learning by recursive least squares."""


@main.command()
@run_options()
@run_command("train")
def train(ctx: RunContext) -> None:
    """Train one profile per class on all data; save snapshots and a curve."""
    cfg, data = ctx.cfg, ctx.dataset
    kernel = cfg.make_kernel()
    report = EvalReport(fold=0)

    def on_checkpoint(b, model, timings) -> None:
        acc = classifier.accuracy(model, data.samples, data.labels)
        report.checkpoints.append(
            Checkpoint(
                batch_index=b, accuracy=acc,
                grow_ms=timings.mean_grow_ms, prune_ms=timings.mean_prune_ms,
            )
        )

    model = classifier.fit(data.samples, data.labels, cfg.trainer(), kernel, on_checkpoint)
    for label, profile in model.classes:
        profile.save(ctx.writer.path(f"profiles/class_{label}.json"))
    write_curve_csv(
        ctx.writer.path("metrics.csv"),
        CrossValidationReport(folds=[report]),
        timings=cfg.timings,
    )
    console.print(f"Training accuracy: [bold]{report.final_accuracy:.4f}[/bold]")


@main.command()
@run_options()
@run_command("cv")
def cv(ctx: RunContext) -> None:
    """Stratified k-fold accuracy at evenly spaced training checkpoints."""
    cfg, data = ctx.cfg, ctx.dataset

    def on_fold(report: EvalReport) -> None:
        console.print(f"  fold {report.fold}: final accuracy {report.final_accuracy:.4f}")

    report = classifier.cross_validate(
        data.samples, data.labels, cfg.folds, cfg.trainer(), cfg.make_kernel(), on_fold
    )
    write_curve_csv(ctx.writer.path("cv_metrics.csv"), report, timings=cfg.timings)
    write_json(ctx.writer.path("cv_report.json"), report)
    console.print(f"Mean final accuracy: [bold]{report.final_accuracy:.4f}[/bold]")


@main.command("corrupt-eval")
@run_options()
@run_command("corrupt-eval")
def corrupt_eval(ctx: RunContext) -> None:
    """Accuracy of the final dictionaries when test entries are zeroed."""
    cfg, data = ctx.cfg, ctx.dataset
    points = classifier.corrupt_eval(
        data.samples, data.labels, cfg.folds, cfg.trainer(), cfg.make_kernel(),
        cfg.missing_fractions,
    )
    write_corruption_csv(ctx.writer.path("corrupt_metrics.csv"), points)

    table = Table(title="Accuracy vs. missing fraction")
    table.add_column("fraction", justify="right")
    table.add_column("accuracy", justify="right")
    for p in points:
        if p.fold is None:
            table.add_row(f"{p.fraction:.1f}", f"{p.accuracy:.4f}")
    console.print(table)


@main.command("batch-kmod")
@run_options()
@run_command("batch-kmod")
def batch_kmod(ctx: RunContext) -> None:
    """Cross-validated accuracy of per-class batch kernel MOD dictionaries."""
    cfg, data = ctx.cfg, ctx.dataset
    accs, traces = classifier.kmod_cross_validate(
        data.samples, data.labels, cfg.folds, cfg.trainer(), cfg.make_kernel(),
        cfg.kmod_iters,
    )
    write_kmod_accuracy_csv(ctx.writer.path("kmod_accuracy.csv"), accs)
    write_kmod_trace_csv(ctx.writer.path("kmod_trace.csv"), traces)
    console.print(f"Batch KMOD mean accuracy: [bold]{float(np.mean(accs)):.4f}[/bold]")


@main.command("bench-scaling")
@run_options(needs_data=False)
@click.option("--sizes", help="Comma-separated profile sizes, e.g. 100,200,400.")
@click.option("--repeats", type=int, help="Timed repetitions per size.")
@run_command("bench-scaling", needs_data=False)
def bench_scaling_cmd(ctx: RunContext) -> None:
    """Median single-sample grow/prune wall time at several profile sizes."""
    cfg = ctx.cfg
    n_features = int(get_bench_preset()["n_features"])

    def on_point(p) -> None:
        console.print(f"  L={p.L}: grow {p.grow_ms_median:.3f} ms, prune {p.prune_ms_median:.3f} ms")

    points = bench_scaling(
        cfg.bench_sizes, cfg.bench_repeats, n_features, cfg.q, cfg.sparsity,
        cfg.gamma, cfg.make_kernel(), seed=cfg.seed, progress=on_point,
    )
    write_scaling_csv(ctx.writer.path("bench_scaling.csv"), points)
    sizes = [p.L for p in points]
    for small, large in zip(sizes, sizes[1:]):
        console.print(
            f"  grow time ratio L={large}/L={small}: {growth_ratio(points, small, large):.2f}"
        )


@main.command()
@click.option("--preset", default="planted-3class", show_default=True,
              type=click.Choice(list_dataset_presets()), help="Dataset preset.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="CSV file to write.")
def synth(preset: str, out_path: str) -> None:
    """Write a bundled synthetic planted-dictionary dataset as CSV."""
    try:
        dataset = load_preset(preset)
        write_csv(dataset, out_path)
    except (KrlsError, OSError) as e:
        Path(out_path).unlink(missing_ok=True)
        console.print(f"[red]Error:[/red] {escape(str(getattr(e, 'message', e)))}")
        sys.exit(1)
    console.print(
        f"Wrote {dataset.n_samples} samples ({dataset.n_classes} classes, "
        f"N={dataset.n_features}) to {out_path}"
    )
