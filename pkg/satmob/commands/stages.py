from pathlib import Path
from typing import Optional

import typer

from ..models import UtilityForm
from .common import execute, parse_list

router = typer.Typer()

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Run configuration (flat dotted-key YAML)")
OUT_DIR_OPTION = typer.Option(None, "--out-dir", "-o", help="Overrides output.dir")


@router.command("metrics")
def metrics(
    config: Path = CONFIG_OPTION,
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    max_speed: Optional[float] = typer.Option(None, help="mobility.max_speed_mps"),
    max_precision: Optional[float] = typer.Option(None, help="mobility.max_precision_m"),
):
    """Ingest traces and write the per-period metric series."""
    results = execute(
        ["metrics"], config, out_dir,
        {"mobility.max_speed_mps": max_speed, "mobility.max_precision_m": max_precision},
    )
    typer.echo(f"series: {len(results['metrics'].series)}")


@router.command("detect")
def detect(
    config: Path = CONFIG_OPTION,
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    threshold: Optional[float] = typer.Option(None, help="anomaly.z_threshold"),
    baseline_periods: Optional[str] = typer.Option(None, help="anomaly.baseline_periods, comma separated"),
):
    """Score the during-period visits against the hour-of-day baseline."""
    results = execute(
        ["detect"], config, out_dir,
        {"anomaly.z_threshold": threshold, "anomaly.baseline_periods": parse_list(baseline_periods)},
    )
    typer.echo(f"flagged: {len(results['detect'].visits.flagged)}")


@router.command("select")
def select(
    config: Path = CONFIG_OPTION,
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    cloud_max: Optional[float] = typer.Option(None, help="imagery.cloud_max"),
    phi: Optional[float] = typer.Option(None, help="imagery.phi"),
    utility_form: Optional[UtilityForm] = typer.Option(None, help="imagery.utility_form"),
):
    """Choose the before/after image pair from the manifest."""
    results = execute(
        ["select"], config, out_dir,
        {
            "imagery.cloud_max": cloud_max,
            "imagery.phi": phi,
            "imagery.utility_form": utility_form.value if utility_form else None,
        },
    )
    outcome = results["select"]
    if outcome.selection is None:
        typer.echo(f"selection {outcome.status}")
    else:
        typer.echo(f"before: {outcome.selection.before.image_id} after: {outcome.selection.after.image_id}")


@router.command("diff")
def diff(
    config: Path = CONFIG_OPTION,
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    greyscale_threshold: Optional[float] = typer.Option(None, help="change.greyscale_threshold"),
    ndvi_threshold: Optional[float] = typer.Option(None, help="change.ndvi_threshold"),
):
    """Compute change maps and statistics for the selected pair."""
    results = execute(
        ["diff"], config, out_dir,
        {"change.greyscale_threshold": greyscale_threshold, "change.ndvi_threshold": ndvi_threshold},
    )
    for stats in results["diff"].stats:
        typer.echo(f"{stats.kind.value}: changed_fraction {stats.changed_fraction:.6g}")


@router.command("report")
def report(
    config: Path = CONFIG_OPTION,
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    min_changed_fraction: Optional[float] = typer.Option(None, help="change.min_changed_fraction"),
):
    """Fuse the evidence and render the report bundle."""
    results = execute(["report"], config, out_dir, {"change.min_changed_fraction": min_changed_fraction})
    typer.echo(f"verdict: {results['report'].inference.verdict.value}")
