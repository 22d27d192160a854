from pathlib import Path
from typing import Optional

import typer

from ..models import UtilityForm
from ..services.pipeline import stage_names
from .common import execute, parse_list

router = typer.Typer()


@router.command("run")
def run(
    config: Path = typer.Option(..., "--config", "-c", help="Run configuration (flat dotted-key YAML)"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Overrides output.dir"),
    max_speed: Optional[float] = typer.Option(None, help="mobility.max_speed_mps"),
    threshold: Optional[float] = typer.Option(None, help="anomaly.z_threshold"),
    baseline_periods: Optional[str] = typer.Option(None, help="anomaly.baseline_periods, comma separated"),
    cloud_max: Optional[float] = typer.Option(None, help="imagery.cloud_max"),
    phi: Optional[float] = typer.Option(None, help="imagery.phi"),
    utility_form: Optional[UtilityForm] = typer.Option(None, help="imagery.utility_form"),
    greyscale_threshold: Optional[float] = typer.Option(None, help="change.greyscale_threshold"),
    ndvi_threshold: Optional[float] = typer.Option(None, help="change.ndvi_threshold"),
    min_changed_fraction: Optional[float] = typer.Option(None, help="change.min_changed_fraction"),
):
    """Run every stage, from trace ingestion to the report bundle."""
    results = execute(
        stage_names(),
        config,
        out_dir,
        {
            "mobility.max_speed_mps": max_speed,
            "anomaly.z_threshold": threshold,
            "anomaly.baseline_periods": parse_list(baseline_periods),
            "imagery.cloud_max": cloud_max,
            "imagery.phi": phi,
            "imagery.utility_form": utility_form.value if utility_form else None,
            "change.greyscale_threshold": greyscale_threshold,
            "change.ndvi_threshold": ndvi_threshold,
            "change.min_changed_fraction": min_changed_fraction,
        },
    )
    bundle = results["report"]
    typer.echo(f"verdict: {bundle.inference.verdict.value}")
