from pathlib import Path
from typing import Optional

import typer
from pydantic import ValidationError

from ..services.fixtures import ScenarioParams, generate_fixture
from .common import EXIT_INVALID, parse_list

router = typer.Typer()


@router.command("gen-fixture")
def gen_fixture(
    out_dir: Path = typer.Option(..., "--out-dir", "-o", help="Directory for the generated scenario"),
    seed: int = typer.Option(42, help="Random seed"),
    spike_multiplier: float = typer.Option(5.0, help="Visit rate multiplier in the spike hours; 1.0 means no event"),
    spike_hours: str = typer.Option("14,18", help="Event-day hours with the visit spike, comma separated"),
    patch_fraction: Optional[float] = typer.Option(None, help="Damaged share of the ROI in post-event images"),
    days_before: int = typer.Option(14, help="Days in the baseline period"),
    days_after: int = typer.Option(7, help="Days in the after period"),
    devices: int = typer.Option(200, help="Size of the device pool"),
):
    """Generate a synthetic event scenario: traces, rasters, manifest and config."""
    try:
        params = ScenarioParams(
            seed=seed,
            spike_multiplier=spike_multiplier,
            spike_hours=[int(hour) for hour in parse_list(spike_hours)],
            patch_fraction=patch_fraction,
            days_before=days_before,
            days_after=days_after,
            devices=devices,
        )
    except (ValidationError, ValueError) as e:
        typer.echo(f"error: stage=gen-fixture code=config {e}", err=True)
        raise typer.Exit(code=EXIT_INVALID)
    try:
        files = generate_fixture(params, out_dir)
    except OSError as e:
        typer.echo(f"error: stage=gen-fixture code=io {e}", err=True)
        raise typer.Exit(code=1)
    typer.echo(f"config: {files.config}")
