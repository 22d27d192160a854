from typing import Optional

import typer

from .commands.fixture import router as fixture_router
from .commands.run import router as run_router
from .commands.stages import router as stages_router
from .config import get_settings
from .logging_setup import setup_logging

app = typer.Typer(
    name="satmob",
    help="Event inference from device traces and before/after satellite imagery.",
    no_args_is_help=True,
    add_completion=False,
)


def include_router(target: typer.Typer, router: typer.Typer) -> None:
    target.registered_commands.extend(router.registered_commands)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides SATMOB_LOG_LEVEL"),
):
    """Configure logging for every command."""
    setup_logging(log_level or get_settings().LOG_LEVEL)


# Include routers
include_router(app, run_router)
include_router(app, fixture_router)
include_router(app, stages_router)
