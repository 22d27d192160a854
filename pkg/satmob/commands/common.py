import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import typer

from ..config import RunConfig, load_config
from ..exceptions import ConfigError, InvalidInputError, MissingDataError, SatmobError
from ..services.pipeline import DIAGNOSTICS_NAME, run_stages

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISSING_DATA = 3


def exit_code_for(error: SatmobError) -> int:
    if isinstance(error, MissingDataError):
        return EXIT_MISSING_DATA
    if isinstance(error, (ConfigError, InvalidInputError)):
        return EXIT_INVALID
    return 1


def fail(error: SatmobError, out_dir: Optional[Path] = None) -> None:
    """Report a failed stage on stderr and in diagnostics.txt, then exit with its code."""
    line = f"error: stage={error.stage or 'cli'} code={error.code} {error.message}"
    typer.echo(line, err=True)
    if out_dir is not None and out_dir.is_dir():
        try:
            (out_dir / DIAGNOSTICS_NAME).write_text(line + "\n", encoding="utf-8")
        except OSError as e:
            logger.warning(f"could not write diagnostics to {out_dir}: {e}")
    raise typer.Exit(code=exit_code_for(error))


def parse_list(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def load_run_config(
    config_path: Path,
    out_dir: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    try:
        config = load_config(config_path)
        if overrides:
            config = config.with_overrides(overrides)
    except SatmobError as e:
        e.stage = e.stage or "config"
        fail(e, out_dir)
    if out_dir is not None:
        config.output.dir = str(out_dir.resolve())
    return config


def execute(
    stages: Sequence[str],
    config_path: Path,
    out_dir: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Dict[str, object]:
    """Load the configuration and run the given stages, mapping errors to exit codes."""
    config = load_run_config(config_path, out_dir, overrides)
    target = config.output_dir
    try:
        return run_stages(stages, config, target)
    except SatmobError as e:
        fail(e, target)
