import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

from .config import get_settings


def setup_logging(level: Optional[str] = None) -> None:
    """Route all satmob loggers to one RichHandler on stderr."""
    settings = get_settings()
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=settings.RICH_TRACEBACKS,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))

    root = logging.getLogger("satmob")
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel((level or settings.LOG_LEVEL).upper())
