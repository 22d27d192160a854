from typing import Optional


class SatmobError(Exception):
    """Base error. `code` is a stable identifier used in diagnostics and exit handling."""

    code = "error"
    stage = None  # set by the pipeline to the stage that failed

    def __init__(self, message: str = "", code: Optional[str] = None):
        if code is not None:
            self.code = code
        self.message = message or self.code
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class InvalidInputError(SatmobError, ValueError):
    code = "invalid-input"


class SchemaError(InvalidInputError):
    code = "schema"


class ConfigError(SatmobError):
    code = "config"


class OutputDirBusyError(ConfigError):
    code = "output-busy"


class MissingDataError(SatmobError):
    code = "missing-data"


class RasterFormatError(MissingDataError):
    code = "unsupported-raster"
