import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from .exceptions import ConfigError
from .models import (
    BaselineMode,
    BoundingBox,
    EventSpec,
    GeoPoint,
    Interval,
    PeriodLabel,
    PeriodPartition,
    UtcDatetime,
    UtilityForm,
)
from .services.geodesy import bbox_from_centroid, project_to_utm, zone_for_longitude

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"
    RICH_TRACEBACKS: bool = False

    class Config:
        env_file = ".env"
        env_prefix = "SATMOB_"
        extra = "ignore"


@lru_cache()
def get_settings():
    return Settings()


# Run configuration

class _Section(BaseModel):
    class Config:
        extra = "forbid"


class EventSection(_Section):
    name: str = Field(..., min_length=1)
    time: UtcDatetime
    centroid_lon: float = Field(..., ge=-180.0, le=180.0)
    centroid_lat: float = Field(..., gt=-84.0, lt=84.0)
    roi_side_m: float = Field(1000.0, gt=0.0)
    utm_zone: Optional[int] = Field(None, ge=1, le=60)


class PeriodBounds(_Section):
    start: UtcDatetime
    end: UtcDatetime

    @model_validator(mode="after")
    def _check_order(self):
        if not self.start < self.end:
            raise ValueError("start must precede end")
        return self


class PeriodsSection(_Section):
    before: PeriodBounds
    during: PeriodBounds
    after: PeriodBounds

    @model_validator(mode="after")
    def _check_chronology(self):
        if self.before.end > self.during.start or self.during.end > self.after.start:
            raise ValueError("before, during and after must be in chronological order without overlap")
        return self


class InputsSection(_Section):
    traces: List[str] = Field(..., min_length=1)
    manifest: str


class MobilitySection(_Section):
    max_speed_mps: float = Field(138.9, gt=0.0)
    max_precision_m: Optional[float] = Field(None, gt=0.0)
    stay_time_min: float = Field(15.0, gt=0.0)
    stay_dist_m: float = Field(100.0, gt=0.0)
    grid_rows: int = Field(1, ge=1)
    grid_cols: int = Field(1, ge=1)
    visit_bucket_min: int = Field(60, gt=0)


class AnomalySection(_Section):
    z_threshold: float = Field(3.0, gt=0.0)
    baseline_periods: List[PeriodLabel] = Field([PeriodLabel.BEFORE], min_length=1)
    baseline_mode: BaselineMode = BaselineMode.HOUR_OF_DAY
    confidence_level: float = Field(0.95, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_baseline(self):
        if PeriodLabel.DURING in self.baseline_periods:
            raise ValueError("the during period cannot be part of the baseline")
        return self


class ImagerySection(_Section):
    phi: float = Field(0.25, gt=0.0)
    cloud_max: float = Field(0.5, ge=0.0, le=1.0)
    utility_form: UtilityForm = UtilityForm.CALIBRATED
    require_mobility_trigger: bool = False


class ChangeSection(_Section):
    greyscale_threshold: float = Field(10.0, gt=0.0)
    ndvi_threshold: float = Field(0.2, gt=0.0)
    min_changed_fraction: float = Field(0.05, gt=0.0, le=1.0)


class OutputSection(_Section):
    dir: str = "out"


class RunConfig(_Section):
    event: EventSection
    periods: PeriodsSection
    inputs: InputsSection
    mobility: MobilitySection = MobilitySection()
    anomaly: AnomalySection = AnomalySection()
    imagery: ImagerySection = ImagerySection()
    change: ChangeSection = ChangeSection()
    output: OutputSection = OutputSection()

    @property
    def zone(self) -> int:
        return self.event.utm_zone or zone_for_longitude(self.event.centroid_lon)

    @property
    def roi(self) -> BoundingBox:
        centre = project_to_utm(GeoPoint(lon=self.event.centroid_lon, lat=self.event.centroid_lat), self.zone)
        return bbox_from_centroid(centre, self.event.roi_side_m)

    @property
    def partition(self) -> PeriodPartition:
        return PeriodPartition(
            **{
                label: Interval(start=bounds.start, end=bounds.end)
                for label, bounds in (
                    ("before", self.periods.before),
                    ("during", self.periods.during),
                    ("after", self.periods.after),
                )
            }
        )

    @property
    def event_spec(self) -> EventSpec:
        return EventSpec(name=self.event.name, event_time=self.event.time, roi=self.roi)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with dotted-key overrides applied; None values are ignored."""
        flat = flatten(self.model_dump(mode="json"))
        for key, value in overrides.items():
            if value is not None:
                flat[key] = value
        return _validate(unflatten(flat))


def flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Dict[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted in sorted(flat):
        node = nested
        *parents, leaf = dotted.split(".")
        for index, part in enumerate(parents):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{'.'.join(parents[: index + 1])}: is both a value and a section")
            node = child
        if isinstance(node.get(leaf), dict):
            raise ConfigError(f"{dotted}: is both a value and a section")
        node[leaf] = flat[dotted]
    return nested


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"]) or "config"
        raise ConfigError(f"{location}: {error['msg']}") from e


def _resolve(path: str, base: Path) -> str:
    candidate = Path(path)
    if not candidate.is_absolute():
        candidate = base / candidate
    return str(candidate.resolve())


def load_config(path: Union[str, Path], check_inputs: bool = True) -> RunConfig:
    """
    Load a run configuration of flat dotted keys (nested mappings are
    flattened the same way). Relative paths resolve against the config file's
    directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"config: {path.name} is not valid: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping of keys to values")

    config = _validate(unflatten(flatten(raw)))
    base = path.parent
    config.inputs.traces = [_resolve(trace, base) for trace in config.inputs.traces]
    config.inputs.manifest = _resolve(config.inputs.manifest, base)
    config.output.dir = _resolve(config.output.dir, base)

    if check_inputs:
        for trace in config.inputs.traces:
            if not Path(trace).is_file():
                raise ConfigError(f"inputs.traces: file {trace} not found")
        if not Path(config.inputs.manifest).is_file():
            raise ConfigError(f"inputs.manifest: file {config.inputs.manifest} not found")
    logger.debug(f"loaded config {path} for event {config.event.name}")
    return config
