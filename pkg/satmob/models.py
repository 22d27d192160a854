from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Annotated, Dict, List, Optional

import numpy as np
from pydantic import AfterValidator, BaseModel, Field, model_validator

EARLIEST_TIMESTAMP = datetime(2000, 1, 1, tzinfo=timezone.utc)


def _as_utc(value: datetime) -> datetime:
    if value.tzinfo is None:
        return value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


UtcDatetime = Annotated[datetime, AfterValidator(_as_utc)]


class Hemisphere(str, Enum):
    NORTH = "north"
    SOUTH = "south"


class PeriodLabel(str, Enum):
    BEFORE = "before"
    DURING = "during"
    AFTER = "after"


class BaselineMode(str, Enum):
    HOUR_OF_DAY = "hour_of_day"
    POOLED = "pooled"


class UtilityForm(str, Enum):
    CALIBRATED = "calibrated"
    PRINTED = "printed"


class ChangeKind(str, Enum):
    GREYSCALE = "greyscale"
    NDVI = "ndvi"
    RED = "red"
    GREEN = "green"
    BLUE = "blue"


class Verdict(str, Enum):
    NO_EVIDENCE = "NoEvidence"
    MOBILITY_ONLY = "MobilityOnly"
    IMAGERY_ONLY = "ImageryOnly"
    CORROBORATED = "CorroboratedEvent"


# Geodesy

class GeoPoint(BaseModel):
    lon: float = Field(..., ge=-180.0, le=180.0, allow_inf_nan=False, description="Degrees east")
    lat: float = Field(..., ge=-90.0, le=90.0, allow_inf_nan=False, description="Degrees north")

    class Config:
        frozen = True


class ProjPoint(BaseModel):
    easting: float = Field(..., gt=0.0, lt=1_000_000.0, allow_inf_nan=False)
    northing: float = Field(..., allow_inf_nan=False)
    zone: int = Field(..., ge=1, le=60)
    hemisphere: Hemisphere = Hemisphere.NORTH

    class Config:
        frozen = True


class BoundingBox(BaseModel):
    min_e: float = Field(..., allow_inf_nan=False)
    min_n: float = Field(..., allow_inf_nan=False)
    max_e: float = Field(..., allow_inf_nan=False)
    max_n: float = Field(..., allow_inf_nan=False)
    zone: int = Field(..., ge=1, le=60)
    hemisphere: Hemisphere = Hemisphere.NORTH

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_extent(self):
        if not (self.min_e < self.max_e and self.min_n < self.max_n):
            raise ValueError("bounding box needs min < max on both axes")
        return self

    @property
    def width(self) -> float:
        return self.max_e - self.min_e

    @property
    def height(self) -> float:
        return self.max_n - self.min_n

    @property
    def area(self) -> float:
        return self.width * self.height

    def same_crs(self, other: "BoundingBox") -> bool:
        return self.zone == other.zone and self.hemisphere == other.hemisphere

    def contains(self, easting: float, northing: float) -> bool:
        """Closed-box containment."""
        return self.min_e <= easting <= self.max_e and self.min_n <= northing <= self.max_n

    def intersection(self, other: "BoundingBox") -> Optional["BoundingBox"]:
        min_e = max(self.min_e, other.min_e)
        min_n = max(self.min_n, other.min_n)
        max_e = min(self.max_e, other.max_e)
        max_n = min(self.max_n, other.max_n)
        if min_e >= max_e or min_n >= max_n:
            return None
        return BoundingBox(
            min_e=min_e, min_n=min_n, max_e=max_e, max_n=max_n,
            zone=self.zone, hemisphere=self.hemisphere,
        )


# Traces

class TracePoint(BaseModel):
    device_id: str = Field(..., min_length=1)
    timestamp: UtcDatetime
    location: GeoPoint
    precision_m: float = Field(..., ge=0.0, allow_inf_nan=False, description="95% confidence radius")
    projected: Optional[ProjPoint] = None

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_timestamp(self):
        latest = datetime.now(timezone.utc) + timedelta(days=1)
        if not (EARLIEST_TIMESTAMP <= self.timestamp <= latest):
            raise ValueError(f"timestamp {self.timestamp.isoformat()} outside the accepted range")
        return self


class Trajectory(BaseModel):
    device_id: str
    points: List[TracePoint] = []

    @model_validator(mode="after")
    def _check_points(self):
        previous = None
        for point in self.points:
            if point.device_id != self.device_id:
                raise ValueError(f"point of device {point.device_id} in trajectory of {self.device_id}")
            if previous is not None and point.timestamp < previous:
                raise ValueError("trajectory timestamps must be non-decreasing")
            previous = point.timestamp
        return self


class Interval(BaseModel):
    """Half-open [start, end) interval."""

    start: UtcDatetime
    end: UtcDatetime

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_order(self):
        if not self.start < self.end:
            raise ValueError("interval start must precede end")
        return self

    def contains(self, instant: datetime) -> bool:
        return self.start <= instant < self.end

    def overlaps(self, other: "Interval") -> bool:
        return self.start < other.end and other.start < self.end


class PeriodPartition(BaseModel):
    before: Interval
    during: Interval
    after: Interval

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_chronology(self):
        if self.before.end > self.during.start or self.during.end > self.after.start:
            raise ValueError("before/during/after must be chronologically ordered and non-overlapping")
        return self

    def intervals(self) -> Dict[PeriodLabel, Interval]:
        return {
            PeriodLabel.BEFORE: self.before,
            PeriodLabel.DURING: self.during,
            PeriodLabel.AFTER: self.after,
        }

    def label_for(self, instant: datetime) -> Optional[PeriodLabel]:
        for label, interval in self.intervals().items():
            if interval.contains(instant):
                return label
        return None


# Mobility metrics

class Stay(BaseModel):
    device_id: str
    anchor: ProjPoint
    start: UtcDatetime
    end: UtcDatetime
    point_count: int = Field(..., ge=2)

    class Config:
        frozen = True


class GridSpec(BaseModel):
    box: BoundingBox
    rows: int = Field(1, ge=1)
    cols: int = Field(1, ge=1)

    class Config:
        frozen = True

    @property
    def cell_width(self) -> float:
        return self.box.width / self.cols

    @property
    def cell_height(self) -> float:
        return self.box.height / self.rows

    def cell_index(self, easting: float, northing: float) -> Optional[int]:
        """Row-major cell index; points on the max edges fall in the last cell."""
        if not self.box.contains(easting, northing):
            return None
        col = min(int((easting - self.box.min_e) // self.cell_width), self.cols - 1)
        row = min(int((northing - self.box.min_n) // self.cell_height), self.rows - 1)
        return row * self.cols + col


class MetricBucket(BaseModel):
    bucket_start: UtcDatetime
    value: float = Field(..., ge=0.0, allow_inf_nan=False)

    class Config:
        frozen = True


class MetricSeries(BaseModel):
    metric_name: str
    bucket_seconds: int = Field(..., gt=0)
    buckets: List[MetricBucket] = []
    period_label: Optional[str] = None

    @model_validator(mode="after")
    def _check_buckets(self):
        for previous, current in zip(self.buckets, self.buckets[1:]):
            gap = (current.bucket_start - previous.bucket_start).total_seconds()
            if gap < self.bucket_seconds:
                raise ValueError("buckets must be time-ordered and non-overlapping")
        return self

    @property
    def bucket_duration(self) -> timedelta:
        return timedelta(seconds=self.bucket_seconds)

    def values(self) -> List[float]:
        return [bucket.value for bucket in self.buckets]


# Anomaly detection

class HourStats(BaseModel):
    hour: int = Field(..., ge=0, le=23)
    mean: Optional[float] = None
    std: Optional[float] = Field(None, ge=0.0)
    sample_count: int = Field(0, ge=0)

    @property
    def available(self) -> bool:
        return self.sample_count >= 2


class HourBaseline(BaseModel):
    metric_name: str
    mode: BaselineMode = BaselineMode.HOUR_OF_DAY
    baseline_periods: List[str] = []
    hours: List[HourStats]

    @model_validator(mode="after")
    def _check_hours(self):
        if [stats.hour for stats in self.hours] != list(range(24)):
            raise ValueError("baseline needs one entry per hour of day 0..23")
        return self

    def stats_for(self, instant: datetime) -> HourStats:
        return self.hours[instant.hour]


class ScoredBucket(BaseModel):
    bucket_start: UtcDatetime
    value: float
    z: Optional[float] = None  # None when the hour has no usable baseline
    flagged: bool = False

    class Config:
        ser_json_inf_nan = "constants"


class AnomalyReport(BaseModel):
    metric_name: str
    threshold: float = Field(..., gt=0.0)
    baseline_period: str
    test_period: str
    scored: List[ScoredBucket] = []

    class Config:
        ser_json_inf_nan = "constants"

    @model_validator(mode="after")
    def _check_flags(self):
        for previous, current in zip(self.scored, self.scored[1:]):
            if current.bucket_start <= previous.bucket_start:
                raise ValueError("scored buckets must be time-ordered")
        for entry in self.scored:
            if entry.flagged and (entry.z is None or abs(entry.z) < self.threshold):
                raise ValueError("flagged bucket below threshold")
        return self

    @property
    def flagged(self) -> List[ScoredBucket]:
        return [entry for entry in self.scored if entry.flagged]

    @property
    def untestable(self) -> List[ScoredBucket]:
        return [entry for entry in self.scored if entry.z is None]


class BandRow(BaseModel):
    hour: int = Field(..., ge=0, le=23)
    mean: Optional[float] = None
    std: Optional[float] = None
    low: Optional[float] = None
    high: Optional[float] = None
    sample_count: int = 0


class ConfidenceBand(BaseModel):
    level: float = Field(..., gt=0.0, lt=1.0)
    rows: List[BandRow]


# Imagery

class ImageRecord(BaseModel):
    image_id: str = Field(..., min_length=1)
    capture_time: UtcDatetime
    footprint: BoundingBox
    cloud_fraction: float = Field(..., ge=0.0, le=1.0)
    band_layout: List[str] = Field(..., min_length=1)
    pixel_size_m: float = Field(..., gt=0.0)
    file_path: str

    class Config:
        frozen = True


class EventSpec(BaseModel):
    name: str
    event_time: UtcDatetime
    roi: BoundingBox

    class Config:
        frozen = True


class SelectionResult(BaseModel):
    before: ImageRecord
    after: ImageRecord
    u_before: float
    u_after: float
    candidates_considered: int = Field(..., ge=2)
    skipped: Dict[str, str] = {}  # image_id -> reason, for images never scored

    @model_validator(mode="after")
    def _check_order(self):
        if not self.before.capture_time < self.after.capture_time:
            raise ValueError("before image must precede after image")
        return self


class SelectionOutcome(BaseModel):
    status: str = "selected"  # "selected" or "skipped"
    selection: Optional[SelectionResult] = None
    note: str = ""


class RasterGrid(BaseModel):
    """Geo-referenced bands; nodata pixels are NaN in the float64 arrays."""

    bands: Dict[str, np.ndarray]
    origin: ProjPoint  # top-left corner
    pixel_size_m: float = Field(..., gt=0.0)
    nodata_value: Optional[float] = None

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_bands(self):
        if not self.bands:
            raise ValueError("raster needs at least one band")
        shapes = {array.shape for array in self.bands.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError("all bands must be 2-D arrays of identical shape")
        return self

    @property
    def height(self) -> int:
        return next(iter(self.bands.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.bands.values())).shape[1]

    @property
    def footprint(self) -> BoundingBox:
        return BoundingBox(
            min_e=self.origin.easting,
            min_n=self.origin.northing - self.height * self.pixel_size_m,
            max_e=self.origin.easting + self.width * self.pixel_size_m,
            max_n=self.origin.northing,
            zone=self.origin.zone,
            hemisphere=self.origin.hemisphere,
        )


class ChangeMap(BaseModel):
    delta: np.ndarray
    kind: ChangeKind
    origin: ProjPoint
    pixel_size_m: float = Field(..., gt=0.0)

    class Config:
        arbitrary_types_allowed = True


class ChangeStats(BaseModel):
    kind: ChangeKind
    threshold: float = Field(..., gt=0.0)
    mean_abs_delta: float
    changed_fraction: float = Field(..., ge=0.0, le=1.0)
    changed_count: int = Field(..., ge=0)
    changed_area_m2: float = Field(..., ge=0.0)
    pixel_count: int = Field(..., gt=0)


class ChangeStatsFile(BaseModel):
    stats: List[ChangeStats] = []
    band_stats: List[ChangeStats] = []
    note: str = ""


# Fusion

class RuleEvaluation(BaseModel):
    rule: str
    value: bool
    detail: str = ""


class EventInference(BaseModel):
    verdict: Verdict
    mobility_evidence: Optional[AnomalyReport] = None
    imagery_evidence: List[ChangeStats] = []
    rule_trace: List[RuleEvaluation] = []
    min_changed_fraction: float = 0.05

    class Config:
        ser_json_inf_nan = "constants"


class IngestSummary(BaseModel):
    rows_in: int = 0
    rejected: int = 0
    outside_envelope: int = 0
    outside_roi: int = 0
    precision_dropped: int = 0
    velocity_dropped: int = 0
    outside_periods: int = 0
    kept_by_period: Dict[str, int] = {}
    devices: int = 0


class DetectionResult(BaseModel):
    """Everything the detect stage hands on to the report stage."""

    visits: AnomalyReport
    baseline: HourBaseline
    daily: List[AnomalyReport] = []

    class Config:
        ser_json_inf_nan = "constants"


class ReportBundle(BaseModel):
    inference: EventInference
    series: List[MetricSeries] = []
    detection: Optional[DetectionResult] = None
    band: Optional[ConfidenceBand] = None
    ingest: Optional[IngestSummary] = None
    selection: Optional[SelectionOutcome] = None
    change_maps: List[ChangeMap] = []
    change_stats: Optional[ChangeStatsFile] = None

    class Config:
        arbitrary_types_allowed = True
