"""
Synthetic event scenario: device traces with hour-of-day Poisson visit rates
around an event site, an injected visit spike on the event day, and a
before/after image series whose post-event rasters carry a damage patch.

All randomness comes from one numpy Generator seeded from the scenario, so a
seed always produces the same bytes.
"""
import json
import logging
import math
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, model_validator

from ..models import BoundingBox, GeoPoint, ImageRecord, ProjPoint, RasterGrid, TracePoint
from ..storage.raster_io import write_raster
from ..storage.series_io import write_text
from .geodesy import bbox_from_centroid, inverse_utm_arrays, project_to_utm, zone_for_longitude
from .imagery_catalog import serialize_manifest
from .trace_ingest import serialize_traces

logger = logging.getLogger(__name__)

# Mean visiting devices per hour of day on an average day
HOURLY_PROFILE = (
    12, 12, 12, 12, 12, 13,
    15, 18, 20, 21,
    22, 22, 23, 23, 24, 24, 23, 23,
    22, 20, 18, 16, 14, 13,
)

VEGETATION = (60, 120, 50, 200)  # R, G, B, NIR
DAMAGE = (150, 130, 110, 90)
BAND_LAYOUT = ["R", "G", "B", "NIR"]

# (days from the event day, hour of capture, cloud fraction)
IMAGE_SCHEDULE = (
    (-25, 17, 0.0),
    (-6, 17, 0.02),
    (-3, 17, 0.75),
    (-1, 17, 0.9),
    (1, 17, 0.6),
    (3, 17, 0.0),
    (5, 17, 0.1),
)


class ScenarioParams(BaseModel):
    seed: int = 42
    event_name: str = "tornado"
    centroid_lon: float = Field(-95.3697, ge=-180.0, le=180.0)
    centroid_lat: float = Field(35.7479, gt=-84.0, lt=84.0)
    roi_side_m: float = Field(1000.0, gt=0.0)
    start: datetime = datetime(2020, 5, 1, tzinfo=timezone.utc)
    days_before: int = Field(14, ge=2)
    days_after: int = Field(7, ge=1)
    event_hour: int = Field(14, ge=0, le=23)
    devices: int = Field(200, ge=1)
    spike_multiplier: float = Field(5.0, ge=1.0)
    spike_hours: List[int] = [14, 18]
    day_factor_range: Tuple[float, float] = (0.4, 1.6)
    extra_ping_rate: float = Field(0.5, ge=0.0)
    long_visit_prob: float = Field(0.03, ge=0.0, le=1.0)
    teleport_prob: float = Field(0.02, ge=0.0, le=1.0)
    outside_prob: float = Field(0.05, ge=0.0, le=1.0)
    bad_rows: int = Field(3, ge=0)
    patch_fraction: Optional[float] = Field(None, ge=0.0, le=1.0)
    pixel_size_m: float = Field(10.0, gt=0.0)
    raster_margin_m: float = Field(100.0, ge=0.0)

    @model_validator(mode="after")
    def _check(self):
        if any(not 0 <= hour <= 23 for hour in self.spike_hours):
            raise ValueError("spike hours must be in 0..23")
        if self.start.tzinfo is None:
            self.start = self.start.replace(tzinfo=timezone.utc)
        return self

    @property
    def damage_fraction(self) -> float:
        """Changed share of the ROI; defaults to none when no spike is injected."""
        if self.patch_fraction is not None:
            return self.patch_fraction
        return 0.12 if self.spike_multiplier > 1.0 else 0.0

    @property
    def event_day(self) -> datetime:
        return self.start + timedelta(days=self.days_before)

    @property
    def event_time(self) -> datetime:
        return self.event_day + timedelta(hours=self.event_hour)

    @property
    def zone(self) -> int:
        return zone_for_longitude(self.centroid_lon)


class ScenarioFiles(BaseModel):
    traces: Path
    manifest: Path
    config: Path
    rasters: List[Path]
    points: int


def _centre(params: ScenarioParams) -> ProjPoint:
    return project_to_utm(GeoPoint(lon=params.centroid_lon, lat=params.centroid_lat), params.zone)


def simulate_points(params: ScenarioParams) -> List[TracePoint]:
    """
    Simulate the device pings of the scenario, ordered by time then device.

    Every device has a fixed home inside the ROI and pings near it. Per day and
    hour the number of visiting devices is Poisson with rate
    HOURLY_PROFILE[hour] times a per-day activity factor (1.0 on the event
    day), multiplied by spike_multiplier in the spike hours of the event day.
    """
    rng = np.random.default_rng(params.seed)
    centre = _centre(params)
    half = params.roi_side_m / 2
    homes = np.column_stack(
        [
            centre.easting + rng.uniform(-0.8 * half, 0.8 * half, params.devices),
            centre.northing + rng.uniform(-0.8 * half, 0.8 * half, params.devices),
        ]
    )

    times: List[datetime] = []
    devices: List[int] = []
    xy: List[Tuple[float, float]] = []
    precision: List[float] = []

    def ping(when: datetime, device: int, x: float, y: float) -> None:
        times.append(when)
        devices.append(device)
        xy.append((x, y))
        precision.append(round(float(rng.uniform(3.0, 30.0)), 1))

    total_days = params.days_before + 1 + params.days_after
    for day in range(total_days):
        day_start = params.start + timedelta(days=day)
        is_event_day = day == params.days_before
        factor = 1.0 if is_event_day else float(rng.uniform(*params.day_factor_range))
        for hour in range(24):
            rate = HOURLY_PROFILE[hour] * factor
            if is_event_day and hour in params.spike_hours:
                rate *= params.spike_multiplier
            count = min(int(rng.poisson(rate)), params.devices)
            hour_start = day_start + timedelta(hours=hour)
            for device in sorted(rng.choice(params.devices, size=count, replace=False)):
                home_x, home_y = homes[device]
                if rng.random() < params.long_visit_prob:
                    minutes = list(range(0, 60, 5))
                    teleport = False
                else:
                    pings = min(1 + int(rng.poisson(params.extra_ping_rate)), 60)
                    minutes = sorted(rng.choice(60, size=pings, replace=False))
                    teleport = rng.random() < params.teleport_prob
                for minute in minutes:
                    when = hour_start + timedelta(minutes=int(minute), seconds=int(rng.integers(0, 59)))
                    jitter = rng.normal(0.0, 10.0, 2)
                    ping(when, int(device), home_x + jitter[0], home_y + jitter[1])
                if teleport:
                    # 1 s after the first ping, on the far side of the ROI centre
                    far_x = centre.easting - math.copysign(0.9 * half, home_x - centre.easting)
                    far_y = centre.northing - math.copysign(0.9 * half, home_y - centre.northing)
                    ping(times[-len(minutes)] + timedelta(seconds=1), int(device), far_x, far_y)
                if rng.random() < params.outside_prob:
                    angle = rng.uniform(0, 2 * math.pi)
                    distance = rng.uniform(2000.0, 3000.0)
                    when = hour_start + timedelta(minutes=int(rng.integers(0, 60)), seconds=59)
                    ping(when, int(device), centre.easting + distance * math.cos(angle),
                         centre.northing + distance * math.sin(angle))

    if not times:
        return []
    coords = np.array(xy)
    lon, lat = inverse_utm_arrays(coords[:, 0], coords[:, 1], params.zone, centre.hemisphere)
    order = sorted(range(len(times)), key=lambda i: (times[i], devices[i], i))
    return [
        TracePoint(
            device_id=f"dev{devices[i]:04d}",
            timestamp=times[i],
            location=GeoPoint(lon=round(float(lon[i]), 7), lat=round(float(lat[i]), 7)),
            precision_m=precision[i],
        )
        for i in order
    ]


def _raster(params: ScenarioParams, rng: np.random.Generator, origin: ProjPoint, size: int, damaged: bool) -> RasterGrid:
    bands = {}
    patch_side = int(round(math.sqrt(params.damage_fraction) * params.roi_side_m / params.pixel_size_m))
    first = size // 2 - patch_side // 2
    for name, healthy, hit in zip(BAND_LAYOUT, VEGETATION, DAMAGE):
        values = np.full((size, size), float(healthy))
        if damaged and patch_side > 0:
            values[first:first + patch_side, first:first + patch_side] = hit
        bands[name] = values + rng.integers(-3, 4, size=(size, size))
    return RasterGrid(bands=bands, origin=origin, pixel_size_m=params.pixel_size_m)


def _config(params: ScenarioParams) -> dict:
    def stamp(instant: datetime) -> str:
        return instant.strftime("%Y-%m-%dT%H:%M:%SZ")

    event_day = params.event_day
    return {
        "event.name": params.event_name,
        "event.time": stamp(params.event_time),
        "event.centroid_lon": params.centroid_lon,
        "event.centroid_lat": params.centroid_lat,
        "event.roi_side_m": params.roi_side_m,
        "periods.before.start": stamp(params.start),
        "periods.before.end": stamp(event_day),
        "periods.during.start": stamp(event_day),
        "periods.during.end": stamp(event_day + timedelta(days=1)),
        "periods.after.start": stamp(event_day + timedelta(days=1)),
        "periods.after.end": stamp(event_day + timedelta(days=1 + params.days_after)),
        "inputs.traces": ["traces.csv"],
        "inputs.manifest": "manifest.jsonl",
        "output.dir": "out",
    }


def generate_fixture(params: ScenarioParams, out_dir: Union[str, Path]) -> ScenarioFiles:
    """Write traces.csv, manifest.jsonl, rasters/*.tif and config.yaml into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    points = simulate_points(params)
    traces = serialize_traces(points)
    for row in range(params.bad_rows):
        traces += f"dev9999,not-a-time,{35 + row},-95.37,5.0\n"
    traces_path = write_text(out_dir / "traces.csv", traces)

    # separate stream so raster noise does not depend on the trace draw count
    rng = np.random.default_rng([params.seed, 1])
    centre = _centre(params)
    extent = params.roi_side_m + 2 * params.raster_margin_m
    size = int(math.ceil(extent / params.pixel_size_m))
    origin = ProjPoint(
        easting=math.floor(centre.easting) - size * params.pixel_size_m / 2,
        northing=math.floor(centre.northing) + size * params.pixel_size_m / 2,
        zone=centre.zone,
        hemisphere=centre.hemisphere,
    )
    footprint = BoundingBox(
        min_e=origin.easting, min_n=origin.northing - size * params.pixel_size_m,
        max_e=origin.easting + size * params.pixel_size_m, max_n=origin.northing,
        zone=origin.zone, hemisphere=origin.hemisphere,
    )

    records = []
    rasters = []
    for day_offset, hour, cloud in IMAGE_SCHEDULE:
        captured = params.event_day + timedelta(days=day_offset, hours=hour)
        image_id = f"scene_{captured:%Y%m%d}"
        relative = f"rasters/{image_id}.tif"
        grid = _raster(params, rng, origin, size, damaged=captured >= params.event_time)
        rasters.append(write_raster(grid, out_dir / relative, dtype="uint8"))
        records.append(
            ImageRecord(
                image_id=image_id,
                capture_time=captured,
                footprint=footprint,
                cloud_fraction=cloud,
                band_layout=BAND_LAYOUT,
                pixel_size_m=params.pixel_size_m,
                file_path=relative,
            )
        )
    manifest_path = write_text(out_dir / "manifest.jsonl", serialize_manifest(records))

    config_path = write_text(out_dir / "config.yaml", yaml.safe_dump(_config(params), sort_keys=True))
    write_text(out_dir / "scenario.json", json.dumps(params.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    logger.info(
        f"fixture seed={params.seed}: {len(points)} pings, {len(records)} images, "
        f"damage fraction {params.damage_fraction:.3f} in {out_dir}"
    )
    return ScenarioFiles(
        traces=traces_path, manifest=manifest_path, config=config_path, rasters=rasters, points=len(points)
    )
