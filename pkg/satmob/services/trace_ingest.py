import csv
import io
import logging
from collections import defaultdict
from datetime import datetime, timedelta, timezone
from typing import IO, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..exceptions import InvalidInputError, SchemaError
from ..models import (
    EARLIEST_TIMESTAMP,
    BoundingBox,
    GeoPoint,
    PeriodLabel,
    PeriodPartition,
    ProjPoint,
    TracePoint,
    Trajectory,
)
from .geodesy import bbox_to_geo_envelope, haversine_m, project_lonlat_arrays

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("device_id", "timestamp", "lat", "lon", "precision_m")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
DEFAULT_MAX_SPEED_MPS = 500 / 3.6

REPLACEMENT_CHAR = "\ufffd"


class TraceSchema(BaseModel):
    """Column names of a delimiter-separated trace file."""

    device_id: str = "device_id"
    timestamp: str = "timestamp"
    lat: str = "lat"
    lon: str = "lon"
    precision_m: str = "precision_m"
    delimiter: str = ","


class RowRejection(BaseModel):
    row: int
    reason: str


class ParseResult(BaseModel):
    points: List[TracePoint] = []
    rejects: List[RowRejection] = []
    rows_in: int = 0


class PartitionResult(BaseModel):
    by_period: Dict[PeriodLabel, List[TracePoint]]
    discarded: int = 0


def parse_traces(
    stream: Union[bytes, str, IO],
    schema: Optional[TraceSchema] = None,
    now: Optional[datetime] = None,
) -> ParseResult:
    """
    Parse a trace file into TracePoints.

    Every data row either becomes a point or a rejection (row numbers are
    1-based and exclude the header), so rows_in == len(points) + len(rejects).
    Extra named columns are ignored. A row with more fields than the header
    is rejected as malformed-row, one holding bytes that are not UTF-8 as
    bad-encoding.
    """
    schema = schema or TraceSchema()
    data = stream if isinstance(stream, (bytes, str)) else stream.read()
    text = data.decode("utf-8-sig", errors="replace") if isinstance(data, bytes) else data

    try:
        rows = [row for row in csv.reader(io.StringIO(text, newline=""), delimiter=schema.delimiter) if row]
    except csv.Error as e:
        raise SchemaError(f"trace input cannot be split into rows: {e}") from e
    if not rows:
        logger.warning("trace input is empty")
        return ParseResult()

    header, body = rows[0], rows[1:]
    width = len(header)
    frame = pd.DataFrame([row[:width] + [""] * (width - len(row)) for row in body], columns=header, dtype=str)

    required = [schema.device_id, schema.timestamp, schema.lat, schema.lon, schema.precision_m]
    for column in required:
        if column not in frame.columns:
            raise SchemaError(f"missing required column '{column}'")
    if frame.empty:
        logger.warning("trace input has a header but no rows")
        return ParseResult()

    latest = (now or datetime.now(timezone.utc)) + timedelta(days=1)
    malformed = pd.Series([len(row) > width for row in body], index=frame.index)
    garbled = frame.map(lambda value: REPLACEMENT_CHAR in value).any(axis=1)
    device = frame[schema.device_id].str.strip()
    stamps = pd.to_datetime(frame[schema.timestamp], utc=True, errors="coerce", format="ISO8601")
    lat = pd.to_numeric(frame[schema.lat], errors="coerce")
    lon = pd.to_numeric(frame[schema.lon], errors="coerce")
    precision = pd.to_numeric(frame[schema.precision_m], errors="coerce")

    checks = [
        ("malformed-row", malformed),
        ("bad-encoding", garbled),
        ("bad-device-id", device.eq("")),
        ("bad-timestamp", stamps.isna() | (stamps < EARLIEST_TIMESTAMP) | (stamps > latest)),
        ("bad-lat", ~np.isfinite(lat) | (lat < -90) | (lat > 90)),
        ("bad-lon", ~np.isfinite(lon) | (lon < -180) | (lon > 180)),
        ("bad-precision", ~np.isfinite(precision) | (precision < 0)),
    ]
    reason = pd.Series("", index=frame.index)
    for code, failed in checks:
        reason = reason.mask(reason.eq("") & failed.fillna(True), code)

    result = ParseResult(rows_in=len(frame))
    for row_number, code in enumerate(reason, start=1):
        if code:
            logger.warning(f"row={row_number} reason={code}")
            result.rejects.append(RowRejection(row=row_number, reason=code))

    valid = reason.eq("")
    for dev, stamp, la, lo, prec in zip(
        device[valid], stamps[valid], lat[valid], lon[valid], precision[valid]
    ):
        result.points.append(
            TracePoint(
                device_id=dev,
                timestamp=stamp.to_pydatetime().replace(microsecond=0),
                location=GeoPoint(lon=float(lo), lat=float(la)),
                precision_m=float(prec),
            )
        )
    logger.info(f"parsed {len(result.points)} points, rejected {len(result.rejects)} of {result.rows_in} rows")
    return result


def serialize_traces(points: Iterable[TracePoint]) -> str:
    frame = pd.DataFrame(
        [
            {
                "device_id": p.device_id,
                "timestamp": p.timestamp.strftime(TIMESTAMP_FORMAT),
                "lat": repr(p.location.lat),
                "lon": repr(p.location.lon),
                "precision_m": repr(p.precision_m),
            }
            for p in points
        ],
        columns=list(TRACE_COLUMNS),
    )
    return frame.to_csv(index=False, lineterminator="\n")


def geo_prefilter(points: Sequence[TracePoint], box: BoundingBox, margin_m: float = 100.0) -> List[TracePoint]:
    """Coarse lon/lat partition ahead of projection; keeps a margin around the box."""
    padded = BoundingBox(
        min_e=box.min_e - margin_m, min_n=box.min_n - margin_m,
        max_e=box.max_e + margin_m, max_n=box.max_n + margin_m,
        zone=box.zone, hemisphere=box.hemisphere,
    )
    min_lon, min_lat, max_lon, max_lat = bbox_to_geo_envelope(padded)
    return [
        p for p in points
        if min_lon <= p.location.lon <= max_lon and min_lat <= p.location.lat <= max_lat
    ]


def project_points(points: Sequence[TracePoint], zone: int) -> List[TracePoint]:
    if not points:
        return []
    lon = np.array([p.location.lon for p in points])
    lat = np.array([p.location.lat for p in points])
    eastings, northings = project_lonlat_arrays(lon, lat, zone)
    projected = []
    for p, easting, northing in zip(points, eastings, northings):
        hemisphere = "south" if p.location.lat < 0 else "north"
        try:
            proj = ProjPoint(easting=float(easting), northing=float(northing), zone=zone, hemisphere=hemisphere)
        except ValueError as e:
            raise InvalidInputError(f"point of {p.device_id} does not project into zone {zone}") from e
        projected.append(p.model_copy(update={"projected": proj}))
    return projected


def spatial_filter(points: Sequence[TracePoint], box: BoundingBox) -> List[TracePoint]:
    """Points whose projected coordinates fall inside the closed box, order preserved."""
    kept = []
    for p in points:
        proj = p.projected
        if proj is None:
            raise InvalidInputError(f"point of {p.device_id} at {p.timestamp} is not projected")
        if proj.zone != box.zone or proj.hemisphere != box.hemisphere:
            raise InvalidInputError(f"point in zone {proj.zone} but box in zone {box.zone}")
        if box.contains(proj.easting, proj.northing):
            kept.append(p)
    return kept


def precision_filter(points: Sequence[TracePoint], max_precision_m: Optional[float]) -> List[TracePoint]:
    if max_precision_m is None:
        return list(points)
    return [p for p in points if p.precision_m <= max_precision_m]


def group_by_device(points: Iterable[TracePoint]) -> List[Trajectory]:
    """One time-ordered trajectory per device, sorted by device id."""
    grouped: Dict[str, List[TracePoint]] = defaultdict(list)
    for p in points:
        grouped[p.device_id].append(p)
    return [
        Trajectory(device_id=device_id, points=sorted(grouped[device_id], key=lambda p: p.timestamp))
        for device_id in sorted(grouped)
    ]


def velocity_filter(traj: Trajectory, max_speed_mps: float = DEFAULT_MAX_SPEED_MPS) -> Trajectory:
    """
    Drop points reached from the last retained point faster than max_speed_mps.

    Single forward pass; the first point is always kept. A zero-duration
    segment with non-zero displacement counts as infinite speed.
    """
    if not max_speed_mps > 0:
        raise InvalidInputError(f"max_speed_mps must be positive, got {max_speed_mps}")
    if not traj.points:
        return traj

    kept = [traj.points[0]]
    for point in traj.points[1:]:
        anchor = kept[-1]
        distance = haversine_m(anchor.location, point.location)
        seconds = (point.timestamp - anchor.timestamp).total_seconds()
        if seconds <= 0:
            if distance > 0:
                continue
        elif distance / seconds > max_speed_mps:
            continue
        kept.append(point)

    dropped = len(traj.points) - len(kept)
    if dropped:
        logger.debug(f"device {traj.device_id}: velocity filter dropped {dropped} points")
    return Trajectory(device_id=traj.device_id, points=kept)


def partition_by_period(points: Iterable[TracePoint], partition: PeriodPartition) -> PartitionResult:
    by_period: Dict[PeriodLabel, List[TracePoint]] = {label: [] for label in PeriodLabel}
    discarded = 0
    for p in points:
        label = partition.label_for(p.timestamp)
        if label is None:
            discarded += 1
        else:
            by_period[label].append(p)
    if discarded:
        logger.info(f"{discarded} points fall outside every period and were discarded")
    return PartitionResult(by_period=by_period, discarded=discarded)
