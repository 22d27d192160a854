import logging
import math
from collections import defaultdict
from datetime import datetime, timedelta, timezone
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..exceptions import InvalidInputError
from ..models import GridSpec, Interval, MetricBucket, MetricSeries, Stay, TracePoint, Trajectory

logger = logging.getLogger(__name__)

DAY_SECONDS = 86400
HOUR_SECONDS = 3600
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def _xy(points: Sequence[TracePoint]) -> np.ndarray:
    coords = []
    for p in points:
        if p.projected is None:
            raise InvalidInputError(f"point of {p.device_id} at {p.timestamp} is not projected")
        coords.append((p.projected.easting, p.projected.northing))
    return np.array(coords, dtype=float).reshape(-1, 2)


def _bucket_start(instant: datetime, seconds: int) -> datetime:
    offset = int((instant - _EPOCH).total_seconds()) // seconds * seconds
    return _EPOCH + timedelta(seconds=offset)


def _bucket_range(interval: Interval, seconds: int) -> List[datetime]:
    starts = []
    current = _bucket_start(interval.start, seconds)
    while current < interval.end:
        starts.append(current)
        current += timedelta(seconds=seconds)
    return starts


def _rog(xy: np.ndarray) -> float:
    center = xy.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum((xy - center) ** 2, axis=1))))


def radius_of_gyration(traj: Trajectory) -> float:
    """Root-mean-square distance of the projected points from their centre of mass."""
    if not traj.points:
        raise InvalidInputError(f"trajectory of {traj.device_id} is empty")
    return _rog(_xy(traj.points))


def detect_stays(
    traj: Trajectory,
    time_thresh: timedelta = timedelta(minutes=15),
    dist_thresh: float = 100.0,
) -> List[Stay]:
    """
    Anchor-based sequential stay detection.

    A candidate cluster grows while each next point lies within dist_thresh of
    the cluster's first point; it becomes a stay when it holds at least two
    points spanning at least time_thresh. Scanning resumes at the point that
    broke the cluster, so stays never overlap in time.
    """
    if not traj.points:
        return []
    xy = _xy(traj.points)
    points = traj.points
    n = len(points)
    stays = []
    i = 0
    while i < n:
        j = i + 1
        while j < n and math.hypot(xy[j, 0] - xy[i, 0], xy[j, 1] - xy[i, 1]) <= dist_thresh:
            j += 1
        last = j - 1
        if last > i and points[last].timestamp - points[i].timestamp >= time_thresh:
            stays.append(
                Stay(
                    device_id=traj.device_id,
                    anchor=points[i].projected,
                    start=points[i].timestamp,
                    end=points[last].timestamp,
                    point_count=j - i,
                )
            )
        i = j
    return stays


def stays_per_day(
    stays: Iterable[Stay],
    interval: Optional[Interval] = None,
    period_label: Optional[str] = None,
) -> MetricSeries:
    """Daily count of stays by start day, summed over devices."""
    counts: Dict[datetime, int] = defaultdict(int)
    for stay in stays:
        if interval is not None and not interval.contains(stay.start):
            continue
        counts[_bucket_start(stay.start, DAY_SECONDS)] += 1

    if interval is not None:
        days = _bucket_range(interval, DAY_SECONDS)
    else:
        days = sorted(counts)
    buckets = [MetricBucket(bucket_start=day, value=counts.get(day, 0)) for day in days]
    return MetricSeries(metric_name="stays", bucket_seconds=DAY_SECONDS, buckets=buckets, period_label=period_label)


def visits_per_bucket(
    points_by_device: Mapping[str, Sequence[TracePoint]],
    grid: GridSpec,
    bucket: timedelta = timedelta(hours=1),
    interval: Optional[Interval] = None,
    period_label: Optional[str] = None,
) -> MetricSeries:
    """
    Visits per time bucket: for every bucket, the number of (device, grid cell)
    pairs with at least one point. With a 1x1 grid this is the number of
    distinct devices present.
    """
    seconds = int(bucket.total_seconds())
    if seconds <= 0:
        raise InvalidInputError("bucket duration must be positive")

    present: Dict[datetime, Set[Tuple[str, int]]] = defaultdict(set)
    for device_id, points in points_by_device.items():
        for p in points:
            if interval is not None and not interval.contains(p.timestamp):
                continue
            if p.projected is None:
                raise InvalidInputError(f"point of {device_id} is not projected")
            cell = grid.cell_index(p.projected.easting, p.projected.northing)
            if cell is None:
                raise InvalidInputError(f"point of {device_id} at {p.timestamp} lies outside the grid")
            present[_bucket_start(p.timestamp, seconds)].add((device_id, cell))

    if interval is not None:
        starts = _bucket_range(interval, seconds)
    elif present:
        first, last = min(present), max(present)
        starts = _bucket_range(Interval(start=first, end=last + bucket), seconds)
    else:
        starts = []
    buckets = [MetricBucket(bucket_start=start, value=len(present.get(start, ()))) for start in starts]
    return MetricSeries(metric_name="visits", bucket_seconds=seconds, buckets=buckets, period_label=period_label)


def rog_per_day(
    trajectories: Iterable[Trajectory],
    interval: Optional[Interval] = None,
    period_label: Optional[str] = None,
) -> MetricSeries:
    """Daily mean over active devices of the radius of gyration of that day's points."""
    per_day: Dict[datetime, List[float]] = defaultdict(list)
    for traj in trajectories:
        by_day: Dict[datetime, List[TracePoint]] = defaultdict(list)
        for p in traj.points:
            if interval is not None and not interval.contains(p.timestamp):
                continue
            by_day[_bucket_start(p.timestamp, DAY_SECONDS)].append(p)
        for day, points in by_day.items():
            per_day[day].append(_rog(_xy(points)))

    buckets = [
        MetricBucket(bucket_start=day, value=float(np.mean(values)))
        for day, values in sorted(per_day.items())
    ]
    return MetricSeries(metric_name="rog", bucket_seconds=DAY_SECONDS, buckets=buckets, period_label=period_label)


def merge_series(*series: MetricSeries) -> MetricSeries:
    """Concatenate series of one metric and bucket size, ordered by bucket start."""
    if not series:
        raise InvalidInputError("nothing to merge")
    first = series[0]
    for other in series[1:]:
        if other.metric_name != first.metric_name or other.bucket_seconds != first.bucket_seconds:
            raise InvalidInputError("cannot merge series of different metrics or bucket sizes")
    buckets = sorted((b for s in series for b in s.buckets), key=lambda b: b.bucket_start)
    labels = [s.period_label for s in series if s.period_label]
    return MetricSeries(
        metric_name=first.metric_name,
        bucket_seconds=first.bucket_seconds,
        buckets=buckets,
        period_label="+".join(labels) or None,
    )
