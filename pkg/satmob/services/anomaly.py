import logging
import math
from collections import defaultdict
from typing import Dict, List, Sequence

import numpy as np
from scipy import stats

from ..exceptions import InvalidInputError
from ..models import (
    AnomalyReport,
    BandRow,
    BaselineMode,
    ConfidenceBand,
    HourBaseline,
    HourStats,
    Interval,
    MetricSeries,
    ScoredBucket,
)

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 3.0


def build_baseline(
    series: MetricSeries,
    intervals: Sequence[Interval],
    mode: BaselineMode = BaselineMode.HOUR_OF_DAY,
) -> HourBaseline:
    """
    Population mean and standard deviation of the buckets inside the baseline
    intervals, per hour of day (or pooled over all hours).

    An hour with fewer than two samples stays in the baseline with its sample
    count but is not available for testing.
    """
    if mode == BaselineMode.HOUR_OF_DAY and series.bucket_seconds != 3600:
        raise InvalidInputError("hour-of-day baselines need an hourly series")

    samples: Dict[int, List[float]] = defaultdict(list)
    for bucket in series.buckets:
        if any(interval.contains(bucket.bucket_start) for interval in intervals):
            key = bucket.bucket_start.hour if mode == BaselineMode.HOUR_OF_DAY else 0
            samples[key].append(bucket.value)

    def _stats(hour: int, values: List[float]) -> HourStats:
        if not values:
            return HourStats(hour=hour, sample_count=0)
        array = np.asarray(values, dtype=float)
        return HourStats(hour=hour, mean=float(array.mean()), std=float(array.std()), sample_count=len(values))

    if mode == BaselineMode.POOLED:
        pooled = samples.get(0, [])
        hours = [_stats(hour, pooled) for hour in range(24)]
    else:
        hours = [_stats(hour, samples.get(hour, [])) for hour in range(24)]

    unavailable = [h.hour for h in hours if not h.available]
    if unavailable:
        logger.warning(f"baseline for {series.metric_name}: hours without enough samples {unavailable}")
    return HourBaseline(
        metric_name=series.metric_name,
        mode=mode,
        baseline_periods=series.period_label.split("+") if series.period_label else [],
        hours=hours,
    )


def z_score(x: float, mean: float, std: float) -> float:
    """(x - mean) / std; a zero std yields 0 on the mean and a signed infinity elsewhere."""
    if std < 0:
        raise InvalidInputError(f"standard deviation must be non-negative, got {std}")
    if std == 0:
        if x == mean:
            return 0.0
        return math.copysign(math.inf, x - mean)
    return (x - mean) / std


def flag_anomalies(
    series: MetricSeries,
    baseline: HourBaseline,
    threshold: float = DEFAULT_THRESHOLD,
    baseline_period: str = "before",
    test_period: str = "during",
) -> AnomalyReport:
    if not threshold > 0:
        raise InvalidInputError(f"threshold must be positive, got {threshold}")
    scored = []
    for bucket in series.buckets:
        hour = baseline.stats_for(bucket.bucket_start)
        if not hour.available:
            scored.append(ScoredBucket(bucket_start=bucket.bucket_start, value=bucket.value))
            continue
        z = z_score(bucket.value, hour.mean, hour.std)
        scored.append(
            ScoredBucket(bucket_start=bucket.bucket_start, value=bucket.value, z=z, flagged=abs(z) >= threshold)
        )

    report = AnomalyReport(
        metric_name=series.metric_name,
        threshold=threshold,
        baseline_period=baseline_period,
        test_period=test_period,
        scored=scored,
    )
    logger.info(
        f"{series.metric_name}: {len(report.flagged)} of {len(scored)} {test_period} buckets flagged "
        f"at |z| >= {threshold}, {len(report.untestable)} untestable"
    )
    return report


def confidence_band(baseline: HourBaseline, level: float = 0.95) -> ConfidenceBand:
    """
    Per-hour normal-quantile band mean +/- q * std, for plots and reports.

    Hours that flag_anomalies cannot test keep their mean but get no band.
    """
    if not 0 < level < 1:
        raise InvalidInputError(f"confidence level must be in (0, 1), got {level}")
    quantile = float(stats.norm.ppf(0.5 + level / 2))
    rows = []
    for hour in baseline.hours:
        if not hour.available:
            rows.append(BandRow(hour=hour.hour, mean=hour.mean, std=hour.std, sample_count=hour.sample_count))
            continue
        rows.append(
            BandRow(
                hour=hour.hour,
                mean=hour.mean,
                std=hour.std,
                low=hour.mean - quantile * hour.std,
                high=hour.mean + quantile * hour.std,
                sample_count=hour.sample_count,
            )
        )
    return ConfidenceBand(level=level, rows=rows)
