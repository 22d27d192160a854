"""
Stage orchestration.

Each stage reads the interface files of the stages before it from the output
directory and writes its own, so `run` is exactly the stages executed in
order and the stage subcommands compose to the same bundle.
"""
import logging
import os
from contextlib import contextmanager
from datetime import timedelta
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Sequence

from ..config import RunConfig
from ..exceptions import InvalidInputError, MissingDataError, OutputDirBusyError, SatmobError
from ..models import (
    BaselineMode,
    ChangeKind,
    ChangeStatsFile,
    DetectionResult,
    GridSpec,
    IngestSummary,
    PeriodLabel,
    ReportBundle,
    SelectionOutcome,
)
from ..storage.raster_io import load_change_map, load_raster, write_change_map
from ..storage.report_io import check_writable, render_report
from ..storage.series_io import (
    SeriesFile,
    anomaly_to_csv,
    band_to_csv,
    read_json,
    series_to_csv,
    write_json,
    write_text,
)
from .anomaly import build_baseline, confidence_band, flag_anomalies
from .fusion import infer_event
from .imagery_catalog import load_manifest, select_image_pair
from .mobility_metrics import detect_stays, merge_series, rog_per_day, stays_per_day, visits_per_bucket
from .raster_analysis import align, band_difference, change_stats, diff, greyscale, ndvi
from .trace_ingest import (
    geo_prefilter,
    group_by_device,
    parse_traces,
    partition_by_period,
    precision_filter,
    project_points,
    spatial_filter,
    velocity_filter,
)

logger = logging.getLogger(__name__)

SERIES_FILE = "metrics/series.json"
INGEST_FILE = "metrics/ingest_summary.json"
DETECTION_FILE = "anomaly/report.json"
SELECTION_FILE = "imagery/selection.json"
CHANGE_STATS_FILE = "imagery/change_stats.json"
INFERENCE_FILE = "inference.json"
LOCK_NAME = ".lock"
DIAGNOSTICS_NAME = "diagnostics.txt"

DAILY_METRICS = ("rog", "stays")


def run_metrics(config: RunConfig, out_dir: Path) -> SeriesFile:
    """Ingest, clean and partition the traces, then compute per-period metric series."""
    roi = config.roi
    summary = IngestSummary()
    points = []
    for trace in config.inputs.traces:
        path = Path(trace)
        if not path.is_file():
            raise MissingDataError(f"trace file {path} not found", code="missing-file")
        with open(path, "rb") as f:
            parsed = parse_traces(f)
        summary.rows_in += parsed.rows_in
        summary.rejected += len(parsed.rejects)
        points.extend(parsed.points)

    near = geo_prefilter(points, roi)
    summary.outside_envelope = len(points) - len(near)
    inside = spatial_filter(project_points(near, config.zone), roi)
    summary.outside_roi = len(near) - len(inside)
    precise = precision_filter(inside, config.mobility.max_precision_m)
    summary.precision_dropped = len(inside) - len(precise)

    trajectories = [velocity_filter(traj, config.mobility.max_speed_mps) for traj in group_by_device(precise)]
    kept = [p for traj in trajectories for p in traj.points]
    summary.velocity_dropped = len(precise) - len(kept)

    partition = config.partition
    parts = partition_by_period(kept, partition)
    summary.outside_periods = parts.discarded
    summary.kept_by_period = {label.value: len(members) for label, members in parts.by_period.items()}
    summary.devices = len(trajectories)

    grid = GridSpec(box=roi, rows=config.mobility.grid_rows, cols=config.mobility.grid_cols)
    bucket = timedelta(minutes=config.mobility.visit_bucket_min)
    stays = [
        stay
        for traj in trajectories
        for stay in detect_stays(traj, timedelta(minutes=config.mobility.stay_time_min), config.mobility.stay_dist_m)
    ]
    by_device = {traj.device_id: traj.points for traj in trajectories}

    result = SeriesFile()
    for label, interval in partition.intervals().items():
        result.series.append(visits_per_bucket(by_device, grid, bucket, interval, label.value))
        result.series.append(rog_per_day(trajectories, interval, label.value))
        result.series.append(stays_per_day(stays, interval, label.value))

    for series in result.series:
        write_text(out_dir / "metrics" / f"{series.metric_name}_{series.period_label}.csv", series_to_csv(series))
    write_json(summary, out_dir / INGEST_FILE)
    write_json(result, out_dir / SERIES_FILE)
    logger.info(f"metrics: {summary.devices} devices, {len(kept)} points kept of {summary.rows_in} rows")
    return result


def _baseline_series(series_file: SeriesFile, metric_name: str, labels: Sequence[PeriodLabel]):
    parts = []
    for label in labels:
        series = series_file.get(metric_name, label.value)
        if series is None:
            raise MissingDataError(f"{SERIES_FILE} has no {metric_name} series for {label.value}",
                                   code="missing-stage-input")
        parts.append(series)
    return merge_series(*parts)


def _test_series(series_file: SeriesFile, metric_name: str):
    series = series_file.get(metric_name, PeriodLabel.DURING.value)
    if series is None:
        raise MissingDataError(f"{SERIES_FILE} has no {metric_name} series for during", code="missing-stage-input")
    return series


def run_detect(config: RunConfig, out_dir: Path) -> DetectionResult:
    """Hour-of-day Z-tests on visits plus informational daily tests on r_g and stays."""
    series_file = read_json(SeriesFile, out_dir / SERIES_FILE)
    labels = config.anomaly.baseline_periods
    intervals = [config.partition.intervals()[label] for label in labels]
    baseline_name = "+".join(label.value for label in labels)
    threshold = config.anomaly.z_threshold

    baseline = build_baseline(_baseline_series(series_file, "visits", labels), intervals, config.anomaly.baseline_mode)
    visits = flag_anomalies(_test_series(series_file, "visits"), baseline, threshold, baseline_name, "during")

    daily = []
    for metric_name in DAILY_METRICS:
        pooled = build_baseline(_baseline_series(series_file, metric_name, labels), intervals, BaselineMode.POOLED)
        daily.append(flag_anomalies(_test_series(series_file, metric_name), pooled, threshold, baseline_name, "during"))

    result = DetectionResult(visits=visits, baseline=baseline, daily=daily)
    write_text(out_dir / "anomaly" / "visits_hourly.csv", anomaly_to_csv(visits))
    for report in daily:
        write_text(out_dir / "anomaly" / f"{report.metric_name}_daily.csv", anomaly_to_csv(report))
    write_text(out_dir / "anomaly" / "confidence_band.csv",
               band_to_csv(confidence_band(baseline, config.anomaly.confidence_level)))
    write_json(result, out_dir / DETECTION_FILE)
    return result


def run_select(config: RunConfig, out_dir: Path) -> SelectionOutcome:
    """Pick the before/after image pair, unless imagery is gated on a mobility anomaly that did not occur."""
    if config.imagery.require_mobility_trigger:
        detection = read_json(DetectionResult, out_dir / DETECTION_FILE)
        if not detection.visits.flagged:
            outcome = SelectionOutcome(status="skipped", note="no visit anomaly flagged; imagery not requested")
            logger.info(outcome.note)
            write_json(outcome, out_dir / SELECTION_FILE)
            return outcome

    catalog = load_manifest(config.inputs.manifest)
    selection = select_image_pair(
        catalog.records,
        config.event_spec,
        cloud_max=config.imagery.cloud_max,
        phi=config.imagery.phi,
        form=config.imagery.utility_form,
    )
    outcome = SelectionOutcome(selection=selection)
    write_json(outcome, out_dir / SELECTION_FILE)
    return outcome


def run_diff(config: RunConfig, out_dir: Path) -> ChangeStatsFile:
    """Align the selected pair over the ROI and compute greyscale (and NDVI) change maps."""
    outcome = read_json(SelectionOutcome, out_dir / SELECTION_FILE)
    if outcome.selection is None:
        result = ChangeStatsFile(note=f"imagery {outcome.status}: {outcome.note}")
        write_json(result, out_dir / CHANGE_STATS_FILE)
        return result

    chosen = outcome.selection
    before = load_raster(chosen.before.file_path, chosen.before.band_layout)
    after = load_raster(chosen.after.file_path, chosen.after.band_layout)
    before, after = align(before, after, config.roi)

    change = config.change
    maps = [diff(greyscale(before), greyscale(after), ChangeKind.GREYSCALE)]
    thresholds = {ChangeKind.GREYSCALE: change.greyscale_threshold}
    note = ""
    if "NIR" in before.bands and "NIR" in after.bands:
        maps.append(diff(ndvi(before), ndvi(after), ChangeKind.NDVI))
        thresholds[ChangeKind.NDVI] = change.ndvi_threshold
    else:
        note = "NDVI skipped: no NIR band in the selected pair"
        logger.info(note)

    result = ChangeStatsFile(note=note)
    for change_map in maps:
        result.stats.append(change_stats(change_map, thresholds[change_map.kind]))
        write_change_map(change_map, out_dir / "imagery" / f"change_{change_map.kind.value}.tif")
    for band in ("R", "G", "B"):
        if band in before.bands and band in after.bands:
            result.band_stats.append(change_stats(band_difference(before, after, band), change.greyscale_threshold))

    write_json(result, out_dir / CHANGE_STATS_FILE)
    for stats in result.stats:
        logger.info(f"{stats.kind.value}: changed fraction {stats.changed_fraction:.4f} of {stats.pixel_count} px")
    return result


def run_report(config: RunConfig, out_dir: Path) -> ReportBundle:
    """Fuse the evidence and render the report bundle."""
    series_file = read_json(SeriesFile, out_dir / SERIES_FILE)
    ingest = read_json(IngestSummary, out_dir / INGEST_FILE)
    detection = read_json(DetectionResult, out_dir / DETECTION_FILE)
    selection = read_json(SelectionOutcome, out_dir / SELECTION_FILE)
    stats_file = read_json(ChangeStatsFile, out_dir / CHANGE_STATS_FILE)

    change_maps = []
    for stats in stats_file.stats:
        path = out_dir / "imagery" / f"change_{stats.kind.value}.tif"
        if not path.is_file():
            raise MissingDataError(f"expected stage input {path} is missing", code="missing-stage-input")
        change_maps.append(load_change_map(path))

    inference = infer_event(detection.visits, stats_file.stats, config.change.min_changed_fraction)
    bundle = ReportBundle(
        inference=inference,
        series=series_file.series,
        detection=detection,
        band=confidence_band(detection.baseline, config.anomaly.confidence_level),
        ingest=ingest,
        selection=selection,
        change_maps=change_maps,
        change_stats=stats_file,
    )
    write_json(inference, out_dir / INFERENCE_FILE)
    render_report(bundle, out_dir)
    return bundle


STAGES: Dict[str, Callable[[RunConfig, Path], object]] = {
    "metrics": run_metrics,
    "detect": run_detect,
    "select": run_select,
    "diff": run_diff,
    "report": run_report,
}


@contextmanager
def output_lock(out_dir: Path) -> Iterator[Path]:
    """One run per output directory; the lock file is removed on exit."""
    check_writable(out_dir)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise OutputDirBusyError(f"output.dir: {out_dir} is locked by another run ({lock})") from e
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield lock
    finally:
        lock.unlink(missing_ok=True)


def run_stages(names: Sequence[str], config: RunConfig, out_dir: Path) -> Dict[str, object]:
    """
    Run the named stages in order under the output lock.

    Errors are tagged with the failing stage before they propagate.
    """
    unknown = [name for name in names if name not in STAGES]
    if unknown:
        raise InvalidInputError(f"unknown stage(s) {unknown}")
    results: Dict[str, object] = {}
    with output_lock(out_dir):
        (out_dir / DIAGNOSTICS_NAME).unlink(missing_ok=True)
        for name in names:
            logger.info(f"stage {name}: start")
            try:
                results[name] = STAGES[name](config, out_dir)
            except SatmobError as e:
                e.stage = e.stage or name
                raise
            logger.info(f"stage {name}: done")
    return results


def run_all(config: RunConfig, out_dir: Path) -> ReportBundle:
    return run_stages(list(STAGES), config, out_dir)["report"]


def stage_names() -> List[str]:
    return list(STAGES)
