import hashlib
import logging
import os
from pathlib import Path
from typing import List, Union

from ..exceptions import ConfigError
from ..models import AnomalyReport, ChangeStats, ReportBundle
from .raster_io import write_change_map, write_pgm_preview
from .series_io import anomaly_to_csv, band_to_csv, format_time, format_value, series_to_csv, write_text

logger = logging.getLogger(__name__)

MANIFEST_NAME = "MANIFEST"
SUMMARY_NAME = "summary.txt"
UNLISTED = {MANIFEST_NAME, ".lock", "diagnostics.txt"}


def check_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output.dir: cannot create {out_dir}: {e}", code="output-unwritable") from e
    if not os.access(out_dir, os.W_OK | os.X_OK):
        raise ConfigError(f"output.dir: {out_dir} is not writable", code="output-unwritable")


def _stats_table(stats: List[ChangeStats]) -> List[str]:
    lines = [f"{'kind':<10} {'threshold':>10} {'mean_abs':>10} {'changed':>10} {'pixels':>8} {'fraction':>10} {'area_m2':>12}"]
    for s in stats:
        lines.append(
            f"{s.kind.value:<10} {format_value(s.threshold):>10} {format_value(s.mean_abs_delta):>10} "
            f"{s.changed_count:>10} {s.pixel_count:>8} {format_value(s.changed_fraction):>10} "
            f"{format_value(s.changed_area_m2):>12}"
        )
    return lines


def _flag_lines(report: AnomalyReport) -> List[str]:
    lines = [
        f"metric: {report.metric_name}  threshold: {format_value(report.threshold)}  "
        f"baseline: {report.baseline_period}  test: {report.test_period}",
        f"buckets tested: {len(report.scored) - len(report.untestable)} of {len(report.scored)}",
        f"flagged buckets: {len(report.flagged)}",
    ]
    if report.flagged:
        lines.append(f"  {'bucket_start':<22} {'value':>10} {'z':>10}")
        for entry in report.flagged:
            lines.append(
                f"  {format_time(entry.bucket_start):<22} {format_value(entry.value):>10} {format_value(entry.z):>10}"
            )
    else:
        lines.append("  (none)")
    return lines


def render_summary(bundle: ReportBundle) -> str:
    inference = bundle.inference
    lines = ["VERDICT", f"verdict: {inference.verdict.value}", ""]

    lines.append("MOBILITY EVIDENCE")
    if inference.mobility_evidence is not None:
        lines.extend(_flag_lines(inference.mobility_evidence))
    else:
        lines.append("no mobility evidence")
    if bundle.detection is not None:
        for daily in bundle.detection.daily:
            lines.append(
                f"daily {daily.metric_name} test (informational): {len(daily.flagged)} of "
                f"{len(daily.scored)} {daily.test_period} days flagged"
            )
    if bundle.ingest is not None:
        ingest = bundle.ingest
        kept = " ".join(f"{label}={count}" for label, count in sorted(ingest.kept_by_period.items()))
        lines.append(
            f"ingest: rows={ingest.rows_in} rejected={ingest.rejected} outside_envelope={ingest.outside_envelope} "
            f"outside_roi={ingest.outside_roi} precision_dropped={ingest.precision_dropped} "
            f"velocity_dropped={ingest.velocity_dropped} outside_periods={ingest.outside_periods} "
            f"devices={ingest.devices} kept: {kept}"
        )
    lines.append("")

    lines.append("IMAGERY EVIDENCE")
    selection = bundle.selection
    if selection is not None and selection.selection is not None:
        chosen = selection.selection
        lines.append(
            f"before: {chosen.before.image_id} {format_time(chosen.before.capture_time)} u={format_value(chosen.u_before)}"
        )
        lines.append(
            f"after: {chosen.after.image_id} {format_time(chosen.after.capture_time)} u={format_value(chosen.u_after)}"
        )
        lines.append(f"eligible candidates: {chosen.candidates_considered}")
        for image_id, reason in sorted(chosen.skipped.items()):
            lines.append(f"skipped: {image_id} reason={reason}")
    elif selection is not None:
        lines.append(f"selection {selection.status}: {selection.note}")
    if inference.imagery_evidence:
        lines.extend(_stats_table(inference.imagery_evidence))
    else:
        lines.append("no change statistics")
    if bundle.change_stats is not None:
        if bundle.change_stats.band_stats:
            lines.append("colour bands (informational):")
            lines.extend(_stats_table(bundle.change_stats.band_stats))
        if bundle.change_stats.note:
            lines.append(f"note: {bundle.change_stats.note}")
    lines.append(f"minimum changed fraction: {format_value(inference.min_changed_fraction)}")
    lines.append("")

    lines.append("RULE TRACE")
    for number, rule in enumerate(inference.rule_trace, start=1):
        lines.append(f"{number}. {rule.rule} = {str(rule.value).lower()}  ({rule.detail})")
    lines.append(f"=> {inference.verdict.value}")
    return "\n".join(lines) + "\n"


def write_manifest(out_dir: Path) -> Path:
    """`sha256 <hex> <relative path>` for every file in the bundle, sorted by path."""
    entries = []
    for path in sorted(out_dir.rglob("*")):
        if not path.is_file() or path.name in UNLISTED:
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append((path.relative_to(out_dir).as_posix(), digest))
    text = "".join(f"sha256 {digest} {relative}\n" for relative, digest in sorted(entries))
    return write_text(out_dir / MANIFEST_NAME, text)


def render_report(bundle: ReportBundle, out_dir: Union[str, Path]) -> List[str]:
    """
    Write the report bundle into out_dir and return the relative paths listed
    in its MANIFEST.

    Args:
        bundle: inference plus the evidence it was derived from
        out_dir: bundle directory; checked for writability before anything is written

    Returns:
        Relative paths of the bundle files, sorted.
    """
    out_dir = Path(out_dir)
    check_writable(out_dir)

    for series in bundle.series:
        write_text(out_dir / "metrics" / f"{series.metric_name}_{series.period_label}.csv", series_to_csv(series))
    if bundle.detection is not None:
        write_text(out_dir / "anomaly" / f"{bundle.detection.visits.metric_name}_hourly.csv",
                   anomaly_to_csv(bundle.detection.visits))
        for daily in bundle.detection.daily:
            write_text(out_dir / "anomaly" / f"{daily.metric_name}_daily.csv", anomaly_to_csv(daily))
    if bundle.band is not None:
        write_text(out_dir / "anomaly" / "confidence_band.csv", band_to_csv(bundle.band))
    for change in bundle.change_maps:
        write_change_map(change, out_dir / "imagery" / f"change_{change.kind.value}.tif")
        write_pgm_preview(change, out_dir / "imagery" / f"change_{change.kind.value}.pgm")
    write_text(out_dir / SUMMARY_NAME, render_summary(bundle))

    manifest = write_manifest(out_dir)
    listed = [line.split(" ", 2)[2] for line in manifest.read_text(encoding="utf-8").splitlines()]
    logger.info(f"report bundle in {out_dir}: {len(listed)} files, verdict {bundle.inference.verdict.value}")
    return listed
