"""
Interface files exchanged between stages and the CSV tables of the report.

JSON files carry full precision and are what later stages read; CSV tables
use six significant digits so that bundles are reproducible byte for byte.
"""
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Type, TypeVar, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from ..exceptions import MissingDataError
from ..models import AnomalyReport, ConfidenceBand, MetricSeries

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

Model = TypeVar("Model", bound=BaseModel)


class SeriesFile(BaseModel):
    series: List[MetricSeries] = []

    def get(self, metric_name: str, period_label: str) -> Optional[MetricSeries]:
        for series in self.series:
            if series.metric_name == metric_name and series.period_label == period_label:
                return series
        return None


def format_value(value: Optional[float]) -> str:
    """Six significant digits; empty for missing values."""
    if value is None:
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.6g}"


def format_time(instant: datetime) -> str:
    return instant.strftime(TIMESTAMP_FORMAT)


def _to_csv(rows: List[dict], columns: List[str]) -> str:
    return pd.DataFrame(rows, columns=columns, dtype=str).to_csv(index=False, lineterminator="\n")


def series_to_csv(series: MetricSeries) -> str:
    rows = [
        {
            "bucket_start": format_time(bucket.bucket_start),
            "value": format_value(bucket.value),
            "metric": series.metric_name,
            "period": series.period_label or "",
        }
        for bucket in series.buckets
    ]
    return _to_csv(rows, ["bucket_start", "value", "metric", "period"])


def anomaly_to_csv(report: AnomalyReport) -> str:
    rows = [
        {
            "bucket_start": format_time(entry.bucket_start),
            "value": format_value(entry.value),
            "z": format_value(entry.z),
            "flagged": "true" if entry.flagged else "false",
        }
        for entry in report.scored
    ]
    return _to_csv(rows, ["bucket_start", "value", "z", "flagged"])


def band_to_csv(band: ConfidenceBand) -> str:
    rows = [
        {
            "hour": str(row.hour),
            "mean": format_value(row.mean),
            "std": format_value(row.std),
            "low": format_value(row.low),
            "high": format_value(row.high),
            "samples": str(row.sample_count),
        }
        for row in band.rows
    ]
    return _to_csv(rows, ["hour", "mean", "std", "low", "high", "samples"])


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def write_json(model: BaseModel, path: Union[str, Path]) -> Path:
    return write_text(path, model.model_dump_json(indent=2) + "\n")


def read_json(model_cls: Type[Model], path: Union[str, Path]) -> Model:
    """Read a stage interface file; a missing file means the producing stage has not run."""
    path = Path(path)
    if not path.is_file():
        raise MissingDataError(f"expected stage input {path} is missing", code="missing-stage-input")
    try:
        return model_cls.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise MissingDataError(f"stage input {path} is unreadable: {e}", code="missing-stage-input") from e
