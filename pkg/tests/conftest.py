from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from satmob.models import BoundingBox, GeoPoint, ProjPoint, RasterGrid, TracePoint
from satmob.services.fixtures import ScenarioParams, generate_fixture

T0 = datetime(2020, 5, 1, tzinfo=timezone.utc)
ZONE = 15


def at(minutes: float = 0.0, days: int = 0) -> datetime:
    return T0 + timedelta(days=days, minutes=minutes)


def geo_point(device_id: str, when: datetime, lon: float, lat: float, precision_m: float = 5.0) -> TracePoint:
    return TracePoint(device_id=device_id, timestamp=when, location=GeoPoint(lon=lon, lat=lat), precision_m=precision_m)


def proj_point(device_id: str, when: datetime, easting: float, northing: float) -> TracePoint:
    """Point with projected coordinates; the geographic location is a placeholder."""
    return TracePoint(
        device_id=device_id,
        timestamp=when,
        location=GeoPoint(lon=-93.0, lat=35.0),
        precision_m=5.0,
        projected=ProjPoint(easting=easting, northing=northing, zone=ZONE),
    )


def box(min_e=500000.0, min_n=4000000.0, max_e=501000.0, max_n=4001000.0, zone=ZONE) -> BoundingBox:
    return BoundingBox(min_e=min_e, min_n=min_n, max_e=max_e, max_n=max_n, zone=zone)


def grid_of(bands: dict, easting=500000.0, northing=4000000.0, pixel_size_m=1.0) -> RasterGrid:
    return RasterGrid(
        bands={name: np.asarray(values, dtype=float) for name, values in bands.items()},
        origin=ProjPoint(easting=easting, northing=northing, zone=ZONE),
        pixel_size_m=pixel_size_m,
    )


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory) -> Path:
    """Seed-42 event scenario generated once per session."""
    out = tmp_path_factory.mktemp("scenario")
    generate_fixture(ScenarioParams(seed=42), out)
    return out


@pytest.fixture(scope="session")
def quiet_scenario_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("quiet")
    generate_fixture(ScenarioParams(seed=7, spike_multiplier=1.0, days_after=2), out)
    return out
