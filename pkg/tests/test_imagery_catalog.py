import json
import logging
from datetime import timedelta

import numpy as np
import pytest

from satmob.exceptions import InvalidInputError, MissingDataError
from satmob.models import EventSpec, ImageRecord, UtilityForm
from satmob.services.imagery_catalog import (
    coverage_fraction,
    load_manifest,
    select_image_pair,
    serialize_manifest,
    utility,
)

from .conftest import at, box

EVENT_TIME = at(days=14, minutes=14 * 60)
ROI = box()  # 1 km square at (500000, 4000000)


def _image(image_id, capture_time, cloud=0.0, footprint=None, path="img.tif"):
    return ImageRecord(
        image_id=image_id,
        capture_time=capture_time,
        footprint=footprint or box(499000.0, 3999000.0, 502000.0, 4002000.0),
        cloud_fraction=cloud,
        band_layout=["R", "G", "B"],
        pixel_size_m=3.0,
        file_path=path,
    )


def _event():
    return EventSpec(name="test", event_time=EVENT_TIME, roi=ROI)


def test_coverage_fraction():
    assert coverage_fraction(_image("full", EVENT_TIME), ROI) == 1.0
    half = box(500500.0, 3999000.0, 502000.0, 4002000.0)
    assert coverage_fraction(_image("half", EVENT_TIME, footprint=half), ROI) == 0.5
    disjoint = box(510000.0, 4010000.0, 511000.0, 4011000.0)
    assert coverage_fraction(_image("none", EVENT_TIME, footprint=disjoint), ROI) == 0.0
    with pytest.raises(InvalidInputError):
        coverage_fraction(_image("other", EVENT_TIME, footprint=box(zone=16)), ROI)


def test_calibrated_utility_trades_coverage_for_days():
    three_quarters = box(500250.0, 3999000.0, 502000.0, 4002000.0)
    near = _image("near", EVENT_TIME - timedelta(days=1), footprint=three_quarters)
    far = _image("far", EVENT_TIME - timedelta(days=2))
    assert coverage_fraction(near, ROI) == 0.75
    assert utility(near, _event(), 0.25) == utility(far, _event(), 0.25) == 0.5


def test_printed_utility_divides_by_phi():
    img = _image("a", EVENT_TIME + timedelta(days=1))
    assert utility(img, _event(), 0.25, UtilityForm.PRINTED) == pytest.approx(1.0 - 4.0)
    with pytest.raises(InvalidInputError):
        utility(img, _event(), 0.0)


def test_select_prefers_high_utility_and_respects_event_time():
    catalog = [
        _image("b_old", EVENT_TIME - timedelta(days=10)),
        _image("b_new", EVENT_TIME - timedelta(days=2)),
        _image("b_cloudy", EVENT_TIME - timedelta(hours=2), cloud=0.9),
        _image("a_exact", EVENT_TIME),
        _image("a_later", EVENT_TIME + timedelta(days=3)),
    ]
    result = select_image_pair(catalog, _event())
    assert result.before.image_id == "b_new"
    assert result.after.image_id == "a_exact"
    assert result.candidates_considered == 4
    assert result.u_after == 1.0


def test_select_ties_go_to_closer_image_then_smaller_id():
    three_quarters = box(500250.0, 3999000.0, 502000.0, 4002000.0)
    catalog = [
        _image("b_far", EVENT_TIME - timedelta(days=2)),
        _image("b_near", EVENT_TIME - timedelta(days=1), footprint=three_quarters),
        _image("a_2", EVENT_TIME + timedelta(days=1)),
        _image("a_1", EVENT_TIME + timedelta(days=1)),
    ]
    result = select_image_pair(catalog, _event())
    assert result.before.image_id == "b_near"
    assert result.after.image_id == "a_1"


def test_select_errors_name_missing_side():
    catalog = [_image("b", EVENT_TIME - timedelta(days=1)), _image("a", EVENT_TIME + timedelta(days=1))]
    with pytest.raises(MissingDataError) as error:
        select_image_pair(catalog, _event(), cloud_max=0.0)
    assert error.value.code == "no-before-image"
    with pytest.raises(MissingDataError) as error:
        select_image_pair(catalog[:1], _event())
    assert error.value.code == "no-after-image"


def _brute_force(catalog, evt, cloud_max, phi):
    best = {}
    for img in catalog:
        if not (img.cloud_fraction < cloud_max and coverage_fraction(img, evt.roi) > 0):
            continue
        side = "before" if img.capture_time < evt.event_time else "after"
        u = utility(img, evt, phi)
        days = abs((img.capture_time - evt.event_time).total_seconds()) / 86400
        current = best.get(side)
        if current is None or (-u, days, img.image_id) < (-current[0], current[1], current[2].image_id):
            best[side] = (u, days, img)
    return best


def test_select_matches_exhaustive_search():
    rng = np.random.default_rng(99)
    evt = _event()
    for _ in range(100):
        catalog = []
        for i in range(50):
            min_e = 499000.0 + rng.uniform(0, 1500)
            min_n = 3999000.0 + rng.uniform(0, 1500)
            footprint = box(min_e, min_n, min_e + rng.uniform(200, 2000), min_n + rng.uniform(200, 2000))
            offset = timedelta(hours=int(rng.integers(-24 * 20, 24 * 20)))
            catalog.append(
                _image(f"img{i:02d}", EVENT_TIME + offset, cloud=round(float(rng.uniform(0, 1)), 2),
                       footprint=footprint)
            )
        expected = _brute_force(catalog, evt, 0.5, 0.25)
        if len(expected) < 2:
            with pytest.raises(MissingDataError):
                select_image_pair(catalog, evt)
            continue
        result = select_image_pair(catalog, evt)
        assert result.before.image_id == expected["before"][2].image_id
        assert result.after.image_id == expected["after"][2].image_id
        assert result.u_before == expected["before"][0]


def test_lower_cloud_max_never_improves_selection():
    rng = np.random.default_rng(5)
    evt = _event()
    catalog = [
        _image(f"img{i:02d}", EVENT_TIME + timedelta(hours=int(rng.integers(-200, 200))),
               cloud=round(float(rng.uniform(0, 1)), 2))
        for i in range(40)
    ]
    try:
        loose = select_image_pair(catalog, evt, cloud_max=0.9)
        strict = select_image_pair(catalog, evt, cloud_max=0.3)
    except MissingDataError:
        pytest.skip("catalog too sparse for this seed")
    assert strict.u_before <= loose.u_before
    assert strict.u_after <= loose.u_after


def _write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _entry(image_id, capture_time="2020-05-18T17:00:00Z", path="rasters/a.tif", **extra):
    entry = {
        "image_id": image_id, "capture_time": capture_time,
        "min_e": 499000.0, "min_n": 3999000.0, "max_e": 502000.0, "max_n": 4002000.0,
        "zone": 15, "cloud_fraction": 0.1, "bands": ["R", "G", "B"], "pixel_size_m": 3.0, "path": path,
    }
    entry.update(extra)
    return json.dumps(entry)


def test_load_manifest_validates_entries(tmp_path, caplog):
    (tmp_path / "rasters").mkdir()
    (tmp_path / "rasters" / "a.tif").write_bytes(b"")
    path = _write_manifest(
        tmp_path,
        [
            _entry("ok"),
            _entry("gone", path="rasters/missing.tif"),
            _entry("late", capture_time="yesterday"),
            "{not json",
            _entry("cloudy", cloud_fraction=1.5),
            "",
            _entry("naive", capture_time="2020-05-18T17:00:00"),
        ],
    )
    with caplog.at_level("WARNING", logger="satmob"):
        result = load_manifest(path)

    assert [r.image_id for r in result.records] == ["ok", "naive"]
    assert result.records[1].capture_time == result.records[0].capture_time
    assert result.records[0].file_path == str((tmp_path / "rasters" / "a.tif").resolve())
    assert [(r.line, r.reason) for r in result.rejects] == [
        (2, "missing-file"),
        (3, "bad-timestamp"),
        (4, "malformed-entry"),
        (5, "invalid-record"),
    ]
    assert "line=2 image_id=gone reason=missing-file" in caplog.text


def test_missing_manifest_is_missing_data(tmp_path):
    with pytest.raises(MissingDataError):
        load_manifest(tmp_path / "nope.jsonl")


def test_serialized_manifest_loads_back(tmp_path):
    (tmp_path / "img.tif").write_bytes(b"")
    records = [_image("x", EVENT_TIME, path="img.tif")]
    path = tmp_path / "m.jsonl"
    path.write_text(serialize_manifest(records), encoding="utf-8")
    loaded = load_manifest(path).records
    assert loaded[0].image_id == "x"
    assert loaded[0].capture_time == EVENT_TIME
    assert loaded[0].footprint == records[0].footprint


@pytest.mark.parametrize("form", list(UtilityForm))
def test_utility_rises_with_coverage_and_falls_with_distance(form):
    evt = _event()
    by_coverage = [
        utility(_image("c", EVENT_TIME, footprint=box(min_e, 3999000.0, 502000.0, 4002000.0)), evt, 0.25, form)
        for min_e in (500900.0, 500700.0, 500500.0, 500300.0, 500100.0)
    ]
    assert by_coverage == sorted(by_coverage)
    assert len(set(by_coverage)) == len(by_coverage)

    by_days = [utility(_image("d", EVENT_TIME + timedelta(days=k)), evt, 0.25, form) for k in range(6)]
    assert by_days == sorted(by_days, reverse=True)
    assert len(set(by_days)) == len(by_days)


def test_selection_ignores_catalog_order():
    rng = np.random.default_rng(31)
    evt = _event()
    catalog = [
        _image(f"img{i:02d}", EVENT_TIME + timedelta(hours=int(rng.integers(-24 * 10, 24 * 10))),
               cloud=round(float(rng.uniform(0, 0.6)), 2))
        for i in range(30)
    ]
    expected = select_image_pair(catalog, evt)
    for _ in range(20):
        shuffled = [catalog[i] for i in rng.permutation(len(catalog))]
        result = select_image_pair(shuffled, evt)
        assert (result.before, result.after) == (expected.before, expected.after)
        assert (result.u_before, result.u_after) == (expected.u_before, expected.u_after)


def test_images_from_another_zone_are_skipped(caplog):
    catalog = [
        _image("b", EVENT_TIME - timedelta(days=1)),
        _image("elsewhere", EVENT_TIME - timedelta(hours=1), footprint=box(zone=16)),
        _image("a", EVENT_TIME + timedelta(days=1)),
    ]
    with caplog.at_level(logging.WARNING, logger="satmob"):
        result = select_image_pair(catalog, _event())

    assert (result.before.image_id, result.after.image_id) == ("b", "a")
    assert result.skipped == {"elsewhere": "other-zone"}
    assert result.candidates_considered == 2
    assert "image_id=elsewhere reason=other-zone" in caplog.text
