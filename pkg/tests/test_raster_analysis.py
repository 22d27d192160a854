import numpy as np
import pytest
import rasterio
from rasterio.crs import CRS
from rasterio.transform import from_origin
from PIL import Image

from satmob.exceptions import InvalidInputError, MissingDataError, RasterFormatError
from satmob.models import ChangeKind, ChangeMap, ProjPoint
from satmob.services.raster_analysis import align, band_difference, change_stats, diff, greyscale, ndvi
from satmob.storage.raster_io import load_change_map, load_raster, write_change_map, write_pgm_preview, write_raster

from .conftest import ZONE, box, grid_of


def _change(delta, pixel_size_m=1.0, kind=ChangeKind.GREYSCALE):
    return ChangeMap(
        delta=np.asarray(delta, dtype=float),
        kind=kind,
        origin=ProjPoint(easting=500000.0, northing=4000000.0, zone=ZONE),
        pixel_size_m=pixel_size_m,
    )


# raster files

def test_geotiff_round_trip(tmp_path):
    grid = grid_of({"R": [[1, 2], [3, 4]], "G": [[5, 6], [7, 8]]}, northing=4000002.0)
    path = write_raster(grid, tmp_path / "small.tif", dtype="uint8")
    loaded = load_raster(path)

    assert list(loaded.bands) == ["R", "G"]
    np.testing.assert_array_equal(loaded.bands["G"], [[5, 6], [7, 8]])
    assert loaded.origin == grid.origin
    assert loaded.pixel_size_m == 1.0


def test_band_layout_overrides_descriptions(tmp_path):
    grid = grid_of({"one": [[1.0]], "two": [[2.0]]})
    path = write_raster(grid, tmp_path / "named.tif", compress="deflate")
    assert list(load_raster(path, ["NIR", "R"]).bands) == ["NIR", "R"]
    with pytest.raises(RasterFormatError):
        load_raster(path, ["R"])


def test_uint16_values_survive(tmp_path):
    rng = np.random.default_rng(4)
    values = rng.integers(0, 65535, size=(20, 30))
    path = write_raster(grid_of({"NIR": values}, pixel_size_m=3.0), tmp_path / "wide.tif", dtype="uint16")
    loaded = load_raster(path)
    assert loaded.bands["NIR"].sum() == values.sum()
    assert loaded.footprint.width == 90.0


def test_float_nodata_reads_back_as_nan(tmp_path):
    path = write_raster(grid_of({"GS": [[1.5, np.nan]]}), tmp_path / "f.tif")
    loaded = load_raster(path)
    assert loaded.bands["GS"][0, 0] == 1.5
    assert np.isnan(loaded.bands["GS"][0, 1])


def _plain_tiff(path, dtype="uint8", **extra):
    profile = {"driver": "GTiff", "height": 2, "width": 2, "count": 1, "dtype": dtype}
    profile.update(extra)
    with rasterio.open(path, "w", **profile) as dst:
        dst.write(np.ones((1, 2, 2), dtype=dtype))
    return path


def test_raster_without_georeferencing_is_rejected(tmp_path):
    with pytest.raises(RasterFormatError) as error:
        load_raster(_plain_tiff(tmp_path / "bare.tif"))
    assert error.value.code == "no-georef"


@pytest.mark.parametrize("dtype,extra", [("int16", {}), ("uint8", {"compress": "lzw"})])
def test_unsupported_encodings_are_rejected(tmp_path, dtype, extra):
    georef = {
        "crs": CRS.from_epsg(32615),
        "transform": from_origin(500000.0, 4000000.0, 10.0, 10.0),
    }
    path = _plain_tiff(tmp_path / "odd.tif", dtype, **georef, **extra)
    with pytest.raises(RasterFormatError) as error:
        load_raster(path)
    assert error.value.code == "unsupported-raster"


def test_missing_raster_file(tmp_path):
    with pytest.raises(MissingDataError):
        load_raster(tmp_path / "absent.tif")


# alignment

def test_align_resamples_fine_raster_onto_coarse_lattice():
    fine = grid_of({"R": np.arange(16).reshape(4, 4)}, northing=4000004.0, pixel_size_m=1.0)
    coarse = grid_of({"R": [[1, 2], [3, 4]]}, northing=4000004.0, pixel_size_m=2.0)
    roi = box(500000.0, 4000000.0, 500004.0, 4000004.0)

    aligned_fine, aligned_coarse = align(fine, coarse, roi)

    np.testing.assert_array_equal(aligned_fine.bands["R"], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(aligned_coarse.bands["R"], [[1, 2], [3, 4]])
    assert aligned_fine.pixel_size_m == aligned_coarse.pixel_size_m == 2.0
    assert aligned_fine.origin == aligned_coarse.origin


def test_align_crops_to_roi_and_common_footprint():
    a = grid_of({"R": np.arange(100).reshape(10, 10)}, northing=4000010.0)
    b = grid_of({"R": np.zeros((10, 10))}, easting=500004.0, northing=4000010.0)
    roi = box(500000.0, 4000002.0, 500008.0, 4000010.0)

    aligned_a, aligned_b = align(a, b, roi)

    assert (aligned_a.height, aligned_a.width) == (8, 4)
    assert aligned_a.origin.easting == 500004.0
    assert aligned_a.bands["R"][0, 0] == 4
    assert aligned_b.bands["R"].shape == (8, 4)


def test_align_is_idempotent():
    rng = np.random.default_rng(8)
    a = grid_of({"R": rng.random((12, 12))}, northing=4000012.0)
    b = grid_of({"R": rng.random((4, 4))}, northing=4000012.0, pixel_size_m=3.0)
    roi = box(500000.0, 4000000.0, 500012.0, 4000012.0)
    once_a, once_b = align(a, b, roi)
    twice_a, twice_b = align(once_a, once_b, roi)
    np.testing.assert_array_equal(once_a.bands["R"], twice_a.bands["R"])
    np.testing.assert_array_equal(once_b.bands["R"], twice_b.bands["R"])


def test_align_disjoint_rasters():
    a = grid_of({"R": np.zeros((2, 2))})
    b = grid_of({"R": np.zeros((2, 2))}, easting=600000.0)
    with pytest.raises(MissingDataError) as error:
        align(a, b, box(500000.0, 3999000.0, 700000.0, 4001000.0))
    assert error.value.code == "no-overlap"


def test_align_rejects_mixed_zones():
    a = grid_of({"R": np.zeros((2, 2))})
    with pytest.raises(InvalidInputError):
        align(a, a, box(zone=16))


# band arithmetic

def test_greyscale_weights():
    grid = grid_of({"R": [[255.0, 0.0]], "G": [[0.0, 0.0]], "B": [[0.0, 100.0]]})
    grey = greyscale(grid)
    assert list(grey.bands) == ["GS"]
    np.testing.assert_allclose(grey.bands["GS"], [[76.245, 11.4]])


def test_greyscale_requires_rgb():
    with pytest.raises(RasterFormatError) as error:
        greyscale(grid_of({"R": [[1.0]], "G": [[1.0]]}))
    assert error.value.code == "missing-band"


def test_ndvi_examples():
    grid = grid_of({"NIR": [[200.0, 0.0, 50.0, np.nan]], "R": [[50.0, 0.0, 200.0, 1.0]]})
    values = ndvi(grid).bands["NDVI"]
    np.testing.assert_allclose(values[0, :3], [0.6, 0.0, -0.6])
    assert np.isnan(values[0, 3])


def test_ndvi_bounded_over_random_pixels():
    rng = np.random.default_rng(13)
    nir = rng.integers(0, 65536, size=(1000, 1000)).astype(float)
    red = rng.integers(0, 65536, size=(1000, 1000)).astype(float)
    nir[:10, :10] = 0.0
    red[:10, :10] = 0.0
    values = ndvi(grid_of({"NIR": nir, "R": red})).bands["NDVI"]
    assert np.all((values >= -1.0) & (values <= 1.0))
    assert np.all(values[:10, :10] == 0.0)


def test_diff_is_antisymmetric():
    rng = np.random.default_rng(21)
    before = grid_of({"GS": rng.random((6, 6))})
    after = grid_of({"GS": rng.random((6, 6))})
    forward = diff(before, after).delta
    np.testing.assert_array_equal(forward, -diff(after, before).delta)
    assert not diff(before, before).delta.any()


def test_diff_requires_single_band_on_same_grid():
    a = grid_of({"GS": np.zeros((2, 2))})
    with pytest.raises(InvalidInputError):
        diff(a, grid_of({"GS": np.zeros((3, 2))}))
    with pytest.raises(InvalidInputError):
        diff(a, grid_of({"GS": np.zeros((2, 2))}, easting=500001.0))
    with pytest.raises(InvalidInputError):
        diff(grid_of({"R": np.zeros((2, 2)), "G": np.zeros((2, 2))}), a)


def test_band_difference_uses_requested_band():
    before = grid_of({"R": [[10.0]], "G": [[20.0]], "B": [[30.0]]})
    after = grid_of({"R": [[15.0]], "G": [[5.0]], "B": [[30.0]]})
    change = band_difference(before, after, "G")
    assert change.kind == ChangeKind.GREEN
    assert change.delta[0, 0] == -15.0
    with pytest.raises(InvalidInputError):
        band_difference(before, after, "NIR")


# change statistics

def test_change_stats_counts_pixels_above_threshold():
    delta = np.zeros((10, 10))
    delta.flat[[3, 14, 25, 36, 47, 58, 69]] = [5.0, -5.0, 5.0, 5.0, -5.0, 5.0, 5.0]
    delta[9, 9] = 1.0  # at threshold, unchanged
    stats = change_stats(_change(delta, pixel_size_m=10.0), 1.0)

    assert stats.changed_count == 7
    assert stats.changed_fraction == 0.07
    assert stats.changed_area_m2 == 700.0
    assert stats.pixel_count == 100
    assert stats.mean_abs_delta == pytest.approx(36.0 / 100)


def test_change_stats_ignores_nodata():
    stats = change_stats(_change([[np.nan, 10.0], [0.0, np.nan]]), 2.0)
    assert stats.pixel_count == 2
    assert stats.changed_fraction == 0.5


def test_changed_fraction_is_monotone_in_threshold():
    rng = np.random.default_rng(17)
    change = _change(rng.normal(0, 20, size=(50, 50)))
    fractions = [change_stats(change, t).changed_fraction for t in (1, 5, 10, 20, 40, 80)]
    assert fractions == sorted(fractions, reverse=True)


def test_change_stats_errors():
    with pytest.raises(MissingDataError) as error:
        change_stats(_change([[np.nan]]), 1.0)
    assert error.value.code == "empty-changemap"
    with pytest.raises(InvalidInputError):
        change_stats(_change([[1.0]]), 0.0)


# change map outputs

def test_change_map_tif_round_trip(tmp_path):
    change = _change([[1.5, np.nan], [-2.0, 0.0]], kind=ChangeKind.NDVI)
    loaded = load_change_map(write_change_map(change, tmp_path / "change_ndvi.tif"))
    assert loaded.kind == ChangeKind.NDVI
    np.testing.assert_array_equal(loaded.delta, change.delta)
    assert loaded.origin == change.origin


def test_pgm_preview_stretches_and_blanks_nodata(tmp_path):
    path = write_pgm_preview(_change([[-10.0, 0.0], [10.0, np.nan]]), tmp_path / "change_greyscale.pgm")

    with Image.open(path) as image:
        assert image.mode == "L"
        pixels = np.asarray(image)
    np.testing.assert_array_equal(pixels, [[0, 128], [255, 0]])
    sidecar = (tmp_path / "change_greyscale.pgm.txt").read_text(encoding="utf-8").splitlines()
    assert sidecar == ["kind greyscale", "min -10", "max 10", "nodata 0"]


def test_greyscale_scales_with_brightness():
    rng = np.random.default_rng(23)
    bands = {name: rng.uniform(0.0, 255.0, size=(16, 16)) for name in ("R", "G", "B")}
    base = greyscale(grid_of(bands)).bands["GS"]
    for k in (0.5, 2.0, 7.25):
        scaled = greyscale(grid_of({name: k * values for name, values in bands.items()})).bands["GS"]
        np.testing.assert_allclose(scaled, k * base, rtol=1e-12)


def test_all_nodata_inputs_propagate_to_empty_changemap():
    blank = np.full((3, 3), np.nan)
    nodata = grid_of({"R": blank, "G": blank, "B": blank, "NIR": blank})
    valid = grid_of({name: np.full((3, 3), 40.0) for name in ("R", "G", "B", "NIR")})

    grey = greyscale(nodata)
    assert np.isnan(grey.bands["GS"]).all()
    assert np.isnan(ndvi(nodata).bands["NDVI"]).all()

    for change in (diff(greyscale(valid), grey), diff(ndvi(valid), ndvi(nodata), ChangeKind.NDVI)):
        assert np.isnan(change.delta).all()
        with pytest.raises(MissingDataError) as error:
            change_stats(change, 1.0)
        assert error.value.code == "empty-changemap"
