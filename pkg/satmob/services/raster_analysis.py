import logging
from typing import Tuple

import numpy as np

from ..exceptions import InvalidInputError, MissingDataError, RasterFormatError
from ..models import BoundingBox, ChangeKind, ChangeMap, ChangeStats, ProjPoint, RasterGrid

logger = logging.getLogger(__name__)

GREYSCALE_WEIGHTS = {"R": 0.299, "G": 0.587, "B": 0.114}
BAND_KINDS = {"R": ChangeKind.RED, "G": ChangeKind.GREEN, "B": ChangeKind.BLUE}
_EDGE_EPS = 1e-9


def _require(grid: RasterGrid, *names: str) -> None:
    missing = [name for name in names if name not in grid.bands]
    if missing:
        raise RasterFormatError(f"raster lacks band(s) {missing}, has {sorted(grid.bands)}", code="missing-band")


def _sample_indices(grid: RasterGrid, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column of the source pixel containing each target centre; edges go right/down."""
    cols = np.floor((xs - grid.origin.easting) / grid.pixel_size_m + _EDGE_EPS).astype(int)
    rows = np.floor((grid.origin.northing - ys) / grid.pixel_size_m + _EDGE_EPS).astype(int)
    return np.clip(rows, 0, grid.height - 1), np.clip(cols, 0, grid.width - 1)


def align(a: RasterGrid, b: RasterGrid, roi: BoundingBox) -> Tuple[RasterGrid, RasterGrid]:
    """
    Crop both rasters to roi and their common footprint on the lattice of the
    coarser raster (a on ties), resampling by nearest neighbour.

    Target pixels are the coarse pixels whose centres fall inside the
    intersection; both outputs share dimensions, origin and pixel size.
    """
    if not (a.footprint.same_crs(b.footprint) and a.footprint.same_crs(roi)):
        raise InvalidInputError("rasters and ROI must share one UTM zone")
    overlap = roi.intersection(a.footprint)
    overlap = overlap.intersection(b.footprint) if overlap is not None else None
    if overlap is None:
        raise MissingDataError("rasters do not overlap inside the ROI", code="no-overlap")

    coarse = a if a.pixel_size_m >= b.pixel_size_m else b
    px = coarse.pixel_size_m
    centre_x = coarse.origin.easting + (np.arange(coarse.width) + 0.5) * px
    centre_y = coarse.origin.northing - (np.arange(coarse.height) + 0.5) * px
    cols = np.flatnonzero((centre_x >= overlap.min_e) & (centre_x < overlap.max_e))
    rows = np.flatnonzero((centre_y > overlap.min_n) & (centre_y <= overlap.max_n))
    if cols.size == 0 or rows.size == 0:
        raise MissingDataError("overlap is smaller than one pixel", code="no-overlap")

    xs = centre_x[cols]
    ys = centre_y[rows]
    origin = ProjPoint(
        easting=coarse.origin.easting + cols[0] * px,
        northing=coarse.origin.northing - rows[0] * px,
        zone=coarse.origin.zone,
        hemisphere=coarse.origin.hemisphere,
    )

    def resample(grid: RasterGrid) -> RasterGrid:
        src_rows, _ = _sample_indices(grid, xs[:1], ys)
        _, src_cols = _sample_indices(grid, xs, ys[:1])
        bands = {name: band[np.ix_(src_rows, src_cols)] for name, band in grid.bands.items()}
        return RasterGrid(bands=bands, origin=origin, pixel_size_m=px, nodata_value=grid.nodata_value)

    aligned_a, aligned_b = resample(a), resample(b)
    logger.info(f"aligned to {aligned_a.width}x{aligned_a.height} px at {px} m")
    return aligned_a, aligned_b


def greyscale(r: RasterGrid) -> RasterGrid:
    """Luminosity 0.299 R + 0.587 G + 0.114 B."""
    _require(r, *GREYSCALE_WEIGHTS)
    grey = sum(weight * r.bands[name] for name, weight in GREYSCALE_WEIGHTS.items())
    return RasterGrid(bands={"GS": grey}, origin=r.origin, pixel_size_m=r.pixel_size_m)


def ndvi(r: RasterGrid) -> RasterGrid:
    """(NIR - R) / (NIR + R) on float values, 0 where NIR + R is 0, clipped to [-1, 1]."""
    _require(r, "NIR", "R")
    nir = r.bands["NIR"].astype(np.float64)
    red = r.bands["R"].astype(np.float64)
    total = nir + red
    with np.errstate(divide="ignore", invalid="ignore"):
        index = np.where(total == 0, 0.0, (nir - red) / total)
    return RasterGrid(bands={"NDVI": np.clip(index, -1.0, 1.0)}, origin=r.origin, pixel_size_m=r.pixel_size_m)


def _single_band(grid: RasterGrid) -> np.ndarray:
    if len(grid.bands) != 1:
        raise InvalidInputError(f"expected a single-band raster, got bands {sorted(grid.bands)}")
    return next(iter(grid.bands.values()))


def _check_same_grid(before: RasterGrid, after: RasterGrid) -> None:
    if (before.height, before.width) != (after.height, after.width):
        raise InvalidInputError(
            f"raster shapes differ: {before.height}x{before.width} vs {after.height}x{after.width}"
        )
    if before.origin != after.origin or before.pixel_size_m != after.pixel_size_m:
        raise InvalidInputError("rasters are not on the same grid; align them first")


def diff(before: RasterGrid, after: RasterGrid, kind: ChangeKind = ChangeKind.GREYSCALE) -> ChangeMap:
    """Per-pixel after - before of two aligned single-band rasters; NaN where either is nodata."""
    _check_same_grid(before, after)
    delta = _single_band(after) - _single_band(before)
    return ChangeMap(delta=delta, kind=kind, origin=after.origin, pixel_size_m=after.pixel_size_m)


def band_difference(before: RasterGrid, after: RasterGrid, band: str) -> ChangeMap:
    """Difference of one colour band (R, G or B) of two aligned rasters."""
    if band not in BAND_KINDS:
        raise InvalidInputError(f"band must be one of {sorted(BAND_KINDS)}, got {band}")
    _require(before, band)
    _require(after, band)
    _check_same_grid(before, after)
    delta = after.bands[band] - before.bands[band]
    return ChangeMap(delta=delta, kind=BAND_KINDS[band], origin=after.origin, pixel_size_m=after.pixel_size_m)


def change_stats(change: ChangeMap, threshold: float) -> ChangeStats:
    """Summary over valid pixels; a pixel has changed when |delta| > threshold."""
    if not threshold > 0:
        raise InvalidInputError(f"change threshold must be positive, got {threshold}")
    valid = change.delta[~np.isnan(change.delta)]
    if valid.size == 0:
        raise MissingDataError(f"{change.kind.value} change map has no valid pixels", code="empty-changemap")
    magnitude = np.abs(valid)
    changed = int(np.count_nonzero(magnitude > threshold))
    return ChangeStats(
        kind=change.kind,
        threshold=threshold,
        mean_abs_delta=float(magnitude.mean()),
        changed_fraction=changed / valid.size,
        changed_count=changed,
        changed_area_m2=changed * change.pixel_size_m**2,
        pixel_count=int(valid.size),
    )
