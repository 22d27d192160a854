"""
GeoTIFF subset reader/writer and PGM previews.

Supported input: GeoTIFF, uncompressed or deflate, uint8/uint16/float32
samples, striped or tiled, north-up with square pixels, CRS a WGS84 UTM zone
(EPSG 326zz / 327zz). See docs/formats.md.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import rasterio
from PIL import Image
from rasterio.crs import CRS
from rasterio.errors import RasterioIOError
from rasterio.transform import from_origin

from ..exceptions import MissingDataError, RasterFormatError
from ..models import ChangeMap, Hemisphere, ProjPoint, RasterGrid

logger = logging.getLogger(__name__)

SUPPORTED_DTYPES = ("uint8", "uint16", "float32")
SUPPORTED_COMPRESSION = (None, "deflate")


def utm_epsg(zone: int, hemisphere: Hemisphere) -> int:
    return (32700 if hemisphere == Hemisphere.SOUTH else 32600) + zone


def _zone_from_crs(crs: CRS, path: Path):
    epsg = crs.to_epsg()
    if epsg is not None and 32601 <= epsg <= 32660:
        return epsg - 32600, Hemisphere.NORTH
    if epsg is not None and 32701 <= epsg <= 32760:
        return epsg - 32700, Hemisphere.SOUTH
    raise RasterFormatError(f"{path.name}: CRS {crs} is not a WGS84 UTM zone")


def _compression_name(src) -> Optional[str]:
    compression = src.compression
    if compression is None:
        return None
    return getattr(compression, "name", str(compression)).lower()


def load_raster(path: Union[str, Path], band_layout: Optional[Sequence[str]] = None) -> RasterGrid:
    """
    Read a GeoTIFF into a RasterGrid.

    Bands are named from band_layout when given, otherwise from the band
    descriptions stored in the file (falling back to B1, B2, ...). Values are
    returned as float64 with nodata pixels set to NaN.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingDataError(f"raster {path} not found", code="missing-file")
    try:
        src = rasterio.open(path)
    except RasterioIOError as e:
        raise RasterFormatError(f"{path.name}: not a readable raster ({e})") from e

    with src:
        if src.driver != "GTiff":
            raise RasterFormatError(f"{path.name}: driver {src.driver} is not supported")
        unsupported = sorted(set(src.dtypes) - set(SUPPORTED_DTYPES))
        if unsupported:
            raise RasterFormatError(f"{path.name}: sample type {unsupported[0]} is not supported")
        compression = _compression_name(src)
        if compression not in SUPPORTED_COMPRESSION:
            raise RasterFormatError(f"{path.name}: compression {compression} is not supported")
        if src.crs is None or src.transform.is_identity:
            raise RasterFormatError(f"{path.name}: no georeferencing", code="no-georef")

        transform = src.transform
        if transform.b != 0 or transform.d != 0:
            raise RasterFormatError(f"{path.name}: rotated rasters are not supported")
        if transform.e >= 0 or not np.isclose(transform.a, -transform.e, rtol=1e-9, atol=0.0):
            raise RasterFormatError(f"{path.name}: pixels must be square and north-up")
        zone, hemisphere = _zone_from_crs(src.crs, path)

        names: List[str]
        if band_layout is not None:
            if len(band_layout) != src.count:
                raise RasterFormatError(
                    f"{path.name}: band layout lists {len(band_layout)} bands, file has {src.count}"
                )
            names = list(band_layout)
        elif all(src.descriptions):
            names = list(src.descriptions)
        else:
            names = [f"B{i}" for i in range(1, src.count + 1)]

        data = src.read().astype(np.float64)
        nodata = src.nodata
        if nodata is not None and not np.isnan(nodata):
            data[data == nodata] = np.nan

        grid = RasterGrid(
            bands={name: data[i] for i, name in enumerate(names)},
            origin=ProjPoint(easting=transform.c, northing=transform.f, zone=zone, hemisphere=hemisphere),
            pixel_size_m=float(transform.a),
            nodata_value=nodata,
        )
    logger.debug(f"loaded {path.name}: {grid.width}x{grid.height} px, bands {names}")
    return grid


def write_raster(
    grid: RasterGrid,
    path: Union[str, Path],
    dtype: str = "float32",
    compress: Optional[str] = None,
) -> Path:
    """Write a RasterGrid as GeoTIFF; float output stores nodata as NaN."""
    if dtype not in SUPPORTED_DTYPES:
        raise RasterFormatError(f"cannot write sample type {dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    profile = {
        "driver": "GTiff",
        "height": grid.height,
        "width": grid.width,
        "count": len(grid.bands),
        "dtype": dtype,
        "crs": CRS.from_epsg(utm_epsg(grid.origin.zone, grid.origin.hemisphere)),
        "transform": from_origin(grid.origin.easting, grid.origin.northing, grid.pixel_size_m, grid.pixel_size_m),
    }
    if dtype == "float32":
        profile["nodata"] = float("nan")
    elif grid.nodata_value is not None:
        profile["nodata"] = grid.nodata_value
    if compress:
        profile["compress"] = compress

    with rasterio.open(path, "w", **profile) as dst:
        for index, (name, band) in enumerate(grid.bands.items(), start=1):
            if dtype != "float32" and grid.nodata_value is not None:
                band = np.where(np.isnan(band), grid.nodata_value, band)
            dst.write(band.astype(dtype), index)
            dst.set_band_description(index, name)
    return path


def write_change_map(change: ChangeMap, path: Union[str, Path]) -> Path:
    grid = RasterGrid(bands={change.kind.value: change.delta}, origin=change.origin, pixel_size_m=change.pixel_size_m)
    return write_raster(grid, path)


def load_change_map(path: Union[str, Path]) -> ChangeMap:
    grid = load_raster(path)
    (kind, delta), = grid.bands.items()
    return ChangeMap(delta=delta, kind=kind, origin=grid.origin, pixel_size_m=grid.pixel_size_m)


def write_pgm_preview(change: ChangeMap, path: Union[str, Path]) -> Path:
    """
    8-bit greyscale preview with a linear min-max stretch; nodata pixels are 0.
    The stretch is recorded in a sidecar `<name>.pgm.txt`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    delta = change.delta
    valid = ~np.isnan(delta)
    pixels = np.zeros(delta.shape, dtype=np.uint8)
    if valid.any():
        low, high = float(delta[valid].min()), float(delta[valid].max())
        if high > low:
            pixels[valid] = np.rint((delta[valid] - low) / (high - low) * 255).astype(np.uint8)
    else:
        low = high = float("nan")

    Image.fromarray(pixels).save(path, format="PPM")
    sidecar = path.with_name(path.name + ".txt")
    sidecar.write_text(
        f"kind {change.kind.value}\nmin {low:.6g}\nmax {high:.6g}\nnodata 0\n",
        encoding="utf-8",
    )
    return path
