"""
WGS84 <-> UTM projection, great-circle distance and ROI boxes.

The projection uses Krüger's n-series for the transverse Mercator, truncated at
sixth order, which is accurate to well under a millimetre inside a zone. Arrays
are supported throughout; the scalar operations delegate to the array forms.
"""
import logging
import math
from typing import Tuple

import numpy as np

from ..exceptions import InvalidInputError
from ..models import BoundingBox, GeoPoint, Hemisphere, ProjPoint

logger = logging.getLogger(__name__)

# WGS84
A_AXIS = 6378137.0
FLATTENING = 1 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500000.0
FALSE_NORTHING_SOUTH = 10000000.0
EARTH_RADIUS_M = 6371000.0
MAX_ABS_LAT = 84.0

_N = FLATTENING / (2 - FLATTENING)
_E = math.sqrt(FLATTENING * (2 - FLATTENING))
_RECTIFYING_A = A_AXIS / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)

_ALPHA = (
    _N / 2 - 2 * _N**2 / 3 + 5 * _N**3 / 16 + 41 * _N**4 / 180 - 127 * _N**5 / 288 + 7891 * _N**6 / 37800,
    13 * _N**2 / 48 - 3 * _N**3 / 5 + 557 * _N**4 / 1440 + 281 * _N**5 / 630 - 1983433 * _N**6 / 1935360,
    61 * _N**3 / 240 - 103 * _N**4 / 140 + 15061 * _N**5 / 26880 + 167603 * _N**6 / 181440,
    49561 * _N**4 / 161280 - 179 * _N**5 / 168 + 6601661 * _N**6 / 7257600,
    34729 * _N**5 / 80640 - 3418889 * _N**6 / 1995840,
    212378941 * _N**6 / 319334400,
)
_BETA = (
    _N / 2 - 2 * _N**2 / 3 + 37 * _N**3 / 96 - _N**4 / 360 - 81 * _N**5 / 512 + 96199 * _N**6 / 604800,
    _N**2 / 48 + _N**3 / 15 - 437 * _N**4 / 1440 + 46 * _N**5 / 105 - 1118711 * _N**6 / 3870720,
    17 * _N**3 / 480 - 37 * _N**4 / 840 - 209 * _N**5 / 4480 + 5569 * _N**6 / 90720,
    4397 * _N**4 / 161280 - 11 * _N**5 / 504 - 830251 * _N**6 / 7257600,
    4583 * _N**5 / 161280 - 108847 * _N**6 / 3991680,
    20648693 * _N**6 / 638668800,
)


def zone_for_longitude(lon: float) -> int:
    return min(int((lon + 180.0) // 6) + 1, 60)


def central_meridian(zone: int) -> float:
    return (zone - 1) * 6 - 180 + 3


def _check_zone(zone: int) -> None:
    if not 1 <= zone <= 60:
        raise InvalidInputError(f"UTM zone {zone} out of range 1..60")


def project_lonlat_arrays(lon, lat, zone: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project longitude/latitude arrays (degrees) into the given UTM zone.

    Returns:
        (easting, northing) arrays in metres; southern latitudes carry the
        10,000 km false northing.
    """
    _check_zone(zone)
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
        raise InvalidInputError("non-finite coordinate")
    if np.any(np.abs(lat) >= MAX_ABS_LAT):
        raise InvalidInputError(f"latitude outside the UTM range (-{MAX_ABS_LAT}, {MAX_ABS_LAT})")

    phi = np.radians(lat)
    lam = np.radians(lon - central_meridian(zone))

    tau = np.tan(phi)
    sigma = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1 + tau**2)))
    tau_conf = tau * np.sqrt(1 + sigma**2) - sigma * np.sqrt(1 + tau**2)

    xi_p = np.arctan2(tau_conf, np.cos(lam))
    eta_p = np.arcsinh(np.sin(lam) / np.sqrt(tau_conf**2 + np.cos(lam) ** 2))

    xi = xi_p.copy()
    eta = eta_p.copy()
    for j, alpha in enumerate(_ALPHA, start=1):
        xi += alpha * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
        eta += alpha * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)

    easting = K0 * _RECTIFYING_A * eta + FALSE_EASTING
    northing = K0 * _RECTIFYING_A * xi
    northing = np.where(lat < 0, northing + FALSE_NORTHING_SOUTH, northing)
    return easting, northing


def inverse_utm_arrays(easting, northing, zone: int, hemisphere: Hemisphere = Hemisphere.NORTH):
    """Inverse of project_lonlat_arrays; returns (lon, lat) in degrees."""
    _check_zone(zone)
    easting = np.asarray(easting, dtype=float)
    northing = np.asarray(northing, dtype=float)
    if not (np.all(np.isfinite(easting)) and np.all(np.isfinite(northing))):
        raise InvalidInputError("non-finite projected coordinate")

    y = northing - FALSE_NORTHING_SOUTH if hemisphere == Hemisphere.SOUTH else northing
    xi = y / (K0 * _RECTIFYING_A)
    eta = (easting - FALSE_EASTING) / (K0 * _RECTIFYING_A)

    xi_p = xi.copy()
    eta_p = eta.copy()
    for j, beta in enumerate(_BETA, start=1):
        xi_p -= beta * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= beta * np.cos(2 * j * xi) * np.sinh(2 * j * eta)

    sinh_eta = np.sinh(eta_p)
    cos_xi = np.cos(xi_p)
    tau_conf = np.sin(xi_p) / np.sqrt(sinh_eta**2 + cos_xi**2)

    # Newton iteration for tan(phi) from the conformal tan
    tau = tau_conf.copy()
    for _ in range(10):
        sigma = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1 + tau**2)))
        tau_i = tau * np.sqrt(1 + sigma**2) - sigma * np.sqrt(1 + tau**2)
        delta = (
            (tau_conf - tau_i) / np.sqrt(1 + tau_i**2)
            * (1 + (1 - _E**2) * tau**2) / ((1 - _E**2) * np.sqrt(1 + tau**2))
        )
        tau = tau + delta
        if np.all(np.abs(delta) < 1e-12):
            break

    lat = np.degrees(np.arctan(tau))
    lon = np.degrees(np.arctan2(sinh_eta, cos_xi)) + central_meridian(zone)
    return lon, lat


def project_to_utm(point: GeoPoint, zone: int) -> ProjPoint:
    easting, northing = project_lonlat_arrays(point.lon, point.lat, zone)
    hemisphere = Hemisphere.SOUTH if point.lat < 0 else Hemisphere.NORTH
    try:
        return ProjPoint(easting=float(easting), northing=float(northing), zone=zone, hemisphere=hemisphere)
    except ValueError as e:
        raise InvalidInputError(f"({point.lon}, {point.lat}) does not project into zone {zone}: {e}") from e


def inverse_utm(point: ProjPoint) -> GeoPoint:
    lon, lat = inverse_utm_arrays(point.easting, point.northing, point.zone, point.hemisphere)
    lon = float(lon)
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return GeoPoint(lon=lon, lat=float(lat))


def haversine_arrays(lon1, lat1, lon2, lat2) -> np.ndarray:
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6,371 km."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(max(h, 0.0), 1.0)))


def bbox_from_centroid(center: ProjPoint, side_m: float) -> BoundingBox:
    if not side_m > 0 or not math.isfinite(side_m):
        raise InvalidInputError(f"box side must be positive, got {side_m}")
    half = side_m / 2.0
    return BoundingBox(
        min_e=center.easting - half,
        min_n=center.northing - half,
        max_e=center.easting + half,
        max_n=center.northing + half,
        zone=center.zone,
        hemisphere=center.hemisphere,
    )


def bbox_to_geo_envelope(box: BoundingBox) -> Tuple[float, float, float, float]:
    """Lon/lat envelope (min_lon, min_lat, max_lon, max_lat) of a projected box."""
    eastings = [box.min_e, box.max_e, box.min_e, box.max_e]
    northings = [box.min_n, box.min_n, box.max_n, box.max_n]
    lon, lat = inverse_utm_arrays(eastings, northings, box.zone, box.hemisphere)
    return float(lon.min()), float(lat.min()), float(lon.max()), float(lat.max())
