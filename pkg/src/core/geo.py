"""
Geodetic and pixel-space geometry primitives.

Point buffering uses a local equirectangular model: one degree of latitude
is 111320 m everywhere and one degree of longitude is 111320·cos(lat) m.
At a 25 m radius the error against a geodesic buffer is far below the
0.5 m ground sample distance of the imagery.

Geotransforms are north-up only. Their origin is the center of the
upper-left pixel (world file convention). Pixel boxes use pixel-edge
coordinates, so pixel (0, 0) covers [0, 1) x [0, 1).
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import (
    DegenerateBox,
    InvalidRadius,
    LatitudeOutOfRange,
    NonFiniteInput,
    ValidationError,
)

METERS_PER_DEGREE = 111320.0
MAX_BUFFER_LATITUDE = 89.0


def _require_finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise NonFiniteInput(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate in decimal degrees."""

    lon: float
    lat: float

    def __post_init__(self):
        _require_finite("coordinate", self.lon, self.lat)
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class GeoBox:
    """Axis-aligned geographic box."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        _require_finite("box bound", self.min_lon, self.min_lat, self.max_lon, self.max_lat)
        if not (self.min_lon < self.max_lon and self.min_lat < self.max_lat):
            raise DegenerateBox(
                f"geo box ({self.min_lon}, {self.min_lat}, {self.max_lon}, {self.max_lat}) is empty or inverted"
            )

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)

    def contains(self, p: GeoPoint) -> bool:
        """Boundary-inclusive containment."""
        return self.min_lon <= p.lon <= self.max_lon and self.min_lat <= p.lat <= self.max_lat


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine georeferencing of a raster."""

    origin_x: float
    origin_y: float
    px_size_x: float
    px_size_y: float

    def __post_init__(self):
        _require_finite("geotransform term", self.origin_x, self.origin_y, self.px_size_x, self.px_size_y)
        if self.px_size_x <= 0:
            raise ValidationError(f"px_size_x must be positive, got {self.px_size_x}")
        if self.px_size_y >= 0:
            raise ValidationError(f"px_size_y must be negative, got {self.px_size_y}")

    def window(self, x: float, y: float) -> "GeoTransform":
        """Transform of a sub-window whose upper-left pixel is (x, y) in this raster."""
        return GeoTransform(
            origin_x=self.origin_x + x * self.px_size_x,
            origin_y=self.origin_y + y * self.px_size_y,
            px_size_x=self.px_size_x,
            px_size_y=self.px_size_y,
        )

    def gsd_m(self, center_lat: float) -> float:
        """Ground sample distance in meters along x at the given latitude."""
        return self.px_size_x * METERS_PER_DEGREE * math.cos(math.radians(center_lat))


@dataclass(frozen=True)
class PixelBox:
    """Continuous axis-aligned box in pixel-edge coordinates (y grows downward)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        _require_finite("pixel box term", self.x, self.y, self.w, self.h)
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBox(f"pixel box has non-positive size ({self.w} x {self.h})")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def translate(self, dx: float, dy: float) -> "PixelBox":
        return PixelBox(self.x + dx, self.y + dy, self.w, self.h)

    def clip(self, width: float, height: float) -> "PixelBox":
        """Clip to [0, width] x [0, height]; raises DegenerateBox if nothing remains."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return PixelBox(x1, y1, x2 - x1, y2 - y1)

    def as_xywh(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def buffer_point(p: GeoPoint, radius_m: float) -> GeoBox:
    """
    Axis-aligned box around a point at the given radius.

    Args:
        p: Center point
        radius_m: Buffer radius in meters

    Returns:
        GeoBox of half-height radius_m/111320 degrees and half-width
        radius_m/(111320·cos(lat)) degrees

    Raises:
        InvalidRadius: radius is not a positive finite number
        LatitudeOutOfRange: |lat| >= 89
    """
    if not math.isfinite(radius_m) or radius_m <= 0:
        raise InvalidRadius(f"buffer radius must be a positive finite number, got {radius_m!r}")
    if abs(p.lat) >= MAX_BUFFER_LATITUDE:
        raise LatitudeOutOfRange(f"latitude {p.lat} too close to a pole for buffering")

    dlat = radius_m / METERS_PER_DEGREE
    dlon = radius_m / (METERS_PER_DEGREE * math.cos(math.radians(p.lat)))
    return GeoBox(p.lon - dlon, p.lat - dlat, p.lon + dlon, p.lat + dlat)


def geo_to_pixel(gt: GeoTransform, p: GeoPoint) -> Tuple[float, float]:
    """Continuous (col, row) of a point; (0, 0) is the center of the upper-left pixel."""
    col = (p.lon - gt.origin_x) / gt.px_size_x
    row = (p.lat - gt.origin_y) / gt.px_size_y
    return col, row


def pixel_to_geo(gt: GeoTransform, col: float, row: float) -> GeoPoint:
    """Inverse of geo_to_pixel."""
    return GeoPoint(gt.origin_x + col * gt.px_size_x, gt.origin_y + row * gt.px_size_y)


def geobox_to_pixelbox(gt: GeoTransform, gb: GeoBox) -> PixelBox:
    """
    Project a geographic box into continuous pixel-edge coordinates.

    The four corners are transformed and their axis-aligned hull is taken.
    No rounding happens here.
    """
    corners = [
        geo_to_pixel(gt, GeoPoint(lon, lat))
        for lon in (gb.min_lon, gb.max_lon)
        for lat in (gb.min_lat, gb.max_lat)
    ]
    cols = [c for c, _ in corners]
    rows = [r for _, r in corners]
    # center-based pixel indices -> edge coordinates
    x1, x2 = min(cols) + 0.5, max(cols) + 0.5
    y1, y2 = min(rows) + 0.5, max(rows) + 0.5
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        raise DegenerateBox(f"projected box has non-positive size ({x2 - x1} x {y2 - y1})")
    return PixelBox(x1, y1, x2 - x1, y2 - y1)


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def geo_distances_m(p: GeoPoint, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    """Equirectangular distances in meters from p to many points, each at its pair's mean latitude."""
    lons = np.asarray(lons, dtype=float)
    lats = np.asarray(lats, dtype=float)
    mean_lat = np.radians((lats + p.lat) / 2.0)
    dx = (lons - p.lon) * METERS_PER_DEGREE * np.cos(mean_lat)
    dy = (lats - p.lat) * METERS_PER_DEGREE
    return np.hypot(dx, dy)


def geo_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    """Equirectangular distance in meters, evaluated at the mean latitude."""
    return float(geo_distances_m(a, np.array([b.lon]), np.array([b.lat]))[0])
