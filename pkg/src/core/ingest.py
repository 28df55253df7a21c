"""
OSM feature ingestion.

Parses GeoJSON FeatureCollections exported from OpenStreetMap, keeps the
tower points, crops them to the study region, removes points inside urban
centre polygons and thins out duplicate mappings of the same tower.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidPolygon, MalformedDocument, NotAFeatureCollection, ValidationError
from .geo import GeoBox, GeoPoint, geo_distances_m

logger = logging.getLogger(__name__)

Document = Union[bytes, str, Mapping[str, Any]]
Tag = Tuple[str, str]

DEFAULT_TAG_KEY = "man_made"
DEFAULT_TAG_VALUES = frozenset({"tower", "communications_tower"})
DEFAULT_MIN_SEPARATION_M = 10.0
COORDINATE_DECIMALS = 7

# Tolerance for treating a point as lying on a polygon edge (degrees²).
_EDGE_EPS = 1e-12


@dataclass(frozen=True)
class TowerFeature:
    """An OSM point with its tags."""

    id: str
    point: GeoPoint
    tags: Tuple[Tag, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValidationError("feature id must be non-empty")

    def tag(self, key: str) -> Optional[str]:
        for k, v in self.tags:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class StudyRegion(GeoBox):
    """Area of interest; defaults cover 27°S-12°N, 20°E-57°E."""

    min_lon: float = 20.0
    min_lat: float = -27.0
    max_lon: float = 57.0
    max_lat: float = 12.0


@dataclass(eq=False)
class Polygon:
    """Outer ring plus holes, each an (N, 2) array of lon/lat with first == last."""

    outer: np.ndarray
    holes: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        self.outer = _validate_ring(self.outer)
        self.holes = tuple(_validate_ring(h) for h in self.holes)
        self.bounds = (
            float(self.outer[:, 0].min()),
            float(self.outer[:, 1].min()),
            float(self.outer[:, 0].max()),
            float(self.outer[:, 1].max()),
        )

    @classmethod
    def from_coordinates(cls, rings: Sequence[Sequence[Sequence[float]]]) -> "Polygon":
        """Build from GeoJSON Polygon coordinates (outer ring first)."""
        if not rings:
            raise InvalidPolygon("polygon has no rings")
        arrays = [np.asarray([(float(c[0]), float(c[1])) for c in ring], dtype=float) for ring in rings]
        return cls(arrays[0], tuple(arrays[1:]))


@dataclass
class UrbanMask:
    """Urban centre polygons used to exclude towers."""

    polygons: List[Polygon] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.polygons)


@dataclass(frozen=True)
class TagFilter:
    """
    Feature tag predicate.

    A feature passes when properties[key] is one of values (exact,
    case-sensitive) and every extra key=value pair also matches.
    """

    key: str = DEFAULT_TAG_KEY
    values: FrozenSet[str] = DEFAULT_TAG_VALUES
    extra: Tuple[Tag, ...] = ()

    def matches(self, properties: Mapping[str, Any]) -> bool:
        if properties.get(self.key) not in self.values:
            return False
        return all(properties.get(k) == v for k, v in self.extra)


@dataclass
class ParseResult:
    """Features kept by parse_features and what was dropped."""

    features: List[TowerFeature]
    dropped_geometry: int = 0
    dropped_tags: int = 0
    dropped_invalid: int = 0

    @property
    def total_seen(self) -> int:
        return len(self.features) + self.dropped_geometry + self.dropped_tags + self.dropped_invalid


@dataclass
class ExclusionResult:
    features: List[TowerFeature]
    removed: int = 0


def parse_tag_pairs(pairs: Iterable[str]) -> Tuple[Tag, ...]:
    """Turn ["tower:type=communication", ...] into (key, value) pairs."""
    parsed = []
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValidationError(f"tag predicate must look like key=value, got {pair!r}")
        parsed.append((key.strip(), value.strip()))
    return tuple(parsed)


def _load_collection(document: Document) -> Mapping[str, Any]:
    if isinstance(document, Mapping):
        data = document
    else:
        try:
            data = json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError, TypeError) as e:
            raise MalformedDocument(f"not valid GeoJSON: {e}") from e
    if not isinstance(data, Mapping) or data.get("type") != "FeatureCollection":
        raise NotAFeatureCollection("document is not a GeoJSON FeatureCollection")
    features = data.get("features")
    if not isinstance(features, list):
        raise MalformedDocument("FeatureCollection has no 'features' array")
    return data


def _feature_id(feature: Mapping[str, Any], properties: Mapping[str, Any]) -> Optional[str]:
    candidates = [feature.get("id")] + [properties.get(k) for k in ("@id", "osm_id", "id")]
    for candidate in candidates:
        if candidate is not None and str(candidate):
            return str(candidate)
    return None


def _feature_tags(properties: Mapping[str, Any]) -> Tuple[Tag, ...]:
    return tuple(
        sorted(
            (str(k), str(v))
            for k, v in properties.items()
            if v is not None and not isinstance(v, (dict, list))
        )
    )


def parse_features(document: Document, tag_filter: Optional[TagFilter] = None) -> ParseResult:
    """
    Extract tower points from a GeoJSON FeatureCollection.

    Args:
        document: Raw bytes/text of the document or an already decoded mapping
        tag_filter: Tag predicate, defaults to man_made in {tower, communications_tower}

    Returns:
        ParseResult with the kept features in document order and drop counters

    Raises:
        MalformedDocument: input is not valid JSON
        NotAFeatureCollection: input is JSON but not a FeatureCollection
    """
    tag_filter = tag_filter or TagFilter()
    data = _load_collection(document)
    result = ParseResult(features=[])

    for feature in data["features"]:
        if not isinstance(feature, Mapping):
            result.dropped_invalid += 1
            continue
        geometry = feature.get("geometry") or {}
        properties = feature.get("properties") or {}
        if not isinstance(geometry, Mapping) or geometry.get("type") != "Point":
            result.dropped_geometry += 1
            continue
        if not isinstance(properties, Mapping) or not tag_filter.matches(properties):
            result.dropped_tags += 1
            continue

        feature_id = _feature_id(feature, properties)
        try:
            coords = geometry.get("coordinates")
            point = GeoPoint(float(coords[0]), float(coords[1]))
        except (TypeError, IndexError, ValueError):
            point = None
        if feature_id is None or point is None:
            result.dropped_invalid += 1
            continue

        result.features.append(TowerFeature(feature_id, point, _feature_tags(properties)))

    if result.dropped_geometry:
        logger.warning(
            f"Dropped {result.dropped_geometry} non-Point features",
            extra={"dropped_geometry": result.dropped_geometry},
        )
    if result.dropped_invalid:
        logger.warning(
            f"Dropped {result.dropped_invalid} features without a usable id or coordinates",
            extra={"dropped_invalid": result.dropped_invalid},
        )
    logger.debug(f"Parsed {len(result.features)} tower features, {result.dropped_tags} failed the tag filter")
    return result


def filter_study_region(fs: Sequence[TowerFeature], region: Optional[StudyRegion] = None) -> List[TowerFeature]:
    """Keep features inside the region, all edges inclusive, preserving order."""
    region = region or StudyRegion()
    return [f for f in fs if region.contains(f.point)]


def _validate_ring(ring: np.ndarray) -> np.ndarray:
    ring = np.asarray(ring, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidPolygon("ring must be a sequence of [lon, lat] pairs")
    if len(ring) < 4:
        raise InvalidPolygon(f"ring has {len(ring)} points, at least 4 are required")
    if not np.all(np.isfinite(ring)):
        raise InvalidPolygon("ring has non-finite coordinates")
    if not np.array_equal(ring[0], ring[-1]):
        raise InvalidPolygon("ring is not closed (first point differs from last)")
    repeated = np.zeros(len(ring), dtype=bool)
    repeated[1:] = np.all(ring[1:] == ring[:-1], axis=1)
    ring = ring[~repeated]
    if len(ring) < 4:
        raise InvalidPolygon(f"ring has {len(ring) - 1} distinct vertices, at least 3 are required")
    if _ring_self_intersects(ring):
        raise InvalidPolygon("ring intersects itself")
    return ring


def _orientation(ax, ay, bx, by, cx, cy):
    return np.sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def _on_segment(ax, ay, bx, by, cx, cy):
    """Whether collinear point c lies within the bounding box of segment ab."""
    return (
        (np.minimum(ax, bx) <= cx) & (cx <= np.maximum(ax, bx))
        & (np.minimum(ay, by) <= cy) & (cy <= np.maximum(ay, by))
    )


def _ring_self_intersects(ring: np.ndarray) -> bool:
    starts = ring[:-1]
    ends = ring[1:]
    n = len(starts)
    for i in range(n - 2):
        # skip the neighbours of segment i; the first and last segments also share a vertex
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if len(j) == 0:
            continue
        ax, ay = starts[i]
        bx, by = ends[i]
        cx, cy = starts[j, 0], starts[j, 1]
        dx, dy = ends[j, 0], ends[j, 1]
        o1 = _orientation(ax, ay, bx, by, cx, cy)
        o2 = _orientation(ax, ay, bx, by, dx, dy)
        o3 = _orientation(cx, cy, dx, dy, ax, ay)
        o4 = _orientation(cx, cy, dx, dy, bx, by)
        proper = (o1 != o2) & (o3 != o4)
        touching = (
            ((o1 == 0) & _on_segment(ax, ay, bx, by, cx, cy))
            | ((o2 == 0) & _on_segment(ax, ay, bx, by, dx, dy))
            | ((o3 == 0) & _on_segment(cx, cy, dx, dy, ax, ay))
            | ((o4 == 0) & _on_segment(cx, cy, dx, dy, bx, by))
        )
        if np.any(proper | touching):
            return True
    return False


def _ring_contains(ring: np.ndarray, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Even-odd parity and on-edge flags for many points against one ring."""
    inside = np.zeros(x.shape, dtype=bool)
    on_edge = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        on_edge |= (np.abs(cross) <= _EDGE_EPS) & _on_segment(x1, y1, x2, y2, x, y)
        straddles = (y1 > y) != (y2 > y)
        if y1 != y2:
            x_cross = (x2 - x1) * (y - y1) / (y2 - y1) + x1
            inside ^= straddles & (x < x_cross)
    return inside, on_edge


def points_in_polygon(lons: np.ndarray, lats: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorized point_in_polygon over coordinate arrays."""
    x = np.asarray(lons, dtype=float)
    y = np.asarray(lats, dtype=float)
    inside, on_edge = _ring_contains(poly.outer, x, y)
    for hole in poly.holes:
        in_hole, on_hole_edge = _ring_contains(hole, x, y)
        inside &= ~in_hole
        on_edge |= on_hole_edge
    return inside | on_edge


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """
    Ray-casting (even-odd) containment test.

    True inside the outer ring and outside every hole. Points exactly on
    any ring edge count as inside.
    """
    return bool(points_in_polygon(np.array([p.lon]), np.array([p.lat]), poly)[0])


def exclude_urban(fs: Sequence[TowerFeature], mask: UrbanMask) -> ExclusionResult:
    """Drop every feature whose point lies inside any urban polygon."""
    if not fs or not mask.polygons:
        return ExclusionResult(features=list(fs), removed=0)

    lons = np.array([f.point.lon for f in fs])
    lats = np.array([f.point.lat for f in fs])
    urban = np.zeros(len(fs), dtype=bool)
    for poly in mask.polygons:
        min_lon, min_lat, max_lon, max_lat = poly.bounds
        candidates = ~urban & (lons >= min_lon) & (lons <= max_lon) & (lats >= min_lat) & (lats <= max_lat)
        if not candidates.any():
            continue
        idx = np.nonzero(candidates)[0]
        urban[idx] = points_in_polygon(lons[idx], lats[idx], poly)

    kept = [f for f, is_urban in zip(fs, urban) if not is_urban]
    removed = int(urban.sum())
    if removed:
        logger.info(f"Excluded {removed} features inside urban centres", extra={"removed": removed})
    return ExclusionResult(features=kept, removed=removed)


def dedupe(fs: Sequence[TowerFeature], min_sep_m: float = DEFAULT_MIN_SEPARATION_M) -> List[TowerFeature]:
    """
    Greedy duplicate removal in input order.

    A feature is dropped when its equirectangular distance to an already
    kept feature is at most min_sep_m.
    """
    if min_sep_m < 0 or not math.isfinite(min_sep_m):
        raise ValidationError(f"min_sep_m must be a non-negative number, got {min_sep_m}")

    kept: List[TowerFeature] = []
    kept_lon = np.empty(len(fs))
    kept_lat = np.empty(len(fs))
    for f in fs:
        n = len(kept)
        if n:
            if np.any(geo_distances_m(f.point, kept_lon[:n], kept_lat[:n]) <= min_sep_m):
                continue
        kept_lon[n] = f.point.lon
        kept_lat[n] = f.point.lat
        kept.append(f)

    if len(kept) < len(fs):
        logger.info(f"Removed {len(fs) - len(kept)} duplicate features", extra={"duplicates": len(fs) - len(kept)})
    return kept


def load_urban_mask(document: Document) -> UrbanMask:
    """Build an UrbanMask from the Polygon/MultiPolygon features of a FeatureCollection."""
    data = _load_collection(document)
    polygons: List[Polygon] = []
    skipped = 0
    for feature in data["features"]:
        geometry = feature.get("geometry") if isinstance(feature, Mapping) else None
        if not isinstance(geometry, Mapping):
            skipped += 1
            continue
        kind = geometry.get("type")
        coords = geometry.get("coordinates")
        try:
            if kind == "Polygon":
                polygons.append(Polygon.from_coordinates(coords))
            elif kind == "MultiPolygon":
                polygons.extend(Polygon.from_coordinates(part) for part in coords)
            else:
                skipped += 1
        except (TypeError, IndexError, ValueError) as e:
            if isinstance(e, InvalidPolygon):
                raise
            raise InvalidPolygon(f"bad polygon coordinates: {e}") from e
    if skipped:
        logger.warning(f"Ignored {skipped} non-polygon features in urban mask", extra={"skipped": skipped})
    return UrbanMask(polygons)


def features_to_geojson(fs: Sequence[TowerFeature]) -> Dict[str, Any]:
    """FeatureCollection mapping with coordinates rounded to 7 decimals."""
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "id": f.id,
                "geometry": {
                    "type": "Point",
                    "coordinates": [
                        round(f.point.lon, COORDINATE_DECIMALS),
                        round(f.point.lat, COORDINATE_DECIMALS),
                    ],
                },
                "properties": dict(f.tags),
            }
            for f in fs
        ],
    }
