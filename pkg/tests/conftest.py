"""
Pytest Configuration and Shared Fixtures

Provides common fixtures and configuration for all test modules.
"""

import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict, Generator, List, Optional, Sequence, Tuple

import pytest

# Add repository root to path for `from src...` imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.dataset import CocoAnnotation, CocoDataset, CocoImage
from src.core.geo import GeoPoint, PixelBox
from src.core.simkit import SceneSpec


# ==============================================================================
# Pytest Configuration
# ==============================================================================

def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )


@pytest.fixture(autouse=True)
def restore_root_logging():
    """The CLI reconfigures the root logger; put it back after every test."""
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


# ==============================================================================
# Temporary Directory Fixtures
# ==============================================================================

@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files."""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    # Cleanup
    shutil.rmtree(temp_path, ignore_errors=True)


# ==============================================================================
# Environment Variable Fixtures
# ==============================================================================

@pytest.fixture
def clean_env():
    """Remove every TOWERFORGE_* variable for the duration of a test."""
    original_env = os.environ.copy()

    for var in [v for v in os.environ if v.startswith("TOWERFORGE_")]:
        os.environ.pop(var, None)

    yield

    os.environ.clear()
    os.environ.update(original_env)


# ==============================================================================
# GeoJSON Fixtures
# ==============================================================================

def point_feature(
    lon: float,
    lat: float,
    feature_id: Optional[str] = None,
    **properties: Any,
) -> Dict[str, Any]:
    """GeoJSON Point feature; properties default to man_made=tower."""
    props = properties or {"man_made": "tower"}
    feature: Dict[str, Any] = {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [lon, lat]},
        "properties": props,
    }
    if feature_id is not None:
        feature["id"] = feature_id
    return feature


def square_ring(x0: float, y0: float, x1: float, y1: float) -> List[List[float]]:
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]


def feature_collection(features: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    return {"type": "FeatureCollection", "features": list(features)}


@pytest.fixture
def osm_document() -> Dict[str, Any]:
    """Mixed OSM export: towers, a water tower, a line and points outside the region."""
    return feature_collection(
        [
            point_feature(30.0, 0.0, "node/1"),
            point_feature(35.0, -10.0, "node/2", man_made="communications_tower"),
            point_feature(35.00005, -10.0, "node/3"),  # ~5.5 m from node/2
            point_feature(40.0, 5.0, "node/4", man_made="water_tower"),
            point_feature(30.0, 13.0, "node/5"),  # north of the study region
            point_feature(25.5, -5.5, "node/6"),  # inside the urban square below
            {
                "type": "Feature",
                "id": "way/7",
                "geometry": {"type": "LineString", "coordinates": [[30, 0], [31, 1]]},
                "properties": {"man_made": "tower"},
            },
        ]
    )


@pytest.fixture
def urban_document() -> Dict[str, Any]:
    """One urban square around (25.5, -5.5)."""
    return feature_collection(
        [
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [square_ring(25.0, -6.0, 26.0, -5.0)]},
                "properties": {"name": "Example City"},
            }
        ]
    )


@pytest.fixture
def osm_file(temp_dir: Path, osm_document: Dict[str, Any]) -> Path:
    path = temp_dir / "towers.geojson"
    path.write_text(json.dumps(osm_document), encoding="utf-8")
    return path


@pytest.fixture
def urban_file(temp_dir: Path, urban_document: Dict[str, Any]) -> Path:
    path = temp_dir / "urban.geojson"
    path.write_text(json.dumps(urban_document), encoding="utf-8")
    return path


# ==============================================================================
# Dataset Fixtures
# ==============================================================================

# Four 100 px boxes 200 px apart inside a 512 px chip; no two overlap.
GRID_BOXES: Tuple[Tuple[float, float, float, float], ...] = (
    (20.0, 20.0, 100.0, 100.0),
    (220.0, 20.0, 100.0, 100.0),
    (20.0, 220.0, 100.0, 100.0),
    (220.0, 220.0, 100.0, 100.0),
)


def make_dataset(
    centers: Sequence[GeoPoint],
    boxes_per_image: Sequence[Tuple[float, float, float, float]] = GRID_BOXES,
    size: int = 512,
) -> CocoDataset:
    """One image per center, every image carrying the same boxes."""
    images = []
    annotations = []
    for image_id, center in enumerate(centers, start=1):
        images.append(
            CocoImage(
                id=image_id,
                file_name=f"s{image_id}_0_0.jpg",
                width=size,
                height=size,
                geo_center=center,
                scene_id=f"s{image_id}",
            )
        )
        for bbox in boxes_per_image:
            annotations.append(
                CocoAnnotation(
                    id=len(annotations) + 1,
                    image_id=image_id,
                    bbox=bbox,
                    area=round(bbox[2] * bbox[3], 2),
                )
            )
    return CocoDataset(images=images, annotations=annotations)


@pytest.fixture
def banded_dataset() -> CocoDataset:
    """Five images in each latitude band, all at longitude 35."""
    latitudes = [8.0, 5.0, 2.0, 0.0, -1.0] + [-3.0, -6.0, -9.0, -12.0, -15.0] + [-17.0, -19.0, -21.0, -24.0, -26.0]
    return make_dataset([GeoPoint(35.0, lat) for lat in latitudes])


@pytest.fixture
def small_scene_spec() -> SceneSpec:
    """1024 px flat scene with four towers."""
    return SceneSpec(width=1024, height=1024, n_towers=4, background="flat", seed=7, scene_id="small",
                     min_separation_px=150.0)


def boxes_equal(a: PixelBox, b: PixelBox, tol: float = 1e-9) -> bool:
    return all(abs(u - v) <= tol for u, v in zip(a.as_xywh(), b.as_xywh()))
