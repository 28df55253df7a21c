"""
towerforge

Builds cell-tower object detection datasets from OpenStreetMap points and
georeferenced satellite scenes, and evaluates detections with COCO-style
average precision.

Pipeline:
    ingest    OSM GeoJSON -> filtered tower points
    chip      scenes + points -> 512 px chips, world files, COCO JSON
    split     80:20 image-level train/test split
    stratify  latitude/longitude region bands
    simulate  mock detections from a seeded noise model
    evaluate  AP, AP@50, AP@15
    report    in-sample / out-of-sample experiment matrix

Usage:
    towerforge ingest --osm towers.geojson --urban-mask ucdb.geojson --out towers.filtered.geojson
    towerforge chip scene1.png scene2.png --features towers.filtered.geojson --out build/
"""

__version__ = "0.3.0"
__license__ = "MIT"
__status__ = "Beta"

try:
    from .core.dataset import CocoDataset, default_bands, split_train_test, stratify, to_coco
    from .core.errors import IoFailure, TowerForgeError, ValidationError
    from .core.evaluation import ApReport, Detection, evaluate
    from .core.geo import GeoBox, GeoPoint, GeoTransform, PixelBox, buffer_point

    __all__ = [
        "ApReport",
        "CocoDataset",
        "Detection",
        "GeoBox",
        "GeoPoint",
        "GeoTransform",
        "IoFailure",
        "PixelBox",
        "TowerForgeError",
        "ValidationError",
        "buffer_point",
        "default_bands",
        "evaluate",
        "split_train_test",
        "stratify",
        "to_coco",
        "__version__",
    ]
except ImportError as e:
    # numpy/pandas/Pillow missing during installation
    import warnings

    warnings.warn(f"Some towerforge modules could not be imported: {e}")
    __all__ = ["__version__"]

__title__ = "towerforge"
__description__ = "Cell-tower detection dataset toolkit and COCO-style evaluator"
