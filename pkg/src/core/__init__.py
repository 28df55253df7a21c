"""Domain modules: geometry, ingest, raster chipping, datasets, evaluation and simulation."""

from .errors import IoFailure, TowerForgeError, ValidationError

__all__ = ["IoFailure", "TowerForgeError", "ValidationError"]
