"""
Exception hierarchy for towerforge.

Every error raised by the library derives from TowerForgeError and carries
the process exit code the CLI reports for it. Validation problems map to
exit code 2, I/O problems to exit code 1.
"""

from typing import Optional


class TowerForgeError(Exception):
    """Base class for all towerforge errors."""

    exit_code: int = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage


class ValidationError(TowerForgeError, ValueError):
    """Invalid input, configuration or data contract violation."""

    exit_code = 2


class IoFailure(TowerForgeError, OSError):
    """Reading or writing a file failed."""

    exit_code = 1


# geo

class NonFiniteInput(ValidationError):
    """A coordinate or distance is NaN, infinite or otherwise unusable."""


class InvalidRadius(NonFiniteInput):
    """Buffer radius is not strictly positive."""


class LatitudeOutOfRange(ValidationError):
    """Latitude too close to a pole for the local equirectangular model."""


class DegenerateBox(ValidationError):
    """A box has zero or negative width or height."""


# ingest

class MalformedDocument(ValidationError):
    """A document could not be parsed into the expected structure."""


class NotAFeatureCollection(MalformedDocument):
    """A GeoJSON document is valid JSON but not a FeatureCollection."""


class InvalidPolygon(MalformedDocument):
    """A polygon ring is open, too short or self-intersecting."""


class RotatedTransform(MalformedDocument):
    """A world file carries non-zero rotation terms."""


# raster

class InvalidGsd(ValidationError):
    """Ground sample distance is not strictly positive."""


class EmptyRaster(ValidationError):
    """Raster has no pixels."""


class BufferTooLarge(ValidationError):
    """Buffer radius in pixels exceeds a quarter of the chip size."""

    def __init__(self, radius_px: float, limit_px: float, stage: Optional[str] = None):
        super().__init__(
            f"buffer radius of {radius_px:g} px exceeds the quarter-chip limit of {limit_px:g} px",
            stage=stage,
        )
        self.radius_px = radius_px
        self.limit_px = limit_px


class RasterTooSmall(ValidationError):
    """Raster cannot hold a single full chip window."""


# dataset

class DuplicateChip(ValidationError):
    """Two chips share the same scene and grid index."""


class EmptyDataset(ValidationError):
    """Operation needs at least one image."""


class MissingGeoCenter(ValidationError):
    """An image has no geographic center for stratification."""


class UnknownVariant(ValidationError):
    """Training configuration variant is not recognized."""


# evaluation

class UndefinedAp(ValidationError):
    """Average precision is undefined without ground truth."""


class UnknownImageId(ValidationError):
    """A detection references an image that is not in the dataset."""


# simkit

class PlacementFailure(ValidationError):
    """Towers could not be placed with the required separation."""


class UnknownSelector(ValidationError):
    """An experiment matrix selector does not resolve to a stratum."""


# config

class ConfigError(ValidationError):
    """Configuration value or file is invalid."""
