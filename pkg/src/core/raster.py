"""
Georeferenced raster handling and chipping.

Loads RGB scenes with their ESRI world files, resamples them to a target
ground sample distance, cuts non-overlapping fixed-size chip windows,
assigns buffered tower boxes to chips and picks the positive/negative
samples that make up the dataset.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BufferTooLarge,
    EmptyRaster,
    InvalidGsd,
    IoFailure,
    MalformedDocument,
    RasterTooSmall,
    RotatedTransform,
    ValidationError,
)
from .geo import GeoPoint, GeoTransform, PixelBox, buffer_point, geobox_to_pixelbox, geo_to_pixel, pixel_to_geo
from .ingest import TowerFeature
from ..utils.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_CHIP_PX = 512
DEFAULT_TARGET_GSD_M = 0.5
DEFAULT_JPEG_QUALITY = 95

WORLD_FILE_SUFFIXES = {
    ".png": ".pgw",
    ".jpg": ".jgw",
    ".jpeg": ".jgw",
    ".tif": ".tfw",
    ".tiff": ".tfw",
}

# Scenes routinely exceed Pillow's default decompression-bomb pixel limit.
Image.MAX_IMAGE_PIXELS = None


@dataclass(eq=False)
class RasterImage:
    """8-bit RGB scene; pixels is a (height, width, 3) uint8 array."""

    pixels: np.ndarray
    transform: GeoTransform
    scene_id: str

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValidationError(f"expected (height, width, 3) RGB pixels, got shape {self.pixels.shape}")
        if self.pixels.size == 0:
            raise EmptyRaster(f"scene {self.scene_id!r} has no pixels")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def center(self) -> GeoPoint:
        return pixel_to_geo(self.transform, (self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def gsd_m(self) -> float:
        return self.transform.gsd_m(self.center.lat)


class ChipIndex(NamedTuple):
    col: int
    row: int


@dataclass(frozen=True)
class ChipWindow:
    """A square chip window in source-pixel space."""

    scene_id: str
    col: int
    row: int
    x: int
    y: int
    size: int

    @property
    def index(self) -> ChipIndex:
        return ChipIndex(self.col, self.row)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.size and self.y <= py <= self.y + self.size


@dataclass(eq=False)
class Chip:
    """A chip cut from a scene with its annotations in chip-local coordinates."""

    scene_id: str
    chip_index: ChipIndex
    offset: Tuple[int, int]
    size: int
    pixels: np.ndarray
    transform: GeoTransform
    annotations: List[PixelBox] = field(default_factory=list)

    @property
    def is_positive(self) -> bool:
        return bool(self.annotations)

    @property
    def stem(self) -> str:
        return f"{self.scene_id}_{self.chip_index.col}_{self.chip_index.row}"

    @property
    def sort_key(self) -> Tuple[str, ChipIndex]:
        return (self.scene_id, self.chip_index)

    @property
    def geo_center(self) -> GeoPoint:
        half = self.size / 2.0 - 0.5
        return pixel_to_geo(self.transform, half, half)


@dataclass
class ChipPlan:
    positives: List[Chip] = field(default_factory=list)
    negatives: List[Chip] = field(default_factory=list)

    @property
    def n_annotations(self) -> int:
        return sum(len(c.annotations) for c in self.positives)

    def merge(self, other: "ChipPlan") -> "ChipPlan":
        """Union of two plans, re-sorted by (scene_id, chip_index)."""
        return ChipPlan(
            positives=sorted(self.positives + other.positives, key=lambda c: c.sort_key),
            negatives=sorted(self.negatives + other.negatives, key=lambda c: c.sort_key),
        )


@dataclass
class AssignmentResult:
    chips: List[Chip]
    dropped: int = 0


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def resample_to_gsd(r: RasterImage, target_gsd_m: float = DEFAULT_TARGET_GSD_M) -> RasterImage:
    """
    Bilinear resampling of a scene to a target ground sample distance.

    The source GSD is px_size_x·111320·cos(center latitude). Output
    dimensions are the input dimensions scaled by source/target GSD and
    rounded half-up; pixel sizes are then recomputed so the geographic
    extent is preserved exactly. A scale that leaves the dimensions
    unchanged returns the input object.
    """
    if not math.isfinite(target_gsd_m) or target_gsd_m <= 0:
        raise InvalidGsd(f"target GSD must be positive, got {target_gsd_m}")
    if r.width == 0 or r.height == 0:
        raise EmptyRaster(f"scene {r.scene_id!r} has no pixels")

    scale = r.gsd_m / target_gsd_m
    new_w = _round_half_up(r.width * scale)
    new_h = _round_half_up(r.height * scale)
    if new_w < 1 or new_h < 1:
        raise EmptyRaster(f"resampling {r.scene_id!r} to {target_gsd_m} m leaves no pixels")
    if (new_w, new_h) == (r.width, r.height):
        return r

    gt = r.transform
    px_x = gt.px_size_x * r.width / new_w
    px_y = gt.px_size_y * r.height / new_h
    left = gt.origin_x - gt.px_size_x / 2.0
    top = gt.origin_y - gt.px_size_y / 2.0
    transform = GeoTransform(left + px_x / 2.0, top + px_y / 2.0, px_x, px_y)

    image = Image.fromarray(r.pixels).resize((new_w, new_h), resample=Image.Resampling.BILINEAR)
    logger.debug(
        f"Resampled {r.scene_id} from {r.width}x{r.height} to {new_w}x{new_h} (scale {scale:.4f})"
    )
    return RasterImage(np.asarray(image), transform, r.scene_id)


def validate_buffer(radius_m: float, gsd_m: float, chip_px: int) -> None:
    """
    Check the buffer radius against a quarter of the chip size.

    Raises:
        BufferTooLarge: radius_m / gsd_m > chip_px / 4
    """
    if not (radius_m > 0 and gsd_m > 0 and chip_px > 0):
        raise ValidationError(
            f"radius, GSD and chip size must be positive (got {radius_m}, {gsd_m}, {chip_px})"
        )
    radius_px = radius_m / gsd_m
    limit_px = chip_px / 4.0
    if radius_px > limit_px:
        raise BufferTooLarge(radius_px, limit_px)


def chip_grid(r: RasterImage, chip_px: int = DEFAULT_CHIP_PX) -> List[ChipWindow]:
    """Non-overlapping full windows in row-major order; partial edge strips are discarded."""
    if r.width < chip_px or r.height < chip_px:
        raise RasterTooSmall(
            f"scene {r.scene_id!r} is {r.width}x{r.height}, smaller than one {chip_px}x{chip_px} chip"
        )
    return [
        ChipWindow(r.scene_id, col, row, col * chip_px, row * chip_px, chip_px)
        for row in range(r.height // chip_px)
        for col in range(r.width // chip_px)
    ]


def boxes_for_features(
    features: Sequence[TowerFeature],
    r: RasterImage,
    radius_m: float,
) -> List[PixelBox]:
    """Buffer features into scene pixel boxes, skipping towers whose point lies outside the scene."""
    boxes = []
    for f in features:
        col, row = geo_to_pixel(r.transform, f.point)
        if not (-0.5 <= col <= r.width - 0.5 and -0.5 <= row <= r.height - 0.5):
            continue
        boxes.append(geobox_to_pixelbox(r.transform, buffer_point(f.point, radius_m)))
    logger.debug(f"{len(boxes)} of {len(features)} features fall inside scene {r.scene_id}")
    return boxes


def _window_for_center(lookup: Dict[ChipIndex, ChipWindow], size: int, cx: float, cy: float) -> Optional[ChipWindow]:
    # smallest row, then smallest column, among windows whose closed extent holds the center
    col = max(0, math.ceil(cx / size) - 1)
    row = max(0, math.ceil(cy / size) - 1)
    window = lookup.get(ChipIndex(col, row))
    if window is not None and window.contains(cx, cy):
        return window
    return None


def assign_annotations(
    r: RasterImage,
    windows: Sequence[ChipWindow],
    boxes: Sequence[PixelBox],
) -> AssignmentResult:
    """
    Attach scene boxes to the chip window holding their center.

    Boxes are translated to chip-local coordinates and clipped to the chip.
    Boxes whose center lies in no window are dropped and counted.
    """
    if not windows:
        return AssignmentResult(chips=[], dropped=len(boxes))

    size = windows[0].size
    lookup = {w.index: w for w in windows}
    assigned: Dict[ChipIndex, List[PixelBox]] = {w.index: [] for w in windows}
    dropped = 0
    for box in boxes:
        cx, cy = box.center
        window = _window_for_center(lookup, size, cx, cy)
        if window is None:
            dropped += 1
            continue
        assigned[window.index].append(box.translate(-window.x, -window.y).clip(size, size))

    if dropped:
        logger.warning(
            f"Dropped {dropped} boxes centered outside every full chip window of {r.scene_id}",
            extra={"dropped_boxes": dropped, "scene_id": r.scene_id},
        )

    chips = [
        Chip(
            scene_id=w.scene_id,
            chip_index=w.index,
            offset=(w.x, w.y),
            size=w.size,
            pixels=r.pixels[w.y:w.y + w.size, w.x:w.x + w.size],
            transform=r.transform.window(w.x, w.y),
            annotations=assigned[w.index],
        )
        for w in windows
    ]
    return AssignmentResult(chips=chips, dropped=dropped)


def select_samples(chips: Sequence[Chip], seed: int, keep_all: bool = False) -> ChipPlan:
    """
    Pick one positive and one negative chip per scene.

    The choice is uniform, driven by a generator derived from (seed,
    scene_id), so each scene's pick does not depend on the others. Scenes
    missing a category contribute only the other. keep_all keeps every
    chip instead.
    """
    plan = ChipPlan()
    ordered = sorted(chips, key=lambda c: c.sort_key)
    for scene_id, group in groupby(ordered, key=lambda c: c.scene_id):
        scene_chips = list(group)
        positives = [c for c in scene_chips if c.is_positive]
        negatives = [c for c in scene_chips if not c.is_positive]
        if keep_all:
            plan.positives.extend(positives)
            plan.negatives.extend(negatives)
            continue
        rng = make_rng(seed, "select", scene_id)
        if positives:
            plan.positives.append(positives[int(rng.integers(len(positives)))])
        if negatives:
            plan.negatives.append(negatives[int(rng.integers(len(negatives)))])
    return plan


def world_file_text(gt: GeoTransform) -> str:
    """Six-line ESRI world file body."""
    values = (gt.px_size_x, 0.0, 0.0, gt.px_size_y, gt.origin_x, gt.origin_y)
    return "\n".join(repr(float(v)) for v in values) + "\n"


def parse_world_file(text: str) -> GeoTransform:
    """Parse a six-line world file; non-zero rotation terms are rejected."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if len(lines) != 6:
        raise MalformedDocument(f"world file must have 6 values, found {len(lines)}")
    try:
        px_x, rot_y, rot_x, px_y, origin_x, origin_y = (float(v) for v in lines)
    except ValueError as e:
        raise MalformedDocument(f"world file has a non-numeric value: {e}") from e
    if rot_x != 0.0 or rot_y != 0.0:
        raise RotatedTransform("rotated world files are not supported (north-up rasters only)")
    return GeoTransform(origin_x, origin_y, px_x, px_y)


def world_file_path(image_path: Path) -> Path:
    return image_path.with_suffix(WORLD_FILE_SUFFIXES.get(image_path.suffix.lower(), ".wld"))


def _find_world_file(image_path: Path) -> Path:
    candidates = [
        world_file_path(image_path),
        image_path.with_suffix(".wld"),
        image_path.with_suffix(image_path.suffix + "w"),
    ]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    raise MalformedDocument(f"no world file found next to {image_path}")


def _read_meta(image_path: Path) -> Dict[str, str]:
    meta_path = image_path.with_suffix(".meta")
    if not meta_path.exists():
        return {}
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            meta[key.strip()] = value.strip()
    return meta


def load_raster(path: Union[str, Path]) -> RasterImage:
    """
    Load an RGB image with its world file and optional .meta sidecar.

    The scene id comes from the sidecar's scene_id entry, else the file stem.
    """
    path = Path(path)
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert("RGB"))
        transform = parse_world_file(_find_world_file(path).read_text(encoding="utf-8"))
        meta = _read_meta(path)
    except UnidentifiedImageError as e:
        raise MalformedDocument(f"{path} is not a readable image: {e}") from e
    except OSError as e:
        raise IoFailure(f"could not read raster {path}: {e}") from e
    return RasterImage(pixels, transform, meta.get("scene_id") or path.stem)


def write_raster(r: RasterImage, path: Union[str, Path]) -> Path:
    """Write a scene as an image plus world file and .meta sidecar."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(r.pixels).save(path)
        world_file_path(path).write_text(world_file_text(r.transform), encoding="utf-8")
        path.with_suffix(".meta").write_text(f"scene_id={r.scene_id}\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"could not write raster {path}: {e}") from e
    return path


def write_chip(c: Chip, directory: Union[str, Path], quality: int = DEFAULT_JPEG_QUALITY) -> Path:
    """Write <scene_id>_<col>_<row>.jpg and its .jgw world file; returns the image path."""
    directory = Path(directory)
    path = directory / f"{c.stem}.jpg"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(c.pixels)).save(path, format="JPEG", quality=quality)
        path.with_suffix(".jgw").write_text(world_file_text(c.transform), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"could not write chip {path}: {e}") from e
    return path
