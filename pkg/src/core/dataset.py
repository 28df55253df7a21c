"""
COCO dataset assembly, splitting and region stratification.

Chips selected by the raster stage become COCO detection images; datasets
are split at image level, stratified into latitude/longitude bands and
combined into train/evaluation experiment matrices.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from .errors import (
    DuplicateChip,
    EmptyDataset,
    MalformedDocument,
    MissingGeoCenter,
    UnknownVariant,
    ValidationError,
)
from .geo import GeoPoint
from .ingest import StudyRegion
from .raster import Chip, ChipPlan
from ..utils.seeding import make_rng
from ..utils.serialization import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

TOWER_CATEGORY = {"id": 1, "name": "cell_tower"}
LATITUDE = "latitude"
LONGITUDE = "longitude"
AXES = (LATITUDE, LONGITUDE)
AXIS_ALIASES = {"lat": LATITUDE, "lon": LONGITUDE, LATITUDE: LATITUDE, LONGITUDE: LONGITUDE}
BASELINE_SELECTOR = "all"
DEFAULT_TRAIN_FRACTION = 0.8
AREA_TOLERANCE = 0.01

BBox = Tuple[float, float, float, float]


@dataclass(frozen=True)
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int
    geo_center: Optional[GeoPoint] = None
    scene_id: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "id": self.id,
            "file_name": self.file_name,
            "width": self.width,
            "height": self.height,
        }
        if self.geo_center is not None:
            data["geo_center"] = {"lon": self.geo_center.lon, "lat": self.geo_center.lat}
        if self.scene_id is not None:
            data["scene_id"] = self.scene_id
        return data


@dataclass(frozen=True)
class CocoAnnotation:
    id: int
    image_id: int
    bbox: BBox
    area: float
    category_id: int = 1
    iscrowd: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "image_id": self.image_id,
            "category_id": self.category_id,
            "bbox": list(self.bbox),
            "area": self.area,
            "iscrowd": self.iscrowd,
        }


@dataclass
class CocoDataset:
    """COCO detection dataset with a single tower category."""

    images: List[CocoImage] = field(default_factory=list)
    annotations: List[CocoAnnotation] = field(default_factory=list)
    categories: List[Dict[str, Any]] = field(default_factory=lambda: [dict(TOWER_CATEGORY)])

    def __post_init__(self):
        self._validate()

    def _validate(self):
        image_ids = [img.id for img in self.images]
        if len(set(image_ids)) != len(image_ids):
            raise ValidationError("image ids must be unique")
        ann_ids = [a.id for a in self.annotations]
        if len(set(ann_ids)) != len(ann_ids):
            raise ValidationError("annotation ids must be unique")
        known = set(image_ids)
        orphans = [a.id for a in self.annotations if a.image_id not in known]
        if orphans:
            raise ValidationError(f"annotations {orphans[:5]} reference unknown images")

    @property
    def image_ids(self) -> List[int]:
        return [img.id for img in self.images]

    def annotations_by_image(self) -> Dict[int, List[CocoAnnotation]]:
        grouped: Dict[int, List[CocoAnnotation]] = {img.id: [] for img in self.images}
        for ann in self.annotations:
            grouped[ann.image_id].append(ann)
        return grouped

    def subset(self, image_ids: Iterable[int]) -> "CocoDataset":
        """Images (and their annotations) whose id is in image_ids, in this dataset's order."""
        keep = set(image_ids)
        return CocoDataset(
            images=[img for img in self.images if img.id in keep],
            annotations=[a for a in self.annotations if a.image_id in keep],
            categories=[dict(c) for c in self.categories],
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "images": [img.to_dict() for img in self.images],
            "annotations": [a.to_dict() for a in self.annotations],
            "categories": [dict(c) for c in self.categories],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], region: Optional[StudyRegion] = None) -> "CocoDataset":
        """Parse a COCO document.

        Areas must equal w*h of their box. With a region, every geo_center present must lie inside it.
        """
        if not isinstance(data, Mapping):
            raise MalformedDocument("COCO document must be a JSON object")
        try:
            images = [
                CocoImage(
                    id=int(img["id"]),
                    file_name=str(img["file_name"]),
                    width=int(img["width"]),
                    height=int(img["height"]),
                    geo_center=(
                        GeoPoint(float(img["geo_center"]["lon"]), float(img["geo_center"]["lat"]))
                        if img.get("geo_center") is not None
                        else None
                    ),
                    scene_id=img.get("scene_id"),
                )
                for img in data.get("images", [])
            ]
            annotations = [
                CocoAnnotation(
                    id=int(ann["id"]),
                    image_id=int(ann["image_id"]),
                    bbox=tuple(float(v) for v in ann["bbox"]),
                    area=float(ann["area"]),
                    category_id=int(ann.get("category_id", 1)),
                    iscrowd=int(ann.get("iscrowd", 0)),
                )
                for ann in data.get("annotations", [])
            ]
            categories = [dict(c) for c in data.get("categories", [TOWER_CATEGORY])]
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise MalformedDocument(str(e)) from e
            raise MalformedDocument(f"invalid COCO document: {e!r}") from e
        bad_boxes = [a.id for a in annotations if len(a.bbox) != 4]
        if bad_boxes:
            raise MalformedDocument(f"annotations {bad_boxes[:5]} do not have 4 bbox values")
        bad_areas = [
            a.id for a in annotations if not math.isclose(a.area, a.bbox[2] * a.bbox[3], abs_tol=AREA_TOLERANCE)
        ]
        if bad_areas:
            raise MalformedDocument(f"annotations {bad_areas[:5]} have an area that is not w*h")
        if region is not None:
            outside = [
                img.id for img in images if img.geo_center is not None and not region.contains(img.geo_center)
            ]
            if outside:
                raise MalformedDocument(f"images {outside[:5]} have a geo_center outside the study region")
        try:
            return cls(images=images, annotations=annotations, categories=categories)
        except ValidationError as e:
            raise MalformedDocument(str(e)) from e


def write_coco(ds: CocoDataset, path: Union[str, Path]) -> Path:
    return write_json(path, ds.to_dict())


def read_coco(path: Union[str, Path], region: Optional[StudyRegion] = None) -> CocoDataset:
    return CocoDataset.from_dict(read_json(path), region)


def _round_bbox(chip: Chip) -> List[BBox]:
    rounded = []
    for box in chip.annotations:
        x, y, w, h = (round(v, 1) for v in box.as_xywh())
        if w <= 0 or h <= 0:
            logger.warning(f"Skipping sub-pixel sliver box in chip {chip.stem}")
            continue
        rounded.append((x, y, w, h))
    return rounded


def to_coco(plan: ChipPlan, include_negatives: bool = False) -> CocoDataset:
    """
    Convert a chip plan into a COCO dataset.

    Images and annotations are numbered from 1 in (scene_id, chip_index)
    order. Boxes are rounded to one decimal; negatives become
    annotation-less images only when include_negatives is set.

    Raises:
        DuplicateChip: two chips share a scene and grid index
    """
    seen = set()
    for chip in list(plan.positives) + list(plan.negatives):
        if chip.sort_key in seen:
            raise DuplicateChip(f"chip {chip.stem} appears more than once in the plan")
        seen.add(chip.sort_key)

    chips = list(plan.positives) + (list(plan.negatives) if include_negatives else [])
    chips.sort(key=lambda c: c.sort_key)

    images: List[CocoImage] = []
    annotations: List[CocoAnnotation] = []
    for image_id, chip in enumerate(chips, start=1):
        images.append(
            CocoImage(
                id=image_id,
                file_name=f"{chip.stem}.jpg",
                width=chip.size,
                height=chip.size,
                geo_center=chip.geo_center,
                scene_id=chip.scene_id,
            )
        )
        for bbox in _round_bbox(chip):
            annotations.append(
                CocoAnnotation(
                    id=len(annotations) + 1,
                    image_id=image_id,
                    bbox=bbox,
                    area=round(bbox[2] * bbox[3], 2),
                )
            )
    return CocoDataset(images=images, annotations=annotations)


@dataclass
class SplitResult:
    train: CocoDataset
    test: CocoDataset


def split_train_test(
    ds: CocoDataset,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    seed: int = 42,
) -> SplitResult:
    """
    Seeded image-level split; the train set holds floor(n · train_fraction) images.

    Both halves keep the input's image order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds.images)
    if n == 0:
        raise EmptyDataset("cannot split a dataset without images")

    n_train = int(math.floor(n * train_fraction + 1e-9))
    order = make_rng(seed, "split").permutation(n)
    ids = ds.image_ids
    train_ids = {ids[i] for i in order[:n_train]}
    test_ids = [i for i in ids if i not in train_ids]
    logger.info(f"Split {n} images into {n_train} train / {n - n_train} test")
    return SplitResult(train=ds.subset(train_ids), test=ds.subset(test_ids))


@dataclass(frozen=True)
class RegionBand:
    """Half-open coordinate band (lower, upper]; lower_inclusive closes the lower end."""

    name: str
    axis: str
    lower: float
    upper: float
    lower_inclusive: bool = False

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValidationError(f"band axis must be one of {AXES}, got {self.axis!r}")
        if not self.lower < self.upper:
            raise ValidationError(f"band {self.name!r} has lower {self.lower} >= upper {self.upper}")

    def value_of(self, p: GeoPoint) -> float:
        return p.lat if self.axis == LATITUDE else p.lon

    def contains(self, value: float) -> bool:
        above = value > self.lower or (self.lower_inclusive and value == self.lower)
        return above and value <= self.upper

    @property
    def range_label(self) -> str:
        left = "[" if self.lower_inclusive else "("
        return f"{left}{self.lower:g}, {self.upper:g}]"


def default_bands() -> List[RegionBand]:
    return [
        RegionBand("upper_latitude", LATITUDE, -2.0, 14.0),
        RegionBand("middle_latitude", LATITUDE, -16.5, -2.0),
        RegionBand("lower_latitude", LATITUDE, -28.0, -16.5, lower_inclusive=True),
        RegionBand("upper_longitude", LONGITUDE, 18.0, 31.0, lower_inclusive=True),
        RegionBand("middle_longitude", LONGITUDE, 31.0, 41.0),
        RegionBand("lower_longitude", LONGITUDE, 41.0, 58.0),
    ]


def bands_for_axes(bands: Sequence[RegionBand], axes: Iterable[str]) -> List[RegionBand]:
    """Filter bands to the given axes ("lat"/"lon" accepted as aliases)."""
    wanted = set()
    for axis in axes:
        if axis not in AXIS_ALIASES:
            raise ValidationError(f"unknown band axis {axis!r}; expected lat or lon")
        wanted.add(AXIS_ALIASES[axis])
    return [b for b in bands if b.axis in wanted]


def band_for(bands: Sequence[RegionBand], axis: str, p: GeoPoint) -> Optional[RegionBand]:
    for band in bands:
        if band.axis == axis and band.contains(band.value_of(p)):
            return band
    return None


@dataclass
class StratifyResult:
    """Per-band datasets plus the images that fell outside every band of an axis."""

    strata: Dict[str, CocoDataset]
    assignments: Dict[int, Dict[str, Optional[str]]]
    out_of_band: Dict[str, List[int]]

    def __getitem__(self, name: str) -> CocoDataset:
        return self.strata[name]

    def __contains__(self, name: str) -> bool:
        return name in self.strata


def stratify(ds: CocoDataset, bands: Sequence[RegionBand]) -> StratifyResult:
    """
    Assign every image to the band containing its geo_center, per axis.

    Raises:
        MissingGeoCenter: an image carries no geographic center
    """
    axes = [axis for axis in AXES if any(b.axis == axis for b in bands)]
    members: Dict[str, List[int]] = {b.name: [] for b in bands}
    assignments: Dict[int, Dict[str, Optional[str]]] = {}
    out_of_band: Dict[str, List[int]] = {axis: [] for axis in axes}

    for img in ds.images:
        if img.geo_center is None:
            raise MissingGeoCenter(f"image {img.id} ({img.file_name}) has no geo_center")
        assignments[img.id] = {}
        for axis in axes:
            band = band_for(bands, axis, img.geo_center)
            assignments[img.id][axis] = band.name if band else None
            if band is None:
                out_of_band[axis].append(img.id)
            else:
                members[band.name].append(img.id)

    for axis, ids in out_of_band.items():
        if ids:
            logger.warning(
                f"{len(ids)} images fall outside every {axis} band",
                extra={"axis": axis, "out_of_band": len(ids)},
            )
    strata = {name: ds.subset(ids) for name, ids in members.items()}
    return StratifyResult(strata=strata, assignments=assignments, out_of_band=out_of_band)


@dataclass(frozen=True)
class MatrixCell:
    train: str
    eval: str

    @property
    def is_baseline(self) -> bool:
        return self.train == BASELINE_SELECTOR

    @property
    def in_sample(self) -> bool:
        return self.train == self.eval


@dataclass
class ExperimentMatrix:
    cells: List[MatrixCell]
    bands: List[RegionBand]

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


def build_matrix(bands: Sequence[RegionBand], include_baseline: bool = False) -> ExperimentMatrix:
    """Every (train, eval) band pair within each axis, then ("all", band) cells when include_baseline."""
    if not bands:
        raise ValidationError("an experiment matrix needs at least one band")
    cells = []
    for axis in AXES:
        axis_bands = [b for b in bands if b.axis == axis]
        cells.extend(MatrixCell(t.name, e.name) for t in axis_bands for e in axis_bands)
    if include_baseline:
        cells.extend(MatrixCell(BASELINE_SELECTOR, b.name) for b in bands)
    return ExperimentMatrix(cells=cells, bands=list(bands))


_BACKBONE_WEIGHTS = {
    "INT": {
        50: "detectron2://ImageNetPretrained/MSRA/R-50.pkl",
        101: "detectron2://ImageNetPretrained/MSRA/R-101.pkl",
    },
}

TRAINING_VARIANTS: Dict[str, Dict[str, Any]] = {
    "RN50-HPT": {
        "MODEL.WEIGHTS": "HPT",
        "MODEL.RESNETS.DEPTH": 50,
        "MODEL.RESNETS.NORM": "SyncBN",
        "MODEL.ROI_HEADS.NAME": "Res5ROIHeadsExtraNorm",
        "MODEL.BACKBONE.FREEZE_AT": 0,
        "SOLVER.BASE_LR": 0.15,
        "SOLVER.STEPS": (9500,),
        "SOLVER.MAX_ITER": 12500,
    },
    "RN50-RI": {
        "MODEL.WEIGHTS": "",
        "MODEL.RESNETS.DEPTH": 50,
        "MODEL.RESNETS.NORM": "SyncBN",
        "MODEL.ROI_HEADS.NAME": "Res5ROIHeads",
        "MODEL.BACKBONE.FREEZE_AT": 0,
        "SOLVER.BASE_LR": 0.02,
        "SOLVER.STEPS": (60000, 80000),
        "SOLVER.MAX_ITER": 90000,
    },
    "RN50-INT": {
        "MODEL.WEIGHTS": _BACKBONE_WEIGHTS["INT"][50],
        "MODEL.RESNETS.DEPTH": 50,
        "MODEL.RESNETS.NORM": "FrozenBN",
        "MODEL.ROI_HEADS.NAME": "Res5ROIHeads",
        "MODEL.BACKBONE.FREEZE_AT": 2,
        "SOLVER.BASE_LR": 0.02,
        "SOLVER.STEPS": (9500,),
        "SOLVER.MAX_ITER": 12500,
    },
    "RN101-INT": {
        "MODEL.WEIGHTS": _BACKBONE_WEIGHTS["INT"][101],
        "MODEL.RESNETS.DEPTH": 101,
        "MODEL.RESNETS.NORM": "FrozenBN",
        "MODEL.ROI_HEADS.NAME": "Res5ROIHeads",
        "MODEL.BACKBONE.FREEZE_AT": 2,
        "SOLVER.BASE_LR": 0.02,
        "SOLVER.STEPS": (9500,),
        "SOLVER.MAX_ITER": 12500,
    },
}

_COMMON_TRAINING = {
    "SOLVER.IMS_PER_BATCH": 8,
    "INPUT.RANDOM_FLIP": "horizontal",
}


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        if len(value) == 1:
            return str(value[0])
        return "(" + ", ".join(str(v) for v in value) + ")"
    if value == "":
        return '""'
    return str(value)


def emit_training_config(variant: str) -> str:
    """KEY: value training configuration for one backbone variant."""
    if variant not in TRAINING_VARIANTS:
        raise UnknownVariant(
            f"unknown training variant {variant!r}; expected one of {sorted(TRAINING_VARIANTS)}"
        )
    entries = dict(TRAINING_VARIANTS[variant], **_COMMON_TRAINING)
    return "".join(f"{key}: {_format_value(value)}\n" for key, value in entries.items())


def dataset_summary(split: SplitResult) -> pd.DataFrame:
    """Chip and annotation counts for test, train and total."""
    test, train = split.test, split.train
    return pd.DataFrame(
        {
            "count": ["chips", "annotations"],
            "test": [len(test.images), len(test.annotations)],
            "train": [len(train.images), len(train.annotations)],
            "total": [
                len(test.images) + len(train.images),
                len(test.annotations) + len(train.annotations),
            ],
        }
    )


def band_summary(train: StratifyResult, test: StratifyResult, bands: Sequence[RegionBand]) -> pd.DataFrame:
    """Per-band range and train/test annotation counts."""
    rows = [
        {
            "region": band.name,
            "range": band.range_label,
            "annotations_train": len(train[band.name].annotations) if band.name in train else 0,
            "annotations_test": len(test[band.name].annotations) if band.name in test else 0,
        }
        for band in bands
    ]
    return pd.DataFrame(rows, columns=["region", "range", "annotations_train", "annotations_test"])


def assignments_frame(ds: CocoDataset, result: StratifyResult) -> pd.DataFrame:
    rows = []
    for img in ds.images:
        assigned = result.assignments.get(img.id, {})
        rows.append(
            {
                "image_id": img.id,
                "file_name": img.file_name,
                "lon": img.geo_center.lon if img.geo_center else None,
                "lat": img.geo_center.lat if img.geo_center else None,
                "lat_band": assigned.get(LATITUDE) or "",
                "lon_band": assigned.get(LONGITUDE) or "",
            }
        )
    return pd.DataFrame(rows, columns=["image_id", "file_name", "lon", "lat", "lat_band", "lon_band"])


def write_assignments_csv(ds: CocoDataset, result: StratifyResult, path: Union[str, Path]) -> Path:
    return write_csv(path, assignments_frame(ds, result))
