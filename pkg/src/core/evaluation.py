"""
COCO-style detection evaluation.

Detections are matched greedily to ground truth per image (descending
score, ties by input order, best unmatched IoU wins), ranked globally into
a precision/recall curve and summarized with 101-point interpolated
average precision. Reports carry AP averaged over IoU 0.50:0.05:0.95,
AP@0.50 and AP@0.15, scaled to percent.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .dataset import CocoDataset
from .errors import MalformedDocument, UndefinedAp, UnknownImageId, ValidationError
from .geo import PixelBox
from ..utils.serialization import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
LOOSE_THRESHOLD = 0.15
ALL_THRESHOLDS = (LOOSE_THRESHOLD,) + COCO_THRESHOLDS
RECALL_THRESHOLDS = np.arange(101) / 100.0


@dataclass(frozen=True)
class Detection:
    image_id: int
    bbox: PixelBox
    score: float
    category_id: int = 1

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "bbox": list(self.bbox.as_xywh()),
            "score": self.score,
        }


class MatchRecord(NamedTuple):
    score: float
    order: int
    tp: bool


@dataclass
class PRCurve:
    """Precision/recall at every rank of the global detection ordering."""

    recalls: np.ndarray
    precisions: np.ndarray
    n_gt: int

    @property
    def undefined(self) -> bool:
        return self.n_gt == 0

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.recalls.tolist(), self.precisions.tolist()))


@dataclass
class ApReport:
    ap: float
    ap50: float
    ap15: float
    per_threshold: Dict[float, float]
    n_gt: int
    n_det: int
    # unscaled, unrounded AP in [0, 1] per threshold
    raw: Dict[float, float] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap15": self.ap15,
            "per_threshold": {f"{t:.2f}": v for t, v in sorted(self.per_threshold.items())},
            "n_gt": self.n_gt,
            "n_det": self.n_det,
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [("ap", self.ap), ("ap50", self.ap50), ("ap15", self.ap15)]
        rows += [(f"ap@{t:.2f}", v) for t, v in sorted(self.per_threshold.items())]
        return pd.DataFrame(rows, columns=["metric", "value"])


def _xyxy(boxes: Sequence[PixelBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    xywh = np.array([b.as_xywh() for b in boxes], dtype=float)
    return np.column_stack([xywh[:, 0], xywh[:, 1], xywh[:, 0] + xywh[:, 2], xywh[:, 1] + xywh[:, 3]])


def box_iou_matrix(a: Sequence[PixelBox], b: Sequence[PixelBox]) -> np.ndarray:
    """IoU of every box in a against every box in b, shape (len(a), len(b))."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    pa, pb = _xyxy(a), _xyxy(b)
    iw = np.minimum(pa[:, None, 2], pb[None, :, 2]) - np.maximum(pa[:, None, 0], pb[None, :, 0])
    ih = np.minimum(pa[:, None, 3], pb[None, :, 3]) - np.maximum(pa[:, None, 1], pb[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (pa[:, 2] - pa[:, 0]) * (pa[:, 3] - pa[:, 1])
    area_b = (pb[:, 2] - pb[:, 0]) * (pb[:, 3] - pb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / union, 0.0)


def match_detections(
    gts: Sequence[PixelBox],
    dets: Sequence[Detection],
    iou_thr: float,
    ious: Optional[np.ndarray] = None,
) -> List[Tuple[int, Optional[int]]]:
    """
    Greedy one-to-one matching for a single image.

    Returns (detection index, matched ground-truth index or None) for every
    detection, in detection index order. Pass a precomputed (dets x gts)
    IoU matrix to reuse it across thresholds.
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValidationError(f"IoU threshold must be in (0, 1], got {iou_thr}")
    if ious is None:
        ious = box_iou_matrix([d.bbox for d in dets], list(gts))

    result: List[Optional[int]] = [None] * len(dets)
    taken = np.zeros(len(gts), dtype=bool)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for d in order:
        if taken.all():
            break
        row = np.where(taken, -1.0, ious[d])
        best = int(np.argmax(row))
        if row[best] >= iou_thr:
            taken[best] = True
            result[d] = best
    return list(enumerate(result))


def pr_curve(records: Sequence[MatchRecord], n_gt: int) -> PRCurve:
    """Rank records by (-score, order) and accumulate TP/FP counts."""
    if n_gt < 0:
        raise ValidationError(f"n_gt must be non-negative, got {n_gt}")
    ranked = sorted(records, key=lambda r: (-r.score, r.order))
    tp = np.cumsum([r.tp for r in ranked], dtype=float)
    fp = np.cumsum([not r.tp for r in ranked], dtype=float)
    if not ranked:
        return PRCurve(np.zeros(0), np.zeros(0), n_gt)
    precisions = tp / (tp + fp)
    recalls = tp / n_gt if n_gt > 0 else np.zeros_like(tp)
    return PRCurve(recalls, precisions, n_gt)


def average_precision(curve: PRCurve) -> float:
    """101-point interpolated AP in [0, 1]."""
    if curve.undefined:
        raise UndefinedAp("average precision is undefined without ground truth")
    if curve.recalls.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precisions[::-1])[::-1]
    idx = np.searchsorted(curve.recalls, RECALL_THRESHOLDS, side="left")
    sampled = np.zeros(RECALL_THRESHOLDS.size)
    hit = idx < curve.recalls.size
    sampled[hit] = envelope[idx[hit]]
    return float(sampled.sum() / RECALL_THRESHOLDS.size)


def _percent(value: float) -> float:
    return round(value * 100.0, 1)


def evaluate(ds: CocoDataset, dets: Sequence[Detection]) -> ApReport:
    """
    AP at IoU 0.15 and 0.50:0.05:0.95 over a whole dataset.

    Detections of other categories are ignored with a warning.

    Raises:
        UnknownImageId: a detection references an image not in ds
        UndefinedAp: ds has no annotations
    """
    known = set(ds.image_ids)
    unknown = sorted({d.image_id for d in dets if d.image_id not in known})
    if unknown:
        raise UnknownImageId(f"detections reference unknown image ids {unknown[:10]}")
    n_gt = len(ds.annotations)
    if n_gt == 0:
        raise UndefinedAp("dataset has no annotations to evaluate against")

    foreign = sum(1 for d in dets if d.category_id != 1)
    if foreign:
        logger.warning(f"Ignoring {foreign} detections of other categories", extra={"ignored": foreign})

    gts_by_image = {
        image_id: [PixelBox(*a.bbox) for a in anns]
        for image_id, anns in ds.annotations_by_image().items()
    }
    dets_by_image: Dict[int, List[Tuple[int, Detection]]] = {}
    for order, det in enumerate(dets):
        if det.category_id == 1:
            dets_by_image.setdefault(det.image_id, []).append((order, det))

    per_image = []
    for image_id, indexed in dets_by_image.items():
        image_dets = [d for _, d in indexed]
        gts = gts_by_image[image_id]
        ious = box_iou_matrix([d.bbox for d in image_dets], gts)
        per_image.append((indexed, gts, ious))

    raw: Dict[float, float] = {}
    for thr in ALL_THRESHOLDS:
        records = []
        for indexed, gts, ious in per_image:
            matches = match_detections(gts, [d for _, d in indexed], thr, ious)
            records.extend(
                MatchRecord(indexed[i][1].score, indexed[i][0], gt is not None) for i, gt in matches
            )
        raw[thr] = average_precision(pr_curve(records, n_gt))

    mean_ap = float(np.mean([raw[t] for t in COCO_THRESHOLDS]))
    return ApReport(
        ap=_percent(mean_ap),
        ap50=_percent(raw[0.5]),
        ap15=_percent(raw[LOOSE_THRESHOLD]),
        per_threshold={t: _percent(v) for t, v in raw.items()},
        n_gt=n_gt,
        n_det=len(dets) - foreign,
        raw=raw,
    )


def detections_from_dicts(items: Any) -> List[Detection]:
    if not isinstance(items, list):
        raise MalformedDocument("detections must be a JSON array")
    try:
        return [
            Detection(
                image_id=int(item["image_id"]),
                bbox=PixelBox(*(float(v) for v in item["bbox"])),
                score=float(item["score"]),
                category_id=int(item.get("category_id", 1)),
            )
            for item in items
        ]
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDocument(f"invalid detection entry: {e!r}") from e


def read_detections(path: Union[str, Path]) -> List[Detection]:
    """Read a COCO results JSON array."""
    return detections_from_dicts(read_json(path))


def write_detections(path: Union[str, Path], dets: Sequence[Detection]) -> Path:
    return write_json(path, [d.to_dict() for d in dets])


def write_report_json(path: Union[str, Path], report: ApReport) -> Path:
    return write_json(path, report.to_dict())


def write_report_csv(path: Union[str, Path], report: ApReport) -> Path:
    return write_csv(path, report.to_frame())
