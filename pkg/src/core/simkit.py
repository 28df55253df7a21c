"""
Synthetic scenes and a noise-model mock detector.

synth_scene renders a georeferenced RGB scene with simple tower glyphs so
the ingest/chip/COCO path can run without real imagery. mock_detect turns
ground truth into scored detections through a seeded noise process, which
lets the evaluator and the experiment matrix run without a trained model.

Mock detection draws are coupled: every image gets its own generator
derived from (seed, image_id), each annotation always consumes the same
fixed block of uniforms/normals, and noise parameters only scale those
draws through inverse CDFs. Raising any noise parameter therefore only
removes matches and adds false positives, never reshuffles the rest.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .dataset import (
    BASELINE_SELECTOR,
    LATITUDE,
    LONGITUDE,
    CocoDataset,
    ExperimentMatrix,
)
from .errors import PlacementFailure, UndefinedAp, UnknownSelector, ValidationError
from .evaluation import Detection, evaluate
from .geo import METERS_PER_DEGREE, GeoPoint, GeoTransform, PixelBox, iou, pixel_to_geo
from .ingest import DEFAULT_TAG_KEY, TowerFeature
from .raster import RasterImage
from ..utils.seeding import derive_seed, make_rng
from ..utils.serialization import write_csv

logger = logging.getLogger(__name__)

BACKGROUNDS = ("flat", "speckle")
MIN_SCENE_PX = 512
MAX_PLACEMENT_ATTEMPTS = 1000
MAX_FP_ATTEMPTS = 100
GLYPH_ARM_PX = 18
GLYPH_COLOR = (225, 225, 220)
BACKGROUND_COLOR = (118, 104, 78)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 4096
    height: int = 4096
    gsd_m: float = 0.5
    center: GeoPoint = GeoPoint(35.0, -10.0)
    n_towers: int = 20
    background: str = "speckle"
    seed: int = 42
    scene_id: str = "synthetic"
    min_separation_px: float = 60.0

    def __post_init__(self):
        if self.width < MIN_SCENE_PX or self.height < MIN_SCENE_PX:
            raise ValidationError(
                f"scene must be at least {MIN_SCENE_PX}x{MIN_SCENE_PX}, got {self.width}x{self.height}"
            )
        if self.n_towers < 0:
            raise ValidationError(f"n_towers must be >= 0, got {self.n_towers}")
        if not self.gsd_m > 0:
            raise ValidationError(f"gsd_m must be positive, got {self.gsd_m}")
        if self.background not in BACKGROUNDS:
            raise ValidationError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if "_" in self.scene_id or not self.scene_id:
            raise ValidationError(f"scene_id must be non-empty without underscores, got {self.scene_id!r}")

    def transform(self) -> GeoTransform:
        """North-up transform placing spec.center at the scene's middle pixel."""
        px_y = self.gsd_m / METERS_PER_DEGREE
        px_x = px_y / math.cos(math.radians(self.center.lat))
        return GeoTransform(
            origin_x=self.center.lon - px_x * (self.width - 1) / 2.0,
            origin_y=self.center.lat + px_y * (self.height - 1) / 2.0,
            px_size_x=px_x,
            px_size_y=-px_y,
        )


def _place_towers(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    placed = np.zeros((0, 2))
    for i in range(spec.n_towers):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            candidate = rng.uniform((0.0, 0.0), (spec.width - 1, spec.height - 1))
            if placed.size == 0 or np.min(np.hypot(*(placed - candidate).T)) >= spec.min_separation_px:
                placed = np.vstack([placed, candidate])
                break
        else:
            raise PlacementFailure(
                f"could not place tower {i + 1} of {spec.n_towers} at least "
                f"{spec.min_separation_px:g} px from the others in {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    return placed


def _render_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    pixels = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    pixels[:] = BACKGROUND_COLOR
    if spec.background == "speckle":
        noise = rng.integers(-24, 25, size=(spec.height, spec.width, 1), dtype=np.int16)
        pixels = np.clip(pixels.astype(np.int16) + noise, 0, 255).astype(np.uint8)
    return pixels


def _draw_glyph(pixels: np.ndarray, col: float, row: float) -> None:
    # mast cross with a square lattice frame
    h, w = pixels.shape[:2]
    c, r, a = int(round(col)), int(round(row)), GLYPH_ARM_PX
    x0, x1 = max(c - a, 0), min(c + a + 1, w)
    y0, y1 = max(r - a, 0), min(r + a + 1, h)
    pixels[max(r - 1, 0):min(r + 2, h), x0:x1] = GLYPH_COLOR
    pixels[y0:y1, max(c - 1, 0):min(c + 2, w)] = GLYPH_COLOR
    f = a // 2
    fx0, fx1 = max(c - f, 0), min(c + f + 1, w)
    fy0, fy1 = max(r - f, 0), min(r + f + 1, h)
    for edge_row in (r - f, r + f):
        if 0 <= edge_row < h:
            pixels[edge_row, fx0:fx1] = GLYPH_COLOR
    for edge_col in (c - f, c + f):
        if 0 <= edge_col < w:
            pixels[fy0:fy1, edge_col] = GLYPH_COLOR


def synth_scene(spec: SceneSpec) -> Tuple[RasterImage, List[TowerFeature]]:
    """
    Render a synthetic scene and the tower features it contains.

    Raises:
        PlacementFailure: a tower could not be placed min_separation_px
            away from the others within 1000 attempts
    """
    rng = make_rng(spec.seed, "scene", spec.scene_id)
    positions = _place_towers(spec, rng)
    pixels = _render_background(spec, rng)
    transform = spec.transform()

    features = []
    for i, (col, row) in enumerate(positions):
        _draw_glyph(pixels, col, row)
        features.append(
            TowerFeature(
                id=f"{spec.scene_id}-{i + 1}",
                point=pixel_to_geo(transform, float(col), float(row)),
                tags=((DEFAULT_TAG_KEY, "tower"),),
            )
        )
    logger.info(f"Synthesized scene {spec.scene_id} ({spec.width}x{spec.height}) with {len(features)} towers")
    return RasterImage(pixels, transform, spec.scene_id), features


@dataclass(frozen=True)
class NoiseModel:
    """Perturbation applied to ground truth by the mock detector."""

    loc_sigma_px: float = 0.0
    size_jitter: float = 0.0
    miss_rate: float = 0.0
    fp_per_image: float = 0.0
    score_tp: Tuple[float, float] = (8.0, 2.0)
    score_fp: Tuple[float, float] = (2.0, 8.0)
    seed: int = 42
    fp_box_px: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.loc_sigma_px) and self.loc_sigma_px >= 0):
            raise ValidationError(f"loc_sigma_px must be >= 0, got {self.loc_sigma_px}")
        if not 0.0 <= self.size_jitter < 1.0:
            raise ValidationError(f"size_jitter must be in [0, 1), got {self.size_jitter}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValidationError(f"miss_rate must be in [0, 1], got {self.miss_rate}")
        if not (math.isfinite(self.fp_per_image) and self.fp_per_image >= 0):
            raise ValidationError(f"fp_per_image must be >= 0, got {self.fp_per_image}")
        for name, params in (("score_tp", self.score_tp), ("score_fp", self.score_fp)):
            if len(params) != 2 or min(params) <= 0:
                raise ValidationError(f"{name} needs two positive Beta parameters, got {params}")
        if not self.fp_box_px > 0:
            raise ValidationError(f"fp_box_px must be positive, got {self.fp_box_px}")

    def scaled(self, factor: float) -> "NoiseModel":
        """Degraded copy: jitter, miss rate and false-positive rate multiplied by factor."""
        if factor < 0:
            raise ValidationError(f"noise factor must be >= 0, got {factor}")
        return replace(
            self,
            loc_sigma_px=self.loc_sigma_px * factor,
            miss_rate=min(1.0, self.miss_rate * factor),
            fp_per_image=self.fp_per_image * factor,
        )


@dataclass
class MockStats:
    tp_candidates: int = 0
    missed: int = 0
    false_positives: int = 0


def _false_positive_box(
    rng: np.random.Generator,
    width: int,
    height: int,
    size: float,
    gts: Sequence[PixelBox],
) -> Tuple[PixelBox, float]:
    # boxes overlapping ground truth at the loosest threshold are redrawn
    box, u_score = None, 0.0
    for _ in range(MAX_FP_ATTEMPTS):
        u_x, u_y, u_score = rng.random(3)
        box = PixelBox(u_x * max(width - size, 0.0), u_y * max(height - size, 0.0), size, size)
        if all(iou(box, gt) < 0.15 for gt in gts):
            break
    return box, u_score


def mock_detect_with_stats(ds: CocoDataset, noise: NoiseModel) -> Tuple[List[Detection], MockStats]:
    """Mock detections for every image of ds plus counts of what the noise did."""
    stats_ = MockStats()
    detections: List[Detection] = []
    a_tp, b_tp = noise.score_tp
    a_fp, b_fp = noise.score_fp
    by_image = ds.annotations_by_image()

    for img in ds.images:
        rng = make_rng(noise.seed, "detect", img.id)
        anns = by_image[img.id]
        gts = [PixelBox(*a.bbox) for a in anns]
        normals = rng.standard_normal((len(anns), 2))
        uniforms = rng.random((len(anns), 4))

        for gt, (z_x, z_y), (u_miss, u_w, u_h, u_score) in zip(gts, normals, uniforms):
            if u_miss < noise.miss_rate:
                stats_.missed += 1
                continue
            new_w = gt.w * (1.0 + noise.size_jitter * (2.0 * u_w - 1.0))
            new_h = gt.h * (1.0 + noise.size_jitter * (2.0 * u_h - 1.0))
            x = gt.x + noise.loc_sigma_px * z_x - (new_w - gt.w) / 2.0
            y = gt.y + noise.loc_sigma_px * z_y - (new_h - gt.h) / 2.0
            score = float(stats.beta.ppf(u_score, a_tp, b_tp))
            detections.append(Detection(img.id, PixelBox(x, y, new_w, new_h), score))
            stats_.tp_candidates += 1

        u_count = rng.random()
        n_fp = int(max(stats.poisson.ppf(u_count, noise.fp_per_image), 0)) if noise.fp_per_image > 0 else 0
        for _ in range(n_fp):
            box, u_score = _false_positive_box(rng, img.width, img.height, noise.fp_box_px, gts)
            detections.append(Detection(img.id, box, float(stats.beta.ppf(u_score, a_fp, b_fp))))
        stats_.false_positives += n_fp

    logger.debug(
        f"Mock detection: {stats_.tp_candidates} true-positive candidates, "
        f"{stats_.missed} missed, {stats_.false_positives} false positives"
    )
    return detections, stats_


def mock_detect(ds: CocoDataset, noise: NoiseModel) -> List[Detection]:
    return mock_detect_with_stats(ds, noise)[0]


@dataclass(frozen=True)
class MatrixRow:
    train: str
    eval: str
    ap: float
    ap50: float
    ap15: float


MATRIX_COLUMNS = ["train", "eval", "ap", "ap50", "ap15"]


def run_matrix(
    matrix: ExperimentMatrix,
    strata: Mapping[str, CocoDataset],
    noise: NoiseModel,
    degradation: float = 1.0,
    baseline_factor: float = 1.0,
) -> List[MatrixRow]:
    """
    Evaluate mock detections for every cell of an experiment matrix.

    In-sample cells use noise as given, out-of-sample cells noise scaled by
    degradation and baseline cells noise scaled by baseline_factor. Each
    cell's seed derives from (noise.seed, eval band), so cells sharing an
    evaluation band share one noise realization. Cells whose evaluation
    stratum has no annotations report NaN.

    Raises:
        UnknownSelector: a cell names a band missing from strata
    """
    rows = []
    for cell in matrix:
        if cell.eval not in strata:
            raise UnknownSelector(f"evaluation selector {cell.eval!r} has no stratum")
        if not cell.is_baseline and cell.train not in strata:
            raise UnknownSelector(f"training selector {cell.train!r} has no stratum")

        if cell.in_sample:
            factor = 1.0
        elif cell.is_baseline:
            factor = baseline_factor
        else:
            factor = degradation
        cell_noise = replace(noise.scaled(factor), seed=derive_seed(noise.seed, "cell", cell.eval))

        eval_ds = strata[cell.eval]
        try:
            report = evaluate(eval_ds, mock_detect(eval_ds, cell_noise))
            rows.append(MatrixRow(cell.train, cell.eval, report.ap, report.ap50, report.ap15))
        except UndefinedAp:
            logger.warning(f"No annotations in stratum {cell.eval}; cell ({cell.train}, {cell.eval}) is empty")
            rows.append(MatrixRow(cell.train, cell.eval, math.nan, math.nan, math.nan))
    return rows


def matrix_frame(rows: Sequence[MatrixRow]) -> pd.DataFrame:
    return pd.DataFrame([[r.train, r.eval, r.ap, r.ap50, r.ap15] for r in rows], columns=MATRIX_COLUMNS)


def write_matrix_csv(path: Union[str, Path], rows: Sequence[MatrixRow]) -> Path:
    return write_csv(path, matrix_frame(rows))


def region_table(rows: Sequence[MatrixRow], metric: str = "ap50") -> pd.DataFrame:
    """
    Pivot matrix rows by band level (upper/middle/lower).

    Columns: baseline (the "all" row on the latitude band, else longitude),
    region_latitude and region_longitude (the in-sample cells).
    """
    if metric not in ("ap", "ap50", "ap15"):
        raise ValidationError(f"unknown metric {metric!r}")
    levels: Dict[str, Dict[str, float]] = {}
    baseline_axis: Dict[str, str] = {}
    for row in rows:
        level, _, axis = row.eval.partition("_")
        entry = levels.setdefault(level, {})
        value = getattr(row, metric)
        if row.train == BASELINE_SELECTOR:
            if axis == LATITUDE or baseline_axis.get(level) != LATITUDE:
                entry["baseline"] = value
                baseline_axis[level] = axis
        elif row.train == row.eval and axis in (LATITUDE, LONGITUDE):
            entry[f"region_{axis}"] = value

    frame = pd.DataFrame(
        [
            {
                "evaluation": level,
                "baseline": values.get("baseline", math.nan),
                "region_latitude": values.get("region_latitude", math.nan),
                "region_longitude": values.get("region_longitude", math.nan),
            }
            for level, values in levels.items()
        ],
        columns=["evaluation", "baseline", "region_latitude", "region_longitude"],
    )
    return frame
