"""
Stage orchestration for the ingest and chip commands.

Each pipeline run gets a correlation id, tracks per-stage counts in a
stats dataclass and logs its duration. Errors leaving a stage are tagged
with that stage ("ingest/parse", "chip/resample", ...) so the CLI can
report where a run failed.
"""

import time
import uuid
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .dataset import CocoDataset, to_coco, write_coco
from .errors import DuplicateChip, TowerForgeError
from .ingest import (
    TagFilter,
    dedupe,
    exclude_urban,
    features_to_geojson,
    filter_study_region,
    load_urban_mask,
    parse_features,
)
from .raster import (
    Chip,
    ChipPlan,
    assign_annotations,
    boxes_for_features,
    chip_grid,
    load_raster,
    resample_to_gsd,
    select_samples,
    validate_buffer,
    write_chip,
)
from ..config import PipelineConfig
from ..utils.logging_config import LogContext, get_logger, log_performance
from ..utils.serialization import dumps_stable, read_bytes, write_text

PathLike = Union[str, Path]

COCO_FILE_NAME = "dataset.json"
CHIP_DIR_NAME = "chips"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag library errors raised inside the block with a stage name."""
    try:
        yield
    except TowerForgeError as e:
        if e.stage is None:
            e.stage = name
        raise


@dataclass
class IngestStats:
    """Per-stage counts of an ingest run."""

    total_seen: int = 0
    dropped_geometry: int = 0
    dropped_tags: int = 0
    dropped_invalid: int = 0
    parsed: int = 0
    outside_region: int = 0
    in_region: int = 0
    urban_removed: int = 0
    urban_skipped: bool = True
    duplicates_removed: int = 0
    kept: int = 0
    elapsed_time: float = 0.0

    def stage_rows(self) -> List[Dict[str, Union[str, int]]]:
        """One row per stage: stage name, features kept, features dropped."""
        parse_dropped = self.dropped_geometry + self.dropped_tags + self.dropped_invalid
        urban_kept = self.in_region - self.urban_removed
        return [
            {"stage": "parse", "kept": self.parsed, "dropped": parse_dropped},
            {"stage": "region", "kept": self.in_region, "dropped": self.outside_region},
            {
                "stage": "urban (skipped)" if self.urban_skipped else "urban",
                "kept": urban_kept,
                "dropped": self.urban_removed,
            },
            {"stage": "dedupe", "kept": self.kept, "dropped": self.duplicates_removed},
        ]


class IngestPipeline:
    """parse -> study region -> urban exclusion -> dedupe -> GeoJSON."""

    def __init__(self, config: PipelineConfig, tag_filter: Optional[TagFilter] = None):
        self.config = config
        self.tag_filter = tag_filter or TagFilter()
        self.correlation_id = str(uuid.uuid4())
        self.logger = get_logger(__name__, correlation_id=self.correlation_id)
        self.stats = IngestStats()

    def run(self, osm_path: PathLike, out_path: PathLike, urban_mask_path: Optional[PathLike] = None) -> IngestStats:
        start = time.time()
        self.logger.info(f"Starting ingest: {osm_path} -> {out_path}")

        with LogContext(stage="ingest"):
            with stage("ingest/read"):
                document = read_bytes(osm_path)
            with stage("ingest/parse"):
                parsed = parse_features(document, self.tag_filter)
            self.stats.total_seen = parsed.total_seen
            self.stats.dropped_geometry = parsed.dropped_geometry
            self.stats.dropped_tags = parsed.dropped_tags
            self.stats.dropped_invalid = parsed.dropped_invalid
            self.stats.parsed = len(parsed.features)

            with stage("ingest/region"):
                in_region = filter_study_region(parsed.features, self.config.study_region)
            self.stats.in_region = len(in_region)
            self.stats.outside_region = self.stats.parsed - len(in_region)

            features = in_region
            if urban_mask_path is not None:
                with stage("ingest/urban"):
                    mask = load_urban_mask(read_bytes(urban_mask_path))
                    exclusion = exclude_urban(in_region, mask)
                features = exclusion.features
                self.stats.urban_removed = exclusion.removed
                self.stats.urban_skipped = False
            else:
                self.logger.info("No urban mask given; urban exclusion skipped")

            with stage("ingest/dedupe"):
                kept = dedupe(features, self.config.min_separation_m)
            self.stats.duplicates_removed = len(features) - len(kept)
            self.stats.kept = len(kept)

            with stage("ingest/write"):
                write_text(out_path, dumps_stable(features_to_geojson(kept)))

        self.stats.elapsed_time = time.time() - start
        log_performance(self.logger, "ingest", self.stats.elapsed_time * 1000, extra=asdict(self.stats))
        return self.stats


@dataclass
class SceneCounts:
    windows: int = 0
    positives: int = 0
    negatives: int = 0
    annotations: int = 0
    dropped_boxes: int = 0


@dataclass
class ChipStats:
    scenes: int = 0
    windows: int = 0
    positives: int = 0
    negatives: int = 0
    annotations: int = 0
    dropped_boxes: int = 0
    chips_written: int = 0
    images: int = 0
    elapsed_time: float = 0.0
    per_scene: Dict[str, SceneCounts] = field(default_factory=dict)


@dataclass
class ChipResult:
    stats: ChipStats
    plan: ChipPlan
    dataset: CocoDataset
    coco_path: Path


def _released(chip: Chip) -> Chip:
    # the scene buffer is dropped once the chip is on disk
    return replace(chip, pixels=np.zeros((0, 0, 3), dtype=np.uint8))


class ChipPipeline:
    """
    Per scene: load -> resample -> buffer features -> grid -> assign -> select -> write.

    Selected chips land in <out>/chips as JPEG plus world file; the COCO
    dataset for all scenes is written to <out>/dataset.json.
    """

    def __init__(self, config: PipelineConfig, progress: bool = False):
        self.config = config
        self.progress = progress
        self.correlation_id = str(uuid.uuid4())
        self.logger = get_logger(__name__, correlation_id=self.correlation_id)
        self.stats = ChipStats()

    def run(self, raster_paths: Sequence[PathLike], features_path: PathLike, out_dir: PathLike) -> ChipResult:
        start = time.time()
        cfg = self.config
        out_dir = Path(out_dir)
        chip_dir = out_dir / CHIP_DIR_NAME

        with stage("chip/config"):
            validate_buffer(cfg.buffer_radius_m, cfg.target_gsd_m, cfg.chip_px)
        with stage("chip/features"):
            features = parse_features(read_bytes(features_path)).features
        self.logger.info(f"Chipping {len(raster_paths)} scenes with {len(features)} features")

        plan = ChipPlan()
        seen_scenes = set()
        for path in tqdm(raster_paths, desc="scenes", unit="scene", disable=not self.progress):
            with stage("chip/raster"):
                raster = load_raster(path)
                if raster.scene_id in seen_scenes:
                    raise DuplicateChip(f"scene id {raster.scene_id!r} appears in more than one raster")
                seen_scenes.add(raster.scene_id)

            with LogContext(stage="chip", scene_id=raster.scene_id):
                with stage("chip/resample"):
                    raster = resample_to_gsd(raster, cfg.target_gsd_m)
                with stage("chip/buffer"):
                    boxes = boxes_for_features(features, raster, cfg.buffer_radius_m)
                with stage("chip/grid"):
                    windows = chip_grid(raster, cfg.chip_px)
                with stage("chip/assign"):
                    assigned = assign_annotations(raster, windows, boxes)
                with stage("chip/select"):
                    scene_plan = select_samples(assigned.chips, cfg.seed, keep_all=cfg.keep_all_chips)
                with stage("chip/write"):
                    selected = scene_plan.positives + (scene_plan.negatives if cfg.include_negatives else [])
                    for chip in selected:
                        write_chip(chip, chip_dir, quality=cfg.jpeg_quality)

            plan = plan.merge(
                ChipPlan(
                    positives=[_released(c) for c in scene_plan.positives],
                    negatives=[_released(c) for c in scene_plan.negatives],
                )
            )
            counts = SceneCounts(
                windows=len(windows),
                positives=len(scene_plan.positives),
                negatives=len(scene_plan.negatives),
                annotations=scene_plan.n_annotations,
                dropped_boxes=assigned.dropped,
            )
            self._record_scene(raster.scene_id, counts, len(selected))

        with stage("chip/coco"):
            dataset = to_coco(plan, include_negatives=cfg.include_negatives)
            coco_path = write_coco(dataset, out_dir / COCO_FILE_NAME)
        self.stats.images = len(dataset.images)

        self.stats.elapsed_time = time.time() - start
        summary = {k: v for k, v in asdict(self.stats).items() if k != "per_scene"}
        log_performance(self.logger, "chip", self.stats.elapsed_time * 1000, extra=summary)
        return ChipResult(stats=self.stats, plan=plan, dataset=dataset, coco_path=coco_path)

    def _record_scene(self, scene_id: str, counts: SceneCounts, written: int) -> None:
        s = self.stats
        s.scenes += 1
        s.windows += counts.windows
        s.positives += counts.positives
        s.negatives += counts.negatives
        s.annotations += counts.annotations
        s.dropped_boxes += counts.dropped_boxes
        s.chips_written += written
        s.per_scene[scene_id] = counts
        self.logger.info(
            f"Scene {scene_id}: {counts.windows} windows, {counts.positives} positive, "
            f"{counts.negatives} negative, {counts.annotations} annotations",
            extra={"scene_id": scene_id},
        )
