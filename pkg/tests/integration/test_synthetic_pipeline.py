"""
Integration Tests for the Dataset Pipeline

Runs synthetic scenes through ingest, chipping, COCO export, splitting,
stratification, mock detection and evaluation, both through the library
and through the CLI.
"""

import json
from pathlib import Path

import pytest

from src.cli.main import main
from src.config import PipelineConfig
from src.core.dataset import CocoDataset, read_coco, to_coco, write_coco
from src.core.errors import DuplicateChip
from src.core.evaluation import ALL_THRESHOLDS, evaluate
from src.core.geo import GeoPoint
from src.core.ingest import features_to_geojson
from src.core.pipeline import ChipPipeline, IngestPipeline
from src.core.raster import (
    assign_annotations,
    boxes_for_features,
    chip_grid,
    resample_to_gsd,
    select_samples,
    write_raster,
)
from src.core.simkit import NoiseModel, SceneSpec, mock_detect, synth_scene
from src.utils.serialization import write_json


def write_scene(directory: Path, spec: SceneSpec) -> Path:
    raster, features = synth_scene(spec)
    path = write_raster(raster, directory / f"{spec.scene_id}.png")
    write_json(directory / f"{spec.scene_id}.geojson", features_to_geojson(features))
    return path


def merge_feature_files(paths, out: Path) -> Path:
    features = []
    for path in paths:
        features.extend(json.loads(Path(path).read_text(encoding="utf-8"))["features"])
    return write_json(out, {"type": "FeatureCollection", "features": features})


@pytest.fixture
def two_scenes(temp_dir):
    """Two small flat scenes with two towers each, plus their merged tower points."""
    scenes = temp_dir / "scenes"
    paths = [
        write_scene(scenes, SceneSpec(1024, 1024, n_towers=2, background="flat", seed=1, scene_id="alpha")),
        write_scene(
            scenes,
            SceneSpec(1024, 1024, n_towers=2, background="flat", seed=2, scene_id="beta", center=GeoPoint(30.0, 5.0)),
        ),
    ]
    features = merge_feature_files([p.with_suffix(".geojson") for p in paths], temp_dir / "features.geojson")
    return paths, features


@pytest.mark.integration
class TestFullScene:
    """A 4096 px scene with 20 towers, in memory."""

    def test_chip_export_and_evaluate(self, temp_dir):
        """64 windows, 20 annotations, lossless COCO and perfect zero-noise scores."""
        raster, features = synth_scene(SceneSpec(seed=42))

        assert resample_to_gsd(raster, 0.5) is raster
        boxes = boxes_for_features(features, raster, 25.0)
        assert len(boxes) == 20
        assert all(abs(b.w - 100.0) <= 1.0 and abs(b.h - 100.0) <= 1.0 for b in boxes)

        windows = chip_grid(raster, 512)
        assert len(windows) == 64
        assigned = assign_annotations(raster, windows, boxes)
        assert assigned.dropped == 0

        plan = select_samples(assigned.chips, seed=42, keep_all=True)
        assert plan.n_annotations == 20
        assert len(plan.positives) + len(plan.negatives) == 64

        ds = to_coco(plan, include_negatives=True)
        assert len(ds.images) == 64
        assert len(ds.annotations) == 20
        assert read_coco(write_coco(ds, temp_dir / "full.json")) == ds

        report = evaluate(ds, mock_detect(ds, NoiseModel()))
        assert all(report.per_threshold[t] == 100.0 for t in ALL_THRESHOLDS)

    def test_one_positive_one_negative(self):
        """Default selection keeps one chip of each kind."""
        raster, features = synth_scene(SceneSpec(seed=42))
        assigned = assign_annotations(raster, chip_grid(raster, 512), boxes_for_features(features, raster, 25.0))
        plan = select_samples(assigned.chips, seed=42)

        assert len(plan.positives) == 1
        assert len(plan.negatives) == 1
        assert plan.positives[0].annotations


@pytest.mark.integration
class TestIngestPipeline:
    """Test IngestPipeline end to end."""

    def test_stage_counts(self, osm_file, urban_file, temp_dir, clean_env):
        """Every stage reports what it kept and dropped."""
        out = temp_dir / "out.geojson"
        stats = IngestPipeline(PipelineConfig()).run(osm_file, out, urban_file)

        assert stats.total_seen == 7
        assert stats.parsed == 5
        assert stats.outside_region == 1
        assert stats.urban_removed == 1
        assert stats.duplicates_removed == 1
        assert stats.kept == 2
        assert [row["stage"] for row in stats.stage_rows()] == ["parse", "region", "urban", "dedupe"]
        assert len(json.loads(out.read_text(encoding="utf-8"))["features"]) == 2

    def test_output_is_stable(self, osm_file, urban_file, temp_dir, clean_env):
        """Two runs write identical bytes."""
        a, b = temp_dir / "a.geojson", temp_dir / "b.geojson"
        IngestPipeline(PipelineConfig()).run(osm_file, a, urban_file)
        IngestPipeline(PipelineConfig()).run(osm_file, b, urban_file)

        assert a.read_bytes() == b.read_bytes()


@pytest.mark.integration
class TestChipPipeline:
    """Test ChipPipeline on scenes written to disk."""

    def test_default_selection(self, two_scenes, temp_dir, clean_env):
        """One positive per scene in the dataset; negatives are chosen but not exported."""
        rasters, features = two_scenes
        result = ChipPipeline(PipelineConfig()).run(rasters, features, temp_dir / "build")

        assert result.stats.scenes == 2
        assert result.stats.windows == 8
        assert result.stats.positives == 2
        assert result.stats.negatives == 2
        assert result.stats.chips_written == 2
        assert [img.scene_id for img in result.dataset.images] == ["alpha", "beta"]
        assert read_coco(result.coco_path) == result.dataset
        assert sorted(p.name for p in (temp_dir / "build" / "chips").glob("*.jpg")) == sorted(
            img.file_name for img in result.dataset.images
        )

    def test_negatives_included(self, two_scenes, temp_dir, clean_env):
        """include_negatives exports the negative chips as empty images."""
        rasters, features = two_scenes
        result = ChipPipeline(PipelineConfig(include_negatives=True)).run(rasters, features, temp_dir / "build")

        assert len(result.dataset.images) == 4
        assert sum(1 for img in result.dataset.images if not result.dataset.annotations_by_image()[img.id]) == 2

    def test_geo_centers_follow_scenes(self, two_scenes, temp_dir, clean_env):
        """Chip centers lie near their scene centers."""
        rasters, features = two_scenes
        ds = ChipPipeline(PipelineConfig(keep_all_chips=True)).run(rasters, features, temp_dir / "build").dataset

        for img in ds.images:
            expected = GeoPoint(35.0, -10.0) if img.scene_id == "alpha" else GeoPoint(30.0, 5.0)
            assert abs(img.geo_center.lon - expected.lon) < 0.01
            assert abs(img.geo_center.lat - expected.lat) < 0.01

    def test_duplicate_scene_ids(self, two_scenes, temp_dir, clean_env):
        """The same scene twice is refused at the raster stage."""
        rasters, features = two_scenes

        with pytest.raises(DuplicateChip) as exc_info:
            ChipPipeline(PipelineConfig()).run([rasters[0], rasters[0]], features, temp_dir / "build")

        assert exc_info.value.stage == "chip/raster"


def run_cli_chain(work: Path) -> Path:
    scenes = work / "scenes"
    build = work / "build"
    commands = [
        ["synth", "--width", "1024", "--height", "1024", "--towers", "3", "--background", "flat",
         "--scene-id", "chain", "--seed", "3", "--out", str(scenes)],
        ["chip", str(scenes / "chain.png"), "--features", str(scenes / "chain.geojson"),
         "--keep-all-chips", "--include-negatives", "--out", str(build)],
        ["split", "--coco", str(build / "dataset.json"), "--out", str(build / "split")],
        ["stratify", "--coco", str(build / "dataset.json"), "--out", str(build / "strata")],
        ["simulate", "--coco", str(build / "dataset.json"), "--out", str(build / "preds.json")],
        ["evaluate", "--coco", str(build / "dataset.json"), "--predictions", str(build / "preds.json"),
         "--out", str(build / "report.json")],
        ["report", "--coco", str(build / "dataset.json"), "--degradation", "2", "--out", str(build / "matrix.csv")],
    ]
    for argv in commands:
        assert main(argv + ["-q"]) == 0, argv
    return build


@pytest.mark.integration
class TestCliChain:
    """The whole command chain through main()."""

    def test_chain_is_deterministic(self, temp_dir, clean_env):
        """Two runs of the chain produce byte-identical outputs."""
        a = run_cli_chain(temp_dir / "a")
        b = run_cli_chain(temp_dir / "b")

        for rel in [
            "dataset.json",
            "split/train.json",
            "split/test.json",
            "strata/middle_latitude.json",
            "strata/assignments.csv",
            "preds.json",
            "report.json",
            "matrix.csv",
            "chips/chain_0_0.jpg",
        ]:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

        report = json.loads((a / "report.json").read_text(encoding="utf-8"))
        assert report["ap50"] == 100.0
        assert len(CocoDataset.from_dict(json.loads((a / "dataset.json").read_text(encoding="utf-8"))).images) == 4

    @pytest.mark.slow
    def test_full_size_scene_via_cli(self, temp_dir, clean_env):
        """Default 4096 px synthetic scene chipped through the CLI."""
        scenes, build = temp_dir / "scenes", temp_dir / "build"

        assert main(["synth", "--out", str(scenes), "-q"]) == 0
        assert main([
            "chip", str(scenes / "synthetic.png"), "--features", str(scenes / "synthetic.geojson"),
            "--keep-all-chips", "--include-negatives", "--out", str(build), "-q",
        ]) == 0

        ds = read_coco(build / "dataset.json")
        assert len(ds.images) == 64
        assert len(ds.annotations) == 20
