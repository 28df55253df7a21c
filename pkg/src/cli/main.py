#!/usr/bin/env python3
"""
towerforge - Command Line Interface

Subcommands mirror the dataset pipeline:

  ingest        OSM GeoJSON -> filtered tower points
  chip          scenes + tower points -> chips, world files, COCO dataset
  split         seeded 80:20 image-level split
  stratify      latitude/longitude band datasets + assignment CSV
  simulate      mock detections for a COCO dataset
  evaluate      AP / AP@50 / AP@15 report for predictions
  report        in-sample / out-of-sample experiment matrix CSV
  synth         synthetic scene + matching tower points
  train-config  Detectron2-style training configuration for a backbone variant

Exit codes: 0 success, 1 I/O failure, 2 validation or configuration error.
"""

import argparse
import sys
import uuid
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from ..config import LoggingConfig, PipelineConfig, load_env_file, load_noise_model, load_pipeline_config, load_scene_spec
from ..core.dataset import (
    bands_for_axes,
    band_summary,
    build_matrix,
    dataset_summary,
    default_bands,
    emit_training_config,
    read_coco,
    split_train_test,
    stratify,
    write_assignments_csv,
    write_coco,
)
from ..core.errors import ConfigError, TowerForgeError
from ..core.evaluation import evaluate, read_detections, write_detections, write_report_csv, write_report_json
from ..core.ingest import StudyRegion, TagFilter, features_to_geojson, parse_tag_pairs
from ..core.pipeline import ChipPipeline, IngestPipeline, stage
from ..core.raster import write_raster
from ..core.simkit import mock_detect_with_stats, region_table, run_matrix, synth_scene, write_matrix_csv
from ..utils.error_tracking import ErrorTracker
from ..utils.logging_config import get_logger, setup_logging as setup_structured_logging
from ..utils.serialization import dumps_stable, write_csv, write_text


def setup_logging(
    verbose: bool = False,
    debug: bool = False,
    quiet: bool = False,
    log_file: Optional[str] = None,
    json_format: bool = False,
    correlation_id: Optional[str] = None,
) -> None:
    """Flags override TOWERFORGE_LOG / TOWERFORGE_LOG_FORMAT / TOWERFORGE_LOG_FILE."""
    env = LoggingConfig()
    if debug:
        level = "DEBUG"
    elif verbose:
        level = "INFO"
    elif quiet:
        level = "ERROR"
    else:
        level = env.log_level

    setup_structured_logging(
        log_level=level,
        log_format="json" if json_format else env.log_format,
        log_file=log_file or env.log_file,
        enable_console=True,
        correlation_id=correlation_id,
    )


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML key-value pipeline configuration file")
    common.add_argument("--seed", type=int, help="Random seed (default: 42)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="Only log errors and skip summaries")
    common.add_argument("--log-file", type=str, help="Also write logs to this file")
    common.add_argument("--json-logs", action="store_true", help="Output logs in JSON format")
    return common


def create_argument_parser() -> argparse.ArgumentParser:
    """Create command line argument parser."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="towerforge",
        description="Cell-tower detection dataset toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  towerforge ingest --osm towers.geojson --urban-mask ucdb.geojson --out towers.filtered.geojson
  towerforge chip scenes/*.png --features towers.filtered.geojson --out build/
  towerforge split --coco build/dataset.json --out build/split
  towerforge stratify --coco build/split/test.json --bands lat --out build/strata
  towerforge evaluate --coco build/split/test.json --predictions preds.json --out report.json
  towerforge report --coco build/split/test.json --bands lat --degradation 2 --out matrix.csv
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="Filter OSM tower points")
    p.add_argument("--osm", required=True, help="OSM GeoJSON FeatureCollection")
    p.add_argument("--urban-mask", help="Urban centre polygons (GeoJSON); stage skipped when absent")
    p.add_argument("--bbox", help="Study region minlon,minlat,maxlon,maxlat (default: 20,-27,57,12)")
    p.add_argument("--min-sep-m", type=float, help="Duplicate separation in meters (default: 10)")
    p.add_argument("--tag", action="append", default=[], metavar="KEY=VALUE", help="Extra required tag (repeatable)")
    p.add_argument("--out", required=True, help="Output GeoJSON path")

    p = sub.add_parser("chip", parents=[common], help="Cut scenes into annotated chips")
    p.add_argument("rasters", nargs="+", help="Scene images with world files")
    p.add_argument("--features", required=True, help="Tower points GeoJSON (output of ingest)")
    p.add_argument("--radius-m", type=float, help="Buffer radius in meters (default: 25)")
    p.add_argument("--gsd-m", type=float, help="Target ground sample distance (default: 0.5)")
    p.add_argument("--chip-px", type=int, help="Chip size in pixels (default: 512)")
    p.add_argument("--include-negatives", action="store_true", default=None, help="Add negative chips to the dataset")
    p.add_argument("--keep-all-chips", action="store_true", default=None, help="Keep every chip instead of one per class")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("split", parents=[common], help="Seeded train/test split")
    p.add_argument("--coco", required=True, help="COCO dataset JSON")
    p.add_argument("--train-fraction", type=float, help="Train share (default: 0.8)")
    p.add_argument("--out", required=True, help="Output directory for train.json and test.json")

    p = sub.add_parser("stratify", parents=[common], help="Split a dataset into region bands")
    p.add_argument("--coco", required=True, help="COCO dataset JSON")
    p.add_argument("--bands", help="Band axes: lat, lon or lat,lon (default: both)")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("simulate", parents=[common], help="Mock detections from a noise model")
    p.add_argument("--coco", required=True, help="Ground-truth COCO dataset JSON")
    p.add_argument("--noise-config", help="YAML noise model")
    p.add_argument("--out", required=True, help="Predictions JSON (COCO results format)")

    p = sub.add_parser("evaluate", parents=[common], help="AP report for predictions")
    p.add_argument("--coco", required=True, help="Ground-truth COCO dataset JSON")
    p.add_argument("--predictions", required=True, help="COCO results JSON")
    p.add_argument("--out", required=True, help="Report path (.json or .csv)")

    p = sub.add_parser("report", parents=[common], help="Experiment matrix over region bands")
    p.add_argument("--coco", required=True, help="Ground-truth COCO dataset JSON (usually the test split)")
    p.add_argument("--bands", help="Band axes: lat, lon or lat,lon (default: both)")
    p.add_argument("--noise-config", help="YAML noise model")
    p.add_argument("--degradation", type=float, default=1.0, help="Noise factor for out-of-sample cells")
    p.add_argument("--baseline-factor", type=float, default=1.0, help="Noise factor for baseline cells")
    p.add_argument("--no-baseline", action="store_true", help="Omit the all-regions baseline cells")
    p.add_argument("--metric", choices=["ap", "ap50", "ap15"], default="ap50", help="Metric for the region table")
    p.add_argument("--table", help="Also write the per-level region table CSV here")
    p.add_argument("--out", required=True, help="Matrix CSV path")

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic scene and its tower points")
    p.add_argument("--scene-config", help="YAML scene specification")
    p.add_argument("--scene-id", help="Scene id (default: synthetic)")
    p.add_argument("--width", type=int, help="Width in pixels (default: 4096)")
    p.add_argument("--height", type=int, help="Height in pixels (default: 4096)")
    p.add_argument("--towers", type=int, help="Number of towers (default: 20)")
    p.add_argument("--center", help="Scene center lon,lat (default: 35,-10)")
    p.add_argument("--background", choices=["flat", "speckle"], help="Background texture")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("train-config", parents=[common], help="Emit a training configuration")
    p.add_argument("variant", help="RN50-HPT, RN50-RI, RN50-INT or RN101-INT")
    p.add_argument("--out", help="Output file (default: stdout)")

    return parser


def _floats(text: str, count: int, what: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"{what} must be {count} comma-separated numbers, got {text!r}") from e
    if len(values) != count:
        raise ConfigError(f"{what} must be {count} comma-separated numbers, got {text!r}")
    return values


def _band_axes(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [a.strip() for a in text.split(",") if a.strip()]


def build_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """Pipeline configuration with flags > --config file > environment > defaults."""
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "buffer_radius_m": getattr(args, "radius_m", None),
        "target_gsd_m": getattr(args, "gsd_m", None),
        "chip_px": getattr(args, "chip_px", None),
        "train_fraction": getattr(args, "train_fraction", None),
        "include_negatives": getattr(args, "include_negatives", None),
        "keep_all_chips": getattr(args, "keep_all_chips", None),
        "min_separation_m": getattr(args, "min_sep_m", None),
        "band_axes": _band_axes(getattr(args, "bands", None)),
    }
    bbox = getattr(args, "bbox", None)
    if bbox is not None:
        overrides["study_region"] = StudyRegion(*_floats(bbox, 4, "--bbox"))
    return load_pipeline_config(args.config, overrides)


def cmd_ingest(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("ingest/config"):
        tag_filter = TagFilter(extra=parse_tag_pairs(args.tag))
    stats = IngestPipeline(config, tag_filter).run(args.osm, args.out, args.urban_mask)
    if not args.quiet:
        print(pd.DataFrame(stats.stage_rows()).to_string(index=False))
        print(f"Wrote {stats.kept} features to {args.out}")
    return 0


def cmd_chip(args: argparse.Namespace, config: PipelineConfig) -> int:
    result = ChipPipeline(config, progress=not args.quiet).run(args.rasters, args.features, args.out)
    if not args.quiet:
        stats = result.stats
        rows = [
            {"scene": scene_id, "positives": c.positives, "negatives": c.negatives, "annotations": c.annotations}
            for scene_id, c in stats.per_scene.items()
        ]
        rows.append(
            {"scene": "total", "positives": stats.positives, "negatives": stats.negatives, "annotations": stats.annotations}
        )
        print(pd.DataFrame(rows).to_string(index=False))
        print(f"Wrote {stats.chips_written} chips and {result.coco_path} ({stats.images} images)")
    return 0


def cmd_split(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("split/read"):
        ds = read_coco(args.coco, config.study_region)
    with stage("split/split"):
        result = split_train_test(ds, config.train_fraction, config.seed)
    out = Path(args.out)
    with stage("split/write"):
        write_coco(result.train, out / "train.json")
        write_coco(result.test, out / "test.json")
    if not args.quiet:
        print(dataset_summary(result).to_string(index=False))
        all_images = result.train.images + result.test.images
        if all(img.geo_center is not None for img in all_images):
            bands = bands_for_axes(default_bands(), config.band_axes)
            print(band_summary(stratify(result.train, bands), stratify(result.test, bands), bands).to_string(index=False))
    return 0


def cmd_stratify(args: argparse.Namespace, config: PipelineConfig) -> int:
    bands = bands_for_axes(default_bands(), config.band_axes)
    with stage("stratify/read"):
        ds = read_coco(args.coco, config.study_region)
    with stage("stratify/assign"):
        result = stratify(ds, bands)
    out = Path(args.out)
    with stage("stratify/write"):
        for name, subset in result.strata.items():
            write_coco(subset, out / f"{name}.json")
        write_assignments_csv(ds, result, out / "assignments.csv")
    if not args.quiet:
        rows = [
            {"band": b.name, "range": b.range_label, "images": len(result[b.name].images),
             "annotations": len(result[b.name].annotations)}
            for b in bands
        ]
        print(pd.DataFrame(rows).to_string(index=False))
        for axis, ids in result.out_of_band.items():
            if ids:
                print(f"{len(ids)} images outside every {axis} band")
    return 0


def cmd_simulate(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("simulate/config"):
        noise = load_noise_model(args.noise_config, seed=args.seed)
    with stage("simulate/read"):
        ds = read_coco(args.coco, config.study_region)
    dets, mock_stats = mock_detect_with_stats(ds, noise)
    with stage("simulate/write"):
        write_detections(args.out, dets)
    if not args.quiet:
        print(
            f"{len(dets)} detections: {mock_stats.tp_candidates} from ground truth, "
            f"{mock_stats.missed} missed, {mock_stats.false_positives} false positives"
        )
    return 0


def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("evaluate/read"):
        ds = read_coco(args.coco, config.study_region)
        dets = read_detections(args.predictions)
    with stage("evaluate/score"):
        report = evaluate(ds, dets)
    with stage("evaluate/write"):
        if Path(args.out).suffix.lower() == ".csv":
            write_report_csv(args.out, report)
        else:
            write_report_json(args.out, report)
    if not args.quiet:
        print(f"AP {report.ap:.1f}  AP@50 {report.ap50:.1f}  AP@15 {report.ap15:.1f}")
    return 0


def cmd_report(args: argparse.Namespace, config: PipelineConfig) -> int:
    bands = bands_for_axes(default_bands(), config.band_axes)
    with stage("report/config"):
        noise = load_noise_model(args.noise_config, seed=args.seed)
    with stage("report/read"):
        ds = read_coco(args.coco, config.study_region)
    with stage("report/stratify"):
        strata = stratify(ds, bands).strata
        matrix = build_matrix(bands, include_baseline=not args.no_baseline)
    with stage("report/run"):
        rows = run_matrix(matrix, strata, noise, degradation=args.degradation, baseline_factor=args.baseline_factor)
    with stage("report/write"):
        write_matrix_csv(args.out, rows)
        if args.table:
            write_csv(args.table, region_table(rows, args.metric))
    if not args.quiet:
        print(region_table(rows, args.metric).to_string(index=False))
        print(f"Wrote {len(rows)} matrix rows to {args.out}")
    return 0


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("synth/config"):
        center = _floats(args.center, 2, "--center") if args.center else None
        spec = load_scene_spec(
            args.scene_config,
            scene_id=args.scene_id,
            width=args.width,
            height=args.height,
            n_towers=args.towers,
            center=center,
            background=args.background,
            seed=args.seed,
        )
    with stage("synth/render"):
        raster, features = synth_scene(spec)
    out = Path(args.out)
    with stage("synth/write"):
        image_path = write_raster(raster, out / f"{spec.scene_id}.png")
        features_path = write_text(out / f"{spec.scene_id}.geojson", dumps_stable(features_to_geojson(features)))
    if not args.quiet:
        print(f"Wrote {image_path} and {features_path} ({len(features)} towers)")
    return 0


def cmd_train_config(args: argparse.Namespace, config: PipelineConfig) -> int:
    with stage("train-config"):
        text = emit_training_config(args.variant)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "chip": cmd_chip,
    "split": cmd_split,
    "stratify": cmd_stratify,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "synth": cmd_synth,
    "train-config": cmd_train_config,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = create_argument_parser()
    args = parser.parse_args(argv)
    tracker = ErrorTracker()

    try:
        load_env_file()
        correlation_id = str(uuid.uuid4())
        setup_logging(
            verbose=args.verbose,
            debug=args.debug,
            quiet=args.quiet,
            log_file=args.log_file,
            json_format=args.json_logs,
            correlation_id=correlation_id,
        )
        logger = get_logger(__name__, correlation_id=correlation_id, extra={"command": args.command})
        logger.debug(f"Running {args.command}")

        with stage(f"{args.command}/config"):
            config = build_pipeline_config(args)
        return COMMANDS[args.command](args, config)

    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 1
    except TowerForgeError as e:
        code = tracker.capture_exception(e)
        print(f"Error [{e.stage or args.command}]: {e}", file=sys.stderr)
        return code
    except OSError as e:
        code = tracker.capture_exception(e, stage=args.command)
        print(f"Error [{args.command}]: {e}", file=sys.stderr)
        return code
    except Exception as e:
        code = tracker.capture_exception(e, stage=args.command)
        if args.debug:
            import traceback

            traceback.print_exc()
        print(f"Fatal error [{args.command}]: {e}", file=sys.stderr)
        return code


def cli_entry_point():
    """Entry point for console script."""
    sys.exit(main())


if __name__ == "__main__":
    cli_entry_point()
