"""
Application Configuration Module

Pipeline settings come from, in increasing precedence: built-in defaults,
TOWERFORGE_* environment variables (optionally loaded from a .env file),
a YAML key-value file passed with --config, and command-line flags.
"""

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, TypeVar, Union

import yaml
from dotenv import load_dotenv

from .core.dataset import AXES, AXIS_ALIASES, DEFAULT_TRAIN_FRACTION
from .core.errors import ConfigError, IoFailure, TowerForgeError
from .core.geo import GeoPoint
from .core.ingest import DEFAULT_MIN_SEPARATION_M, StudyRegion
from .core.raster import DEFAULT_CHIP_PX, DEFAULT_JPEG_QUALITY, DEFAULT_TARGET_GSD_M, validate_buffer
from .core.simkit import NoiseModel, SceneSpec

T = TypeVar("T")

DEFAULT_BUFFER_RADIUS_M = 25.0
DEFAULT_SEED = 42


def _env(name: str, default: T, cast: Callable[[str], T]) -> T:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"environment variable {name}={raw!r} is invalid: {e}") from e


def _as_bool(raw: Union[str, bool]) -> bool:
    if isinstance(raw, bool):
        return raw
    value = str(raw).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class PipelineConfig:
    """Settings shared by the ingest, chip, split and stratify stages."""

    buffer_radius_m: float = field(default_factory=lambda: _env("TOWERFORGE_RADIUS_M", DEFAULT_BUFFER_RADIUS_M, float))
    target_gsd_m: float = field(default_factory=lambda: _env("TOWERFORGE_GSD_M", DEFAULT_TARGET_GSD_M, float))
    chip_px: int = field(default_factory=lambda: _env("TOWERFORGE_CHIP_PX", DEFAULT_CHIP_PX, int))
    train_fraction: float = field(
        default_factory=lambda: _env("TOWERFORGE_TRAIN_FRACTION", DEFAULT_TRAIN_FRACTION, float)
    )
    include_negatives: bool = field(default_factory=lambda: _env("TOWERFORGE_INCLUDE_NEGATIVES", False, _as_bool))
    seed: int = field(default_factory=lambda: _env("TOWERFORGE_SEED", DEFAULT_SEED, int))
    study_region: StudyRegion = field(default_factory=StudyRegion)
    band_axes: Tuple[str, ...] = AXES
    min_separation_m: float = DEFAULT_MIN_SEPARATION_M
    keep_all_chips: bool = False
    jpeg_quality: int = DEFAULT_JPEG_QUALITY

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.chip_px < 1:
            raise ConfigError(f"chip_px must be positive, got {self.chip_px}")
        if self.min_separation_m < 0:
            raise ConfigError(f"min_separation_m cannot be negative, got {self.min_separation_m}")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError(f"jpeg_quality must be in [1, 100], got {self.jpeg_quality}")
        unknown_axes = [a for a in self.band_axes if a not in AXIS_ALIASES]
        if unknown_axes or not self.band_axes:
            raise ConfigError(f"band_axes must be a non-empty subset of lat/lon, got {self.band_axes}")
        self.band_axes = tuple(dict.fromkeys(AXIS_ALIASES[a] for a in self.band_axes))
        validate_buffer(self.buffer_radius_m, self.target_gsd_m, self.chip_px)


@dataclass
class LoggingConfig:
    """Configuration for logging."""

    log_level: str = field(default_factory=lambda: os.getenv("TOWERFORGE_LOG", "WARNING"))
    log_format: str = field(default_factory=lambda: os.getenv("TOWERFORGE_LOG_FORMAT", "text"))
    log_file: Optional[str] = field(default_factory=lambda: os.getenv("TOWERFORGE_LOG_FILE"))

    def __post_init__(self):
        self._validate()

    def _validate(self):
        allowed_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if self.log_level.upper() not in allowed_levels:
            raise ConfigError(f"log_level must be one of: {allowed_levels}")

        allowed_formats = ["text", "json"]
        if self.log_format.lower() not in allowed_formats:
            raise ConfigError(f"log_format must be one of: {allowed_formats}")

        self.log_level = self.log_level.upper()
        self.log_format = self.log_format.lower()


def load_env_file(env_file: Union[str, Path] = ".env") -> None:
    """Load a .env file without overriding variables already set."""
    env_path = Path(env_file)
    if env_path.exists():
        load_dotenv(env_path, override=False)


def read_yaml_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML file whose top level is a key-value mapping (empty file gives {})."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"could not read config file {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a key-value mapping")
    return dict(data)


def _coerce_pipeline_values(values: Dict[str, Any]) -> Dict[str, Any]:
    coerced = dict(values)
    region = coerced.get("study_region")
    if region is not None and not isinstance(region, StudyRegion):
        if isinstance(region, Mapping):
            coerced["study_region"] = StudyRegion(**{k: float(v) for k, v in region.items()})
        else:
            coerced["study_region"] = StudyRegion(*(float(v) for v in region))
    axes = coerced.get("band_axes")
    if isinstance(axes, str):
        coerced["band_axes"] = tuple(a.strip() for a in axes.split(",") if a.strip())
    elif axes is not None:
        coerced["band_axes"] = tuple(axes)
    for key in ("include_negatives", "keep_all_chips"):
        if key in coerced:
            coerced[key] = _as_bool(coerced[key])
    return coerced


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """
    Build a PipelineConfig with precedence overrides > file > environment > defaults.

    Override entries whose value is None are ignored, so unset CLI flags
    fall through to the file.

    Raises:
        ConfigError: unknown keys or uncastable values
        BufferTooLarge: the buffer does not fit a quarter chip
    """
    known = {f.name for f in fields(PipelineConfig)}
    values: Dict[str, Any] = {}
    if path is not None:
        file_values = read_yaml_mapping(path)
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys in {path}: {unknown}")
        values.update(file_values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return PipelineConfig(**_coerce_pipeline_values(values))
    except TowerForgeError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid pipeline configuration: {e}") from e


def load_noise_model(path: Optional[Union[str, Path]] = None, **overrides: Any) -> NoiseModel:
    """NoiseModel from a YAML key-value file; keyword overrides win."""
    values = read_yaml_mapping(path) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(NoiseModel)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown noise model keys: {unknown}")
    try:
        for key in ("score_tp", "score_fp"):
            if key in values:
                values[key] = tuple(float(v) for v in values[key])
        return NoiseModel(**values)
    except TowerForgeError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid noise model: {e}") from e


def load_scene_spec(path: Optional[Union[str, Path]] = None, **overrides: Any) -> SceneSpec:
    """SceneSpec from a YAML key-value file; center is {lon, lat} or [lon, lat]."""
    values = read_yaml_mapping(path) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(SceneSpec)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown scene keys: {unknown}")
    try:
        center = values.get("center")
        if isinstance(center, Mapping):
            values["center"] = GeoPoint(float(center["lon"]), float(center["lat"]))
        elif center is not None and not isinstance(center, GeoPoint):
            lon, lat = center
            values["center"] = GeoPoint(float(lon), float(lat))
        if "scene_id" in values:
            values["scene_id"] = str(values["scene_id"])
        return SceneSpec(**values)
    except TowerForgeError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid scene specification: {e}") from e
