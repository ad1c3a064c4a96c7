"""Run configuration: a flat JSON file with four sections.

The file holds at most the objects ``data``, ``architecture``, ``training``,
and ``tracking``; every field is optional and falls back to the documented
default.  Unknown sections or keys are rejected outright so a misspelled
hyperparameter can never be ignored silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .heads import DOWNSAMPLE


@dataclass(frozen=True)
class DataConfig:
    """Scenario set location plus the synthesis knobs used by ``generate``.

    ``scenarios`` points at a scenario directory or a directory of them.
    The remaining fields control synthesis: ``count`` scenarios of
    ``frames`` frames on a ``grid`` of cells, each with ``objects`` movers
    whose speeds and per-frame turn rates are drawn uniformly from the given
    ranges, and rendering corruption levels matching the noise settings of
    the scenario generator.
    """

    scenarios: str | None = None
    count: int = 3
    frames: int = 12
    grid: tuple[int, int] = (64, 64)
    cell_size: float = 1.0
    objects: int = 2
    speed_min: float = 0.5
    speed_max: float = 1.5
    turn_rate_max: float = 0.0
    background: float = 0.0
    ghost_probability: float = 0.0
    blur: float = 0.0
    dropout: float = 0.0


@dataclass(frozen=True)
class ArchitectureConfig:
    """Detector shape: clip length, selection size, and relation stack."""

    frames: int = 2
    top_k: int = 8
    channels: int = 32
    pos_dim: int = 64
    attention_heads: int = 4
    relation: str = "windowed"
    window: int = 2
    patch: int | None = None
    slot_stride: int | None = None
    stages: int = 1
    window_repeats: int = 2
    regroup_repeats: int = 2
    merge: str = "max"
    downsample: int = DOWNSAMPLE


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization settings; ``resume`` continues from a checkpoint path."""

    steps: int = 200
    learning_rate: float = 5e-4
    resume: str | None = None


@dataclass(frozen=True)
class TrackingConfig:
    """Tracker thresholds and the per-detection displacement query depth."""

    angle_weight: float = 0.5
    score_gate: float = 0.08
    spawn_threshold: float = 0.20
    association: str = "motion"
    match_gate: float | None = None
    max_misses: int = 5
    max_detections: int = 8
    max_lag: int = 3


@dataclass(frozen=True)
class Config:
    data: DataConfig = DataConfig()
    architecture: ArchitectureConfig = ArchitectureConfig()
    training: TrainingConfig = TrainingConfig()
    tracking: TrackingConfig = TrackingConfig()


_SECTIONS = {"data": DataConfig, "architecture": ArchitectureConfig,
             "training": TrainingConfig, "tracking": TrackingConfig}


def _build_section(section_cls, section: str, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    allowed = {f.name for f in fields(section_cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown {section} keys: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}")
    values = {key: tuple(val) if isinstance(val, list) else val
              for key, val in raw.items()}
    return section_cls(**values)


def config_from_dict(raw: dict) -> Config:
    """Build and validate a configuration from parsed JSON."""
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a JSON object")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(
            f"unknown config sections: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(_SECTIONS))}")
    config = Config(**{name: _build_section(cls, name, raw[name])
                       for name, cls in _SECTIONS.items() if name in raw})
    validate_config(config)
    return config


def load_config(path: str | Path) -> Config:
    """Read and validate a JSON configuration file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return config_from_dict(raw)


def validate_config(config: Config) -> None:
    """Range and consistency checks beyond plain key validation."""
    data, arch = config.data, config.architecture
    training, tracking = config.training, config.tracking
    if arch.downsample != DOWNSAMPLE:
        raise ConfigError(
            f"the encoder downsamples by a fixed factor {DOWNSAMPLE}; "
            f"got downsample={arch.downsample}")
    if arch.frames < 1:
        raise ConfigError("architecture.frames must be at least 1")
    if arch.relation not in ("windowed", "pair", "none"):
        raise ConfigError(
            f"architecture.relation must be windowed, pair or none, got {arch.relation!r}")
    if arch.merge not in ("max", "mean", "sum"):
        raise ConfigError(
            f"architecture.merge must be max, mean or sum, got {arch.merge!r}")
    if training.steps < 1:
        raise ConfigError("training.steps must be at least 1")
    if training.learning_rate <= 0.0:
        raise ConfigError("training.learning_rate must be positive")
    if not 0.0 <= tracking.angle_weight <= 1.0:
        raise ConfigError("tracking.angle_weight must lie in [0, 1]")
    if tracking.max_detections < 1:
        raise ConfigError("tracking.max_detections must be at least 1")
    if tracking.max_lag < 0:
        raise ConfigError("tracking.max_lag must be non-negative")
    if tracking.association not in ("motion", "overlap"):
        raise ConfigError(
            f"tracking.association must be motion or overlap, got {tracking.association!r}")
    if len(data.grid) != 2 or any(int(g) <= 0 for g in data.grid):
        raise ConfigError(f"data.grid must be two positive sizes, got {data.grid}")
    if data.speed_min > data.speed_max:
        raise ConfigError("data.speed_min must not exceed data.speed_max")
    for name in ("count", "frames", "objects"):
        if getattr(data, name) < 1:
            raise ConfigError(f"data.{name} must be at least 1")
