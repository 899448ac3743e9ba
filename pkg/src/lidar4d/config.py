"""Run configuration: every tunable threshold in one validated structure.

Configs load from JSON with strict key checking: unknown keys are rejected
so typos never silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .diffusion import TrainingConfig
from .errors import SchemaError
from .evalsuite import MotionClassifierConfig
from .rangecodec import SensorConfig
from .scenegraph import RelationConfig


@dataclass(frozen=True)
class DiffusionSettings:
    train_steps: int = 1024
    sample_steps: int = 256
    cosine_s: float = 0.008

    def __post_init__(self):
        if not 1 <= self.sample_steps <= self.train_steps:
            raise ValueError("sample_steps must lie in [1, train_steps]")


@dataclass(frozen=True)
class LayoutSettings:
    trajectory_steps: int = 5
    shape_points: int = 512
    displacement_bound: float = 20.0
    overlap_tau: float = 0.01
    iou_weight: float = 0.01
    reject_attempts: int = 8
    degree_scale: int = 16
    world_min: tuple = (-80.0, -80.0, -8.0)
    world_max: tuple = (80.0, 80.0, 8.0)


@dataclass(frozen=True)
class EditSettings:
    mask_dilation: int = 2
    resample_repeats: int = 1


@dataclass(frozen=True)
class MetricSettings:
    bev_bound: float = 80.0
    bev_bins: int = 100
    ap_iou_threshold: float = 0.5
    mmd_kernel: str = "gaussian"
    mmd_bandwidth: float | None = None
    stationary_threshold: float = 0.5
    turn_threshold_deg: float = 15.0

    def motion_classifier(self) -> MotionClassifierConfig:
        return MotionClassifierConfig(
            self.stationary_threshold, math.radians(self.turn_threshold_deg)
        )


@dataclass(frozen=True)
class PipelineSettings:
    frames: int = 5
    ego_step: float = 0.2
    ground_intensity: float = 0.2
    object_intensity: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    relations: RelationConfig = field(default_factory=RelationConfig)
    diffusion: DiffusionSettings = field(default_factory=DiffusionSettings)
    layout: LayoutSettings = field(default_factory=LayoutSettings)
    edit: EditSettings = field(default_factory=EditSettings)
    metrics: MetricSettings = field(default_factory=MetricSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    seed: int = 0


_SECTION_TYPES = {
    "sensor": SensorConfig,
    "relations": RelationConfig,
    "diffusion": DiffusionSettings,
    "layout": LayoutSettings,
    "edit": EditSettings,
    "metrics": MetricSettings,
    "training": TrainingConfig,
    "pipeline": PipelineSettings,
}


def _build_section(cls, raw: dict, context: str):
    if not isinstance(raw, dict):
        raise SchemaError(context, "expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise SchemaError(f"{context}.{sorted(unknown)[0]}", "unknown key")
    converted = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        converted[key] = value
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise SchemaError(context, str(exc)) from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise SchemaError("config", "expected an object")
    unknown = set(raw) - set(_SECTION_TYPES) - {"seed"}
    if unknown:
        raise SchemaError(sorted(unknown)[0], "unknown key")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            sections[name] = _build_section(cls, raw[name], name)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise SchemaError("seed", "expected an integer")
    return RunConfig(seed=seed, **sections)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return config_from_dict(json.load(handle))


def config_to_dict(config: RunConfig) -> dict:
    out = {"seed": config.seed}
    for name in _SECTION_TYPES:
        out[name] = dataclasses.asdict(getattr(config, name))
    return out
