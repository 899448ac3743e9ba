"""Deterministic ray-cast LiDAR simulator over a ground plane plus boxes.

One ray per pixel center, nearest hit wins, one return per pixel. Intensity
is a flat per-surface material constant. With zero range noise the output is
bit-reproducible and every return lies exactly on a surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels, warp
from .core import Box3D, PointCloud, SceneSequence, Trajectory, boxes_to_array
from .rangecodec import SensorConfig, pixel_ray_directions

DEFAULT_GROUND_INTENSITY = 0.2


@dataclass(frozen=True)
class SceneObject:
    box: Box3D
    trajectory: Trajectory
    intensity: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("material intensity must lie in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    """World description: ground plane height, objects, and the ego path."""

    ground_z: float
    objects: tuple
    ego_trajectory: Trajectory
    ground_intensity: float = DEFAULT_GROUND_INTENSITY
    noise_sigma: float = 0.0

    def __post_init__(self):
        objects = tuple(self.objects)
        if not 0.0 <= self.ground_intensity <= 1.0:
            raise ValueError("ground intensity must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise sigma must be non-negative")
        lengths = {len(o.trajectory) for o in objects}
        lengths.add(len(self.ego_trajectory))
        if len(lengths) > 1:
            raise ValueError("trajectory lengths must be equal")
        object.__setattr__(self, "objects", objects)

    @property
    def steps(self) -> int:
        return len(self.ego_trajectory)


def intersect_ray_obb(origin, direction, box: Box3D) -> Optional[float]:
    """Smallest positive slab-test hit distance, or None for a miss.

    ``direction`` should be a unit vector; a ray starting inside the box
    reports its exit distance.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = origin - box.center
    o_local = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])
    d_local = np.array(
        [
            c * direction[0] + s * direction[1],
            -s * direction[0] + c * direction[1],
            direction[2],
        ]
    )
    half = box.local_half_extents
    t_enter, t_exit = -math.inf, math.inf
    for axis in range(3):
        d = d_local[axis]
        o = o_local[axis]
        if d == 0.0:
            if abs(o) > half[axis]:
                return None
            continue
        t1 = (-half[axis] - o) / d
        t2 = (half[axis] - o) / d
        lo, hi = (t1, t2) if t1 < t2 else (t2, t1)
        t_enter = max(t_enter, lo)
        t_exit = min(t_exit, hi)
    if t_exit < t_enter or t_exit <= 0.0:
        return None
    return float(t_enter) if t_enter > 0.0 else float(t_exit)


def _boxes_at(spec: SceneSpec, t: int) -> list:
    return [warp.object_box_at(o.box, o.trajectory, t) for o in spec.objects]


def raycast_frame(
    spec: SceneSpec,
    cfg: SensorConfig,
    t: int,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Scan the scene from the ego pose at step t; points in the ego frame."""
    if t < 0 or t > spec.steps:
        raise ValueError(f"step {t} outside [0, {spec.steps}]")
    pose = warp.ego_pose_at(spec.ego_trajectory, t)
    dirs_ego = pixel_ray_directions(cfg).reshape(-1, 3)
    dirs_world = dirs_ego @ pose.rotation.T
    origin = pose.translation

    t_hit, idx = _kernels.ray_box_hits(
        dirs_world, origin, boxes_to_array(_boxes_at(spec, t))
    )
    # Ground plane: sensor plane sits at z = 0, the ground below it.
    dz = dirs_world[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (spec.ground_z - origin[2]) / dz
    ground_ok = (dz != 0.0) & (t_ground > 0.0) & (t_ground < t_hit)

    ranges = np.where(ground_ok, t_ground, t_hit)
    if spec.objects:
        materials = np.array([o.intensity for o in spec.objects])
        box_intensity = materials[np.maximum(idx, 0)]
    else:
        box_intensity = np.zeros(len(idx))
    intensities = np.where(ground_ok, spec.ground_intensity, box_intensity)
    hit = ground_ok | (idx >= 0)
    if spec.noise_sigma > 0.0:
        if rng is None:
            raise ValueError("range noise requires a generator")
        ranges = ranges + np.where(
            hit, rng.normal(0.0, spec.noise_sigma, len(ranges)), 0.0
        )
    keep = hit & (ranges > 0.0) & (ranges <= cfg.max_range)
    xyz = dirs_ego[keep] * ranges[keep, None]
    return PointCloud(np.column_stack([xyz, intensities[keep]]))


def simulate_sequence(
    spec: SceneSpec,
    cfg: SensorConfig,
    num_frames: int,
    rng: Optional[np.random.Generator] = None,
) -> SceneSequence:
    """Frames 0..num_frames-1 with the exact ego pose attached to each."""
    if num_frames < 1 or num_frames - 1 > spec.steps:
        raise ValueError("trajectories are shorter than the requested sequence")
    frames = []
    for t in range(num_frames):
        cloud = raycast_frame(spec, cfg, t, rng)
        frames.append((cloud, warp.ego_pose_at(spec.ego_trajectory, t)))
    return SceneSequence(tuple(frames))
