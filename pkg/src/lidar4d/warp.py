"""Rigid scene warping: ego motion, object motion, and conditioning maps.

Pose convention: a pose maps ego coordinates to frame-0 world coordinates, so
background points propagate between frames via ``pose_t^-1 o pose_prev``.
Headings follow the direction of travel: the yaw at step t is the angle of
the displacement step (t-1 -> t); a zero step keeps the previous heading.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    Box3D,
    PointCloud,
    Pose,
    Trajectory,
    boxes_to_array,
    normalize_angle,
    transform_points,
)
from .rangecodec import RangeImage, SensorConfig, project

if TYPE_CHECKING:  # circular at runtime: layout builds on this module
    from .layout import Layout4D


def heading_sequence(trajectory: Trajectory, initial_yaw: float = 0.0) -> np.ndarray:
    """Heading at each step 0..T; zero steps hold the previous heading."""
    disp = np.vstack([[0.0, 0.0], trajectory.displacements])
    steps = np.diff(disp, axis=0)
    yaws = np.empty(len(disp))
    yaws[0] = normalize_angle(initial_yaw)
    for t in range(1, len(disp)):
        dx, dy = steps[t - 1]
        if dx == 0.0 and dy == 0.0:
            yaws[t] = yaws[t - 1]
        else:
            yaws[t] = math.atan2(dy, dx)
    return yaws


def ego_pose_at(ego_traj: Trajectory, t: int, sensor_height: float = 0.0) -> Pose:
    """Ego pose at step t in the frame-0 world.

    Translation is the planar displacement; the vertical component cancels
    because every frame shares the sensor plane (``sensor_height`` is kept
    for interface completeness).
    """
    if t < 0 or t > len(ego_traj):
        raise ValueError(f"step {t} outside [0, {len(ego_traj)}]")
    if t == 0:
        return Pose.identity()
    yaw = heading_sequence(ego_traj)[t]
    dx, dy = ego_traj.displacement_at(t)
    return Pose.from_yaw(yaw, (dx, dy, 0.0))


def relative_motion(pose_t: Pose, pose_prev: Pose) -> Pose:
    """Transform satisfying ``relative o pose_prev == pose_t``."""
    return pose_t.compose(pose_prev.inverse())


@dataclass(frozen=True)
class FrameDecomposition:
    """Partition of one frame into background and per-object foregrounds."""

    background: PointCloud
    foregrounds: dict  # node id -> PointCloud

    def total_points(self) -> int:
        return len(self.background) + sum(len(f) for f in self.foregrounds.values())


def split_fg_bg(
    cloud: PointCloud,
    boxes: Sequence[Box3D],
    node_ids: Optional[Sequence[int]] = None,
) -> FrameDecomposition:
    """Assign each point to its first containing box, else to the background."""
    ids = list(range(len(boxes))) if node_ids is None else list(node_ids)
    if len(ids) != len(boxes):
        raise ValueError("node_ids must match boxes")
    assignment = _kernels.assign_points_to_boxes(cloud.xyz, boxes_to_array(boxes))
    foregrounds = {}
    for i, node_id in enumerate(ids):
        foregrounds[node_id] = PointCloud(cloud.data[assignment == i])
    background = PointCloud(cloud.data[assignment == -1])
    return FrameDecomposition(background, foregrounds)


def warp_background(bg_prev: PointCloud, pose_t: Pose, pose_prev: Pose) -> PointCloud:
    """Re-express static points from the previous ego frame in the current one."""
    return transform_points(bg_prev, pose_t.inverse().compose(pose_prev))


def object_pose_at(box: Box3D, trajectory: Trajectory, t: int) -> Pose:
    """Rigid map taking frame-0 object points to their world pose at step t.

    The box rotates about its own center from its initial yaw to the travel
    heading, then translates by the cumulative planar displacement.
    """
    if t < 0 or t > len(trajectory):
        raise ValueError(f"step {t} outside [0, {len(trajectory)}]")
    yaw_t = heading_sequence(trajectory, box.yaw)[t]
    dx, dy = trajectory.displacement_at(t)
    spin = Pose.from_yaw(yaw_t - box.yaw)
    center = box.center
    # Rotate about the box center, then translate.
    rotation_about_center = Pose(
        spin.rotation, center - spin.rotation @ center
    )
    shift = Pose(np.eye(3), np.array([dx, dy, 0.0]))
    return shift.compose(rotation_about_center)


def object_box_at(box: Box3D, trajectory: Trajectory, t: int) -> Box3D:
    """The object's box at step t in frame-0 world coordinates."""
    pose = object_pose_at(box, trajectory, t)
    yaw_t = heading_sequence(trajectory, box.yaw)[t]
    return Box3D(pose.apply(box.center), box.size, yaw_t)


def warp_object(
    fg0: PointCloud,
    box: Box3D,
    trajectory: Trajectory,
    ego_traj: Trajectory,
    t: int,
):
    """Move frame-0 foreground points with their box into the ego frame at t.

    Returns the warped points and the warped box, both in ego-t coordinates.
    """
    obj_pose = object_pose_at(box, trajectory, t)
    ego_pose = ego_pose_at(ego_traj, t)
    moved = transform_points(fg0, ego_pose.inverse().compose(obj_pose))
    return moved, object_box_in_ego(box, trajectory, ego_traj, t)


def object_box_in_ego(
    box: Box3D, trajectory: Trajectory, ego_traj: Trajectory, t: int
) -> Box3D:
    """The object's box at step t expressed in the ego frame at t."""
    world_box = object_box_at(box, trajectory, t)
    ego_pose = ego_pose_at(ego_traj, t)
    ego_yaw = heading_sequence(ego_traj)[t]
    return Box3D(
        ego_pose.inverse().apply(world_box.center),
        world_box.size,
        world_box.yaw - ego_yaw,
    )


def warp_object_step(
    fg_prev: PointCloud,
    box: Box3D,
    trajectory: Trajectory,
    ego_traj: Trajectory,
    t: int,
) -> PointCloud:
    """Move foreground points from ego frame t-1 to ego frame t."""
    if t < 1:
        raise ValueError("step warp needs t >= 1")
    move = (
        ego_pose_at(ego_traj, t)
        .inverse()
        .compose(object_pose_at(box, trajectory, t))
        .compose(object_pose_at(box, trajectory, t - 1).inverse())
        .compose(ego_pose_at(ego_traj, t - 1))
    )
    return transform_points(fg_prev, move)


def conditioning_map(
    decomp0: FrameDecomposition,
    decomp_prev: FrameDecomposition,
    layout: "Layout4D",
    ego_traj: Trajectory,
    t: int,
    cfg: SensorConfig,
) -> RangeImage:
    """Geometric prior for frame t: warped backgrounds and foregrounds.

    Projects the union of the frame-0 background warped directly to t (which
    pins long-range drift), the previous background warped one step, and each
    previous foreground moved by its own motion, merging with the z-buffer.
    """
    if t < 1:
        raise ValueError("conditioning map needs t >= 1")
    pose_t = ego_pose_at(ego_traj, t)
    pose_prev = ego_pose_at(ego_traj, t - 1)
    parts = [
        warp_background(decomp0.background, pose_t, Pose.identity()).data,
        warp_background(decomp_prev.background, pose_t, pose_prev).data,
    ]
    for obj in layout.objects:
        fg = decomp_prev.foregrounds.get(obj.node_id)
        if fg is None or len(fg) == 0:
            continue
        parts.append(
            warp_object_step(fg, obj.box, obj.trajectory, ego_traj, t).data
        )
    merged = PointCloud(np.vstack(parts))
    return project(merged, cfg)
