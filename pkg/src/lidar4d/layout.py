"""4D layout tuples: per-object box, future trajectory, and canonical shape.

Encoding conventions:

* Box code (8 values): center normalized to [0, 1] inside the world bounds,
  log sizes, and (sin, cos) of the yaw. Decoding renormalizes (sin, cos) to
  unit length before taking atan2.
* Trajectory code (2T values): displacements scaled linearly by a bound.
* Shape code (N, 4): points rotated into the box frame, divided by the half
  extents per axis, intensity affine-mapped to [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffusion, warp
from .core import Box3D, PointCloud, Trajectory, iou_3d, rot_z
from .scenegraph import (
    CATEGORIES,
    EGO_CATEGORY,
    MOTION_STATES,
    RELATION_LABELS,
    SceneGraph,
)

DEFAULT_TRAJECTORY_STEPS = 5
DEFAULT_SHAPE_POINTS = 512
DEFAULT_DISPLACEMENT_BOUND = 20.0
DEFAULT_OVERLAP_TAU = 0.01


@dataclass(frozen=True, eq=False)
class WorldBounds:
    """Axis-aligned world volume; layout boxes must keep centers inside."""

    minimum: np.ndarray = field(default_factory=lambda: np.array([-80.0, -80.0, -8.0]))
    maximum: np.ndarray = field(default_factory=lambda: np.array([80.0, 80.0, 8.0]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WorldBounds)
            and np.array_equal(self.minimum, other.minimum)
            and np.array_equal(self.maximum, other.maximum)
        )

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be two (3,) corners with max > min")
        lo, hi = lo.copy(), hi.copy()
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.maximum - self.minimum

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= self.minimum) and np.all(p <= self.maximum))


DEFAULT_BOUNDS = WorldBounds()


@dataclass(frozen=True)
class LayoutObject:
    node_id: int
    category: str
    box: Box3D
    trajectory: Trajectory
    shape: PointCloud  # canonical coordinates in [-1, 1]^3, intensity in [0, 1]

    def __post_init__(self):
        if len(self.shape) and np.abs(self.shape.xyz).max() > 1.0 + 1e-9:
            raise ValueError("shape points must lie in the canonical cube")


@dataclass(frozen=True)
class Layout4D:
    objects: tuple
    bounds: WorldBounds = DEFAULT_BOUNDS

    def __post_init__(self):
        objects = tuple(self.objects)
        steps = {len(o.trajectory) for o in objects}
        if len(steps) > 1:
            raise ValueError("trajectory lengths must be uniform")
        ids = [o.node_id for o in objects]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        for o in objects:
            if not self.bounds.contains(o.box.center):
                raise ValueError(
                    f"box center of node {o.node_id} outside the world bounds"
                )
        object.__setattr__(self, "objects", objects)

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def trajectory_steps(self) -> int:
        return len(self.objects[0].trajectory) if self.objects else 0

    def get(self, node_id: int) -> LayoutObject:
        for o in self.objects:
            if o.node_id == node_id:
                return o
        raise KeyError(f"no layout object with node id {node_id}")

    def boxes(self) -> list:
        return [o.box for o in self.objects]

    def trajectories(self) -> list:
        return [o.trajectory for o in self.objects]


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------


def encode_box(box: Box3D, bounds: WorldBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """8-value code: normalized center, log sizes, (sin, cos) yaw."""
    if not bounds.contains(box.center):
        raise ValueError("box center outside the world bounds")
    center = (box.center - bounds.minimum) / bounds.extent
    return np.concatenate(
        [center, np.log(box.size), [math.sin(box.yaw), math.cos(box.yaw)]]
    )


def decode_box(code: np.ndarray, bounds: WorldBounds = DEFAULT_BOUNDS) -> Box3D:
    """Inverse of :func:`encode_box`; (sin, cos) renormalized to unit length."""
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (8,):
        raise ValueError(f"box code must have 8 values, got {code.shape}")
    center = bounds.minimum + code[:3] * bounds.extent
    size = np.exp(code[3:6])
    norm = math.hypot(code[6], code[7])
    yaw = 0.0 if norm == 0.0 else math.atan2(code[6] / norm, code[7] / norm)
    return Box3D(center, size, yaw)


def encode_trajectory(
    trajectory: Trajectory, disp_bound: float = DEFAULT_DISPLACEMENT_BOUND
) -> np.ndarray:
    """Flattened displacements scaled into [-1, 1] by ``disp_bound``."""
    disp = trajectory.displacements
    if np.abs(disp).max(initial=0.0) > disp_bound:
        raise ValueError(f"displacement exceeds the bound {disp_bound}")
    return (disp / disp_bound).ravel()


def decode_trajectory(
    code: np.ndarray, disp_bound: float = DEFAULT_DISPLACEMENT_BOUND
) -> Trajectory:
    code = np.asarray(code, dtype=np.float64)
    if code.ndim != 1 or code.size % 2 != 0 or code.size == 0:
        raise ValueError("trajectory code must be a flat (2T,) vector")
    return Trajectory(code.reshape(-1, 2) * disp_bound)


def canonicalize_points(cloud: PointCloud, box: Box3D) -> np.ndarray:
    """(N, 4) canonical code: box-frame points over half extents, intensity
    affine-mapped to [-1, 1]. Points inside the box map into [-1, 1]^3.
    """
    if len(cloud) == 0:
        raise ValueError("cannot canonicalize an empty cloud")
    local = (cloud.xyz - box.center) @ rot_z(-box.yaw).T
    scaled = local / box.local_half_extents
    return np.column_stack([scaled, 2.0 * cloud.intensity - 1.0])


def decanonicalize_points(code: np.ndarray, box: Box3D) -> PointCloud:
    """Inverse of :func:`canonicalize_points`."""
    code = np.asarray(code, dtype=np.float64)
    if code.ndim != 2 or code.shape[1] != 4:
        raise ValueError(f"canonical code must be (N, 4), got {code.shape}")
    local = code[:, :3] * box.local_half_extents
    xyz = local @ rot_z(box.yaw).T + box.center
    return PointCloud(np.column_stack([xyz, 0.5 * (code[:, 3] + 1.0)]))


# ---------------------------------------------------------------------------
# Collision penalties
# ---------------------------------------------------------------------------


def box_overlap_penalty(
    boxes: Sequence[Box3D], tau_thresh: float = DEFAULT_OVERLAP_TAU
) -> float:
    """Mean over unordered pairs of max(0, IoU - tau)."""
    n = len(boxes)
    if n < 2:
        return 0.0
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += max(0.0, iou_3d(boxes[i], boxes[j]) - tau_thresh)
            pairs += 1
    return total / pairs


def trajectory_overlap_penalty(
    boxes: Sequence[Box3D],
    trajectories: Sequence[Trajectory],
    tau_thresh: float = DEFAULT_OVERLAP_TAU,
) -> float:
    """Box penalty accumulated along the motion, averaged over pairs and steps.

    Boxes are propagated by their displacements with headings following the
    direction of travel, evaluated at steps 1..T.
    """
    if len(boxes) != len(trajectories):
        raise ValueError("boxes and trajectories must align")
    n = len(boxes)
    if n < 2:
        return 0.0
    steps = {len(t) for t in trajectories}
    if len(steps) != 1:
        raise ValueError("trajectory lengths must be uniform")
    horizon = steps.pop()
    pairs = n * (n - 1) // 2
    total = 0.0
    for t in range(1, horizon + 1):
        moved = [
            warp.object_box_at(box, traj, t)
            for box, traj in zip(boxes, trajectories)
        ]
        for i in range(n):
            for j in range(i + 1, n):
                total += max(0.0, iou_3d(moved[i], moved[j]) - tau_thresh)
    return total / (pairs * horizon)


# ---------------------------------------------------------------------------
# Graph conditioning features
# ---------------------------------------------------------------------------

_CATEGORY_ORDER = (EGO_CATEGORY,) + CATEGORIES
CONDITION_DIM = len(_CATEGORY_ORDER) + len(MOTION_STATES) + 2 + len(RELATION_LABELS)
DEFAULT_DEGREE_SCALE = 16


def featurize_condition(
    graph: SceneGraph, node_id: int, degree_scale: int = DEFAULT_DEGREE_SCALE
) -> np.ndarray:
    """Deterministic per-node condition vector in [0, 1].

    Layout: one-hot category, one-hot motion state, in/out degree (in units
    of 1/degree_scale, clipped at 1), and the label histogram over incident
    edges in the same units.
    """
    node = graph.node(node_id)
    cat = np.zeros(len(_CATEGORY_ORDER))
    cat[_CATEGORY_ORDER.index(node.category)] = 1.0
    motion = np.zeros(len(MOTION_STATES))
    motion[MOTION_STATES.index(node.motion_state)] = 1.0

    in_deg = out_deg = 0
    hist = np.zeros(len(RELATION_LABELS))
    for edge in graph.edges:
        if edge.subject == node_id:
            out_deg += 1
        elif edge.object == node_id:
            in_deg += 1
        else:
            continue
        for label in edge.labels:
            hist[RELATION_LABELS.index(label)] += 1.0
    degrees = np.array([in_deg, out_deg]) / degree_scale
    return np.concatenate(
        [cat, motion, np.minimum(degrees, 1.0), np.minimum(hist / degree_scale, 1.0)]
    )


# ---------------------------------------------------------------------------
# Tri-branch sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayoutDenoisers:
    """One denoiser per branch; trajectory and shape also see the box code."""

    box: Callable
    trajectory: Callable
    shape: Callable


@dataclass(frozen=True, eq=False)
class LayoutPrior:
    """Diagonal Gaussian prior over the branch codes (the sampling target
    used when no trained denoisers are supplied)."""

    box_mean: np.ndarray = field(
        default_factory=lambda: np.array(
            [0.5, 0.5, 0.43, math.log(1.9), math.log(4.4), math.log(1.7), 0.0, 1.0]
        )
    )
    box_std: np.ndarray = field(
        default_factory=lambda: np.array([0.12, 0.12, 0.01, 0.08, 0.08, 0.08, 0.45, 0.45])
    )
    trajectory_std: float = 0.02
    shape_std: float = 0.4

    def denoisers(self, schedule: diffusion.NoiseSchedule) -> LayoutDenoisers:
        return LayoutDenoisers(
            box=diffusion.make_gaussian_oracle(self.box_mean, self.box_std, schedule),
            trajectory=diffusion.make_gaussian_oracle(0.0, self.trajectory_std, schedule),
            shape=diffusion.make_gaussian_oracle(0.0, self.shape_std, schedule),
        )


@dataclass(frozen=True)
class LayoutSampleResult:
    layout: Layout4D
    rejections: int
    collision_free: bool
    penalty: float


_LOG_SIZE_LIMITS = (math.log(0.1), math.log(30.0))


def _clip_box_codes(codes: np.ndarray) -> np.ndarray:
    out = codes.copy()
    out[:, :3] = np.clip(out[:, :3], 0.0, 1.0)
    out[:, 3:6] = np.clip(out[:, 3:6], *_LOG_SIZE_LIMITS)
    return out


def sample_layout(
    graph: SceneGraph,
    models: LayoutDenoisers,
    schedule: diffusion.NoiseSchedule,
    rng_seed: int,
    reject_k: int = 8,
    steps: int = 256,
    bounds: WorldBounds = DEFAULT_BOUNDS,
    trajectory_steps: int = DEFAULT_TRAJECTORY_STEPS,
    shape_points: int = DEFAULT_SHAPE_POINTS,
    disp_bound: float = DEFAULT_DISPLACEMENT_BOUND,
    tau_thresh: float = DEFAULT_OVERLAP_TAU,
) -> LayoutSampleResult:
    """Sample boxes, trajectories, and shapes for every object node.

    Boxes sample first; the trajectory and shape branches condition on each
    node's decoded box code. If any sampled boxes overlap, the draw is
    rejected and retried up to ``reject_k`` times; the lowest-penalty
    candidate wins when no draw is collision free.
    """
    nodes = graph.object_nodes
    if not nodes:
        return LayoutSampleResult(Layout4D((), bounds), 0, True, 0.0)

    rng = np.random.default_rng(rng_seed)
    conds = np.stack([featurize_condition(graph, n.id) for n in nodes])
    n = len(nodes)

    best = None
    for attempt in range(reject_k + 1):
        box_codes = _clip_box_codes(
            diffusion.p_sample_loop(models.box, conds, schedule, steps, rng, (n, 8))
        )
        boxes = [decode_box(code, bounds) for code in box_codes]

        branch_cond = np.concatenate([conds, box_codes], axis=1)
        traj_codes = np.clip(
            diffusion.p_sample_loop(
                models.trajectory, branch_cond, schedule, steps, rng,
                (n, 2 * trajectory_steps),
            ),
            -1.0,
            1.0,
        )
        trajectories = [decode_trajectory(code, disp_bound) for code in traj_codes]

        shape_codes = np.clip(
            diffusion.p_sample_loop(
                models.shape, branch_cond, schedule, steps, rng,
                (n, shape_points * 4),
            ),
            -1.0,
            1.0,
        )
        shapes = [
            PointCloud(
                np.column_stack(
                    [code.reshape(shape_points, 4)[:, :3],
                     0.5 * (code.reshape(shape_points, 4)[:, 3] + 1.0)]
                )
            )
            for code in shape_codes
        ]

        objects = tuple(
            LayoutObject(node.id, node.category, box, traj, shape)
            for node, box, traj, shape in zip(nodes, boxes, trajectories, shapes)
        )
        layout = Layout4D(objects, bounds)
        collision = any(
            iou_3d(boxes[i], boxes[j]) > 0.0
            for i in range(n)
            for j in range(i + 1, n)
        )
        penalty = box_overlap_penalty(boxes, tau_thresh) + trajectory_overlap_penalty(
            boxes, trajectories, tau_thresh
        )
        if not collision:
            return LayoutSampleResult(layout, attempt, True, penalty)
        if best is None or penalty < best.penalty:
            best = LayoutSampleResult(layout, attempt + 1, False, penalty)
    return LayoutSampleResult(best.layout, reject_k + 1, False, best.penalty)
