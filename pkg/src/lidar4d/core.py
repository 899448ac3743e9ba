"""Shared domain types and exact oriented-box geometry.

Conventions used throughout the package:

* Boxes are yaw-only (rotation about z). ``size = (w, l, h)`` where ``l`` is
  the extent along the heading (local x), ``w`` across it (local y), and
  ``h`` vertical.
* Yaw is normalized into (-pi, pi] at construction.
* Point-in-box tests are boundary inclusive.
* All types are immutable after construction and all operations are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(float(theta) + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def rot_z(yaw: float) -> np.ndarray:
    """3x3 rotation about the z axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _frozen_array(values, shape, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of LiDAR returns: (N, 4) rows of x, y, z, intensity.

    Coordinates are meters, intensity is unitless in [0, 1].
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"point data must be (N, 4), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("point coordinates and intensity must be finite")
        if arr.size and (arr[:, 3].min() < 0.0 or arr[:, 3].max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_xyz(cls, xyz, intensity=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        intensity = np.broadcast_to(
            np.asarray(intensity, dtype=np.float64), (len(xyz),)
        )
        return cls(np.column_stack([xyz, intensity]))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, PointCloud) and np.array_equal(
            self.data, other.data
        )


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented 3D box: center (x, y, z), size (w, l, h), yaw about z."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(
            self, "center", _frozen_array(self.center, (3,), "center")
        )
        size = _frozen_array(self.size, (3,), "size")
        if np.any(size <= 0.0):
            raise ValueError("box size components must be positive")
        object.__setattr__(self, "size", size)
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def width(self) -> float:
        return float(self.size[0])

    @property
    def length(self) -> float:
        return float(self.size[1])

    @property
    def height(self) -> float:
        return float(self.size[2])

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    @property
    def local_half_extents(self) -> np.ndarray:
        """Half extents along local (x, y, z) = (l/2, w/2, h/2)."""
        return np.array([0.5 * self.length, 0.5 * self.width, 0.5 * self.height])

    def translated(self, offset) -> "Box3D":
        return Box3D(self.center + np.asarray(offset, dtype=np.float64), self.size, self.yaw)

    def as_row(self) -> np.ndarray:
        """Row [cx, cy, cz, w, l, h, yaw] used by the batch kernels."""
        return np.concatenate([self.center, self.size, [self.yaw]])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Box3D)
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.size, other.size)
            and self.yaw == other.yaw
        )


def boxes_to_array(boxes: Iterable[Box3D]) -> np.ndarray:
    """Stack boxes into the (B, 7) kernel layout."""
    rows = [b.as_row() for b in boxes]
    if not rows:
        return np.zeros((0, 7))
    return np.stack(rows)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Planar displacements relative to frame 0: (T, 2) rows of (dx, dy)."""

    displacements: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.displacements, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise ValueError(
                f"displacements must be (T >= 1, 2), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("displacements must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "displacements", arr)

    @classmethod
    def zeros(cls, steps: int) -> "Trajectory":
        return cls(np.zeros((steps, 2)))

    def __len__(self) -> int:
        return self.displacements.shape[0]

    def displacement_at(self, t: int) -> np.ndarray:
        """Cumulative planar displacement at step t (t=0 is the origin)."""
        if t < 0 or t > len(self):
            raise ValueError(f"step {t} outside [0, {len(self)}]")
        if t == 0:
            return np.zeros(2)
        return self.displacements[t - 1]

    def __eq__(self, other) -> bool:
        return isinstance(other, Trajectory) and np.array_equal(
            self.displacements, other.displacements
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: 3x3 rotation plus translation, mapping ego to world."""

    rotation: np.ndarray
    translation: np.ndarray

    _ORTHO_TOL = 1e-9

    def __post_init__(self):
        rot = _frozen_array(self.rotation, (3, 3), "rotation")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=self._ORTHO_TOL):
            raise ValueError("rotation must be orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > self._ORTHO_TOL:
            raise ValueError("rotation must have determinant +1 within 1e-9")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(
            self, "translation", _frozen_array(self.translation, (3,), "translation")
        )

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(rot_z(yaw), np.asarray(translation, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Pose)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )


@dataclass(frozen=True)
class SceneSequence:
    """Frames of (cloud in its own ego frame, ego pose in frame-0 world)."""

    frames: tuple
    layouts: Optional[tuple] = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        for cloud, pose in frames:
            if not isinstance(cloud, PointCloud) or not isinstance(pose, Pose):
                raise ValueError("frames must be (PointCloud, Pose) pairs")
        object.__setattr__(self, "frames", frames)
        if self.layouts is not None:
            object.__setattr__(self, "layouts", tuple(self.layouts))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def clouds(self):
        return tuple(cloud for cloud, _ in self.frames)

    @property
    def poses(self):
        return tuple(pose for _, pose in self.frames)


# ---------------------------------------------------------------------------
# Oriented-box operations
# ---------------------------------------------------------------------------

_CORNER_SIGNS = np.array(
    [
        [1, 1, 1],
        [1, 1, -1],
        [1, -1, 1],
        [1, -1, -1],
        [-1, 1, 1],
        [-1, 1, -1],
        [-1, -1, 1],
        [-1, -1, -1],
    ],
    dtype=np.float64,
)


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of an oriented box, (8, 3), in sign order (+++, ++-, ...)."""
    local = _CORNER_SIGNS * box.local_half_extents
    return local @ rot_z(box.yaw).T + box.center


def contains_points(box: Box3D, points: np.ndarray) -> np.ndarray:
    """Boundary-inclusive containment mask for (N, 3) points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pts[:, 0] - box.center[0]
    dy = pts[:, 1] - box.center[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    half = box.local_half_extents
    return (
        (np.abs(lx) <= half[0])
        & (np.abs(ly) <= half[1])
        & (np.abs(pts[:, 2] - box.center[2]) <= half[2])
    )


def contains_point(box: Box3D, point) -> bool:
    """True iff the point lies inside the box, boundary inclusive."""
    return bool(contains_points(box, np.asarray(point, dtype=np.float64))[0])


def _bev_corners(box: Box3D) -> np.ndarray:
    """Counterclockwise footprint corners, (4, 2)."""
    hl, hw = 0.5 * box.length, 0.5 * box.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + box.center[:2]


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(
        float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    )


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex CCW polygon."""
    output = list(subject)
    m = len(clip)
    for i in range(m):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % m]
        edge = b - a
        input_pts = output
        output = []
        prev = input_pts[-1]
        prev_in = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0]) >= 0.0
        for cur in input_pts:
            cur_in = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0]) >= 0.0
            if cur_in != prev_in:
                # Intersection of segment prev->cur with the clip line.
                d = cur - prev
                denom = edge[0] * d[1] - edge[1] * d[0]
                t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                output.append(prev + t * d)
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output) if output else np.zeros((0, 2))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Exact footprint intersection area via polygon clipping."""
    clipped = _clip_polygon(_bev_corners(a), _bev_corners(b))
    return _polygon_area(clipped)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of the two box footprints."""
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return inter / union


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Exact oriented 3D IoU: clipped footprint area times z overlap."""
    inter_area = bev_intersection_area(a, b)
    if inter_area <= 0.0:
        return 0.0
    z_lo = max(a.center[2] - 0.5 * a.height, b.center[2] - 0.5 * b.height)
    z_hi = min(a.center[2] + 0.5 * a.height, b.center[2] + 0.5 * b.height)
    dz = z_hi - z_lo
    if dz <= 0.0:
        return 0.0
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return inter / union


def transform_points(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Rigidly map every point; intensity is unchanged."""
    moved = pose.apply(cloud.xyz)
    return PointCloud(np.column_stack([moved, cloud.intensity]))
