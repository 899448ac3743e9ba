import math

import numpy as np
import pytest

from lidar4d.core import Box3D, PointCloud
from lidar4d.rangecodec import SensorConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sensor():
    return SensorConfig()


def random_box(rng, center_range=3.0, size_lo=0.8, size_hi=4.0) -> Box3D:
    return Box3D(
        rng.uniform(-center_range, center_range, 3),
        rng.uniform(size_lo, size_hi, 3),
        rng.uniform(-math.pi, math.pi),
    )


def random_cloud(rng, n, cfg: SensorConfig, r_lo=1.0, r_hi=79.0) -> PointCloud:
    """Points inside the sensor frustum with margin from the fov edges."""
    az = rng.uniform(-math.pi, math.pi, n)
    el = rng.uniform(cfg.fov_down + 1e-6, cfg.fov_up - 1e-6, n)
    r = rng.uniform(r_lo, r_hi, n)
    xyz = np.column_stack(
        [r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)]
    )
    return PointCloud(np.column_stack([xyz, rng.uniform(0.0, 1.0, n)]))


def voxel_iou(a: Box3D, b: Box3D, resolution=0.02) -> float:
    """Independent dense-counting IoU oracle.

    Counts grid centers inside both boxes over the intersection bounding box
    (grid cells tile that AABB exactly); union volume is analytic.
    """
    corners = []
    for box in (a, b):
        hl, hw, hh = box.local_half_extents
        local = np.array(
            [
                [sx * hl, sy * hw, sz * hh]
                for sx in (-1, 1)
                for sy in (-1, 1)
                for sz in (-1, 1)
            ]
        )
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        corners.append(local @ rot.T + box.center)
    lo = np.maximum(corners[0].min(axis=0), corners[1].min(axis=0))
    hi = np.minimum(corners[0].max(axis=0), corners[1].max(axis=0))
    if np.any(hi <= lo):
        return 0.0
    extent = hi - lo
    n = np.maximum(np.ceil(extent / resolution).astype(int), 1)
    cell = extent / n
    axes = [lo[k] + (np.arange(n[k]) + 0.5) * cell[k] for k in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grid])

    def inside(box, p):
        d = p - box.center
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        lx = c * d[:, 0] + s * d[:, 1]
        ly = -s * d[:, 0] + c * d[:, 1]
        he = box.local_half_extents
        return (
            (np.abs(lx) <= he[0]) & (np.abs(ly) <= he[1]) & (np.abs(d[:, 2]) <= he[2])
        )

    inter = np.count_nonzero(inside(a, pts) & inside(b, pts)) * float(np.prod(cell))
    union = a.volume + b.volume - inter
    return inter / union
