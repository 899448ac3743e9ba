"""4D LiDAR scene toolkit.

Scene-graph construction, diffusion-based layout sampling, a spherical
range-image codec, rigid scene warping, layout-driven editing, a ray-cast
scene synthesizer, and a metric suite for generated LiDAR data.
"""
from ._kernels import active_backend
from .core import (
    Box3D,
    PointCloud,
    Pose,
    SceneSequence,
    Trajectory,
    box_corners,
    contains_point,
    iou_3d,
    transform_points,
)
from .rangecodec import RangeImage, SensorConfig, project, unproject

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "PointCloud",
    "Pose",
    "RangeImage",
    "SceneSequence",
    "SensorConfig",
    "Trajectory",
    "active_backend",
    "box_corners",
    "contains_point",
    "iou_3d",
    "project",
    "transform_points",
    "unproject",
    "__version__",
]
