"""Spherical range-image codec: project, unproject, normalize, tensorize.

Projection convention: a point at azimuth ``a = atan2(y, x)`` and elevation
``e = asin(z / r)`` maps to

    u = floor(0.5 * (1 - a / pi) * W)
    v = floor((1 - (e - fov_down) / (fov_up - fov_down)) * H)

so the top beam (``e == fov_up``) lands on row 0 pre-floor. Pixels bin by
floor; unprojection rays leave pixel centers (u + 0.5, v + 0.5). Per-pixel
conflicts resolve to the nearest depth. Images store float32 channels, which
makes project -> unproject -> project reproduce the image bit for bit.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import PointCloud


@dataclass(frozen=True)
class SensorConfig:
    """Spherical sensor geometry. Angles are radians; fov_down is negative."""

    width: int = 1024
    height: int = 32
    fov_up: float = math.radians(10.0)
    fov_down: float = math.radians(-30.0)
    max_range: float = 80.0
    sensor_height: float = 1.84

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not self.fov_up > self.fov_down:
            raise ValueError("fov_up must exceed fov_down")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")

    @property
    def fov(self) -> float:
        return self.fov_up - self.fov_down

    @property
    def azimuth_pitch(self) -> float:
        return 2.0 * math.pi / self.width

    @property
    def elevation_pitch(self) -> float:
        return self.fov / self.height


@dataclass(frozen=True, eq=False)
class RangeImage:
    """H x W grid of (depth, intensity, valid). Invalid pixels store zeros."""

    depth: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float32)
        intensity = np.asarray(self.intensity, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.shape != intensity.shape or depth.shape != valid.shape:
            raise ValueError("channel shapes must match")
        if depth.ndim != 2:
            raise ValueError("channels must be 2-D")
        if not np.all(np.isfinite(depth)) or not np.all(np.isfinite(intensity)):
            raise ValueError("channels must be finite")
        if np.any(depth[~valid] != 0.0) or np.any(intensity[~valid] != 0.0):
            raise ValueError("invalid pixels must store zeros")
        if np.any(depth[valid] <= 0.0):
            raise ValueError("valid depths must be positive")
        if valid.any():
            iv = intensity[valid]
            if iv.min() < 0.0 or iv.max() > 1.0:
                raise ValueError("valid intensities must lie in [0, 1]")
        for name, arr in (("depth", depth), ("intensity", intensity), ("valid", valid)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, cfg: SensorConfig) -> "RangeImage":
        shape = (cfg.height, cfg.width)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=bool))

    @property
    def shape(self):
        return self.depth.shape

    def num_valid(self) -> int:
        return int(self.valid.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RangeImage)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.valid, other.valid)
        )


def project(cloud: PointCloud, cfg: SensorConfig) -> RangeImage:
    """Spherically project a cloud; nearest depth wins per pixel."""
    xyz = cloud.xyz
    if len(cloud) == 0:
        return RangeImage.empty(cfg)
    r = np.linalg.norm(xyz, axis=1)
    keep = (r > 0.0) & (r <= cfg.max_range)

    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    u = np.floor(0.5 * (1.0 - az / math.pi) * cfg.width)
    with np.errstate(invalid="ignore", divide="ignore"):
        el = np.arcsin(np.where(r > 0.0, xyz[:, 2] / np.where(r > 0.0, r, 1.0), 0.0))
    v = np.floor((1.0 - (el - cfg.fov_down) / cfg.fov) * cfg.height)

    keep &= (u >= 0) & (u < cfg.width) & (v >= 0) & (v < cfg.height)
    if not keep.any():
        return RangeImage.empty(cfg)

    depth, intens, valid = _kernels.zbuffer_project(
        u[keep].astype(np.int64),
        v[keep].astype(np.int64),
        r[keep],
        cloud.intensity[keep],
        cfg.height,
        cfg.width,
    )
    return RangeImage(depth, intens, valid.astype(bool))


@functools.lru_cache(maxsize=8)
def pixel_ray_directions(cfg: SensorConfig) -> np.ndarray:
    """Unit ray direction through each pixel center, shape (H, W, 3)."""
    u = np.arange(cfg.width) + 0.5
    v = np.arange(cfg.height) + 0.5
    az = (1.0 - 2.0 * u / cfg.width) * math.pi
    el = (1.0 - v / cfg.height) * cfg.fov + cfg.fov_down
    cos_el = np.cos(el)[:, None]
    dirs = np.empty((cfg.height, cfg.width, 3))
    dirs[:, :, 0] = cos_el * np.cos(az)[None, :]
    dirs[:, :, 1] = cos_el * np.sin(az)[None, :]
    dirs[:, :, 2] = np.sin(el)[:, None]
    dirs.setflags(write=False)
    return dirs


def unproject(image: RangeImage, cfg: SensorConfig) -> PointCloud:
    """Emit one point per valid pixel along its center ray."""
    if image.shape != (cfg.height, cfg.width):
        raise ValueError("image shape does not match the sensor config")
    mask = image.valid
    if not mask.any():
        return PointCloud.empty()
    dirs = pixel_ray_directions(cfg)[mask]
    depths = image.depth[mask].astype(np.float64)
    xyz = dirs * depths[:, None]
    return PointCloud(
        np.column_stack([xyz, image.intensity[mask].astype(np.float64)])
    )


def normalize_depth(d, cfg: SensorConfig):
    """Map depth in [0, max_range] to [0, 1] by log compression."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0.0) or np.any(d > cfg.max_range):
        raise ValueError(f"depth outside [0, {cfg.max_range}]")
    out = np.log2(d + 1.0) / math.log2(cfg.max_range + 1.0)
    return float(out) if out.ndim == 0 else out


def denormalize_depth(x, cfg: SensorConfig):
    """Inverse of :func:`normalize_depth`."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("normalized depth outside [0, 1]")
    out = np.exp2(x * math.log2(cfg.max_range + 1.0)) - 1.0
    return float(out) if out.ndim == 0 else out


def encode_tensor(image: RangeImage, cfg: SensorConfig) -> np.ndarray:
    """(H, W, 3) float32 tensor: rescaled depth, rescaled intensity, mask.

    Value channels live in [-1, 1]; invalid pixels encode as -1 with mask 0.
    """
    mask = image.valid
    depth_norm = np.zeros(image.shape)
    depth_norm[mask] = normalize_depth(image.depth[mask].astype(np.float64), cfg)
    out = np.empty(image.shape + (3,), dtype=np.float32)
    out[:, :, 0] = np.where(mask, 2.0 * depth_norm - 1.0, -1.0)
    out[:, :, 1] = np.where(mask, 2.0 * image.intensity - 1.0, -1.0)
    out[:, :, 2] = mask.astype(np.float32)
    return out


def decode_tensor(tensor: np.ndarray, cfg: SensorConfig) -> RangeImage:
    """Inverse of :func:`encode_tensor`; mask < 0.5 marks invalid pixels."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3 or tensor.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) tensor, got {tensor.shape}")
    mask = tensor[:, :, 2] >= 0.5
    depth = np.zeros(tensor.shape[:2])
    if mask.any():
        norm = np.clip(0.5 * (tensor[:, :, 0][mask] + 1.0), 0.0, 1.0)
        depth[mask] = denormalize_depth(norm, cfg)
    # A masked-on pixel whose value decodes to zero depth carries no return.
    mask = mask & (depth > 0.0)
    depth[~mask] = 0.0
    intensity = np.zeros(tensor.shape[:2])
    intensity[mask] = np.clip(0.5 * (tensor[:, :, 1][mask] + 1.0), 0.0, 1.0)
    return RangeImage(depth, intensity, mask)
