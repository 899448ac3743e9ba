"""Layout-driven scene editing: layout edits, range-space masks, inpainting.

The inpainting blend mixes a Gaussian-perturbed copy of the original scene
into every denoising step outside the edit mask, so untouched pixels converge
back to the original exactly (the final step uses alpha_bar = 1 and adds no
noise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels, diffusion
from .core import Trajectory, iou_3d
from .layout import Layout4D, LayoutObject
from .rangecodec import SensorConfig, pixel_ray_directions

EDIT_KINDS = ("insert", "delete", "drag", "retrajectory")
DEFAULT_MASK_DILATION = 2


@dataclass(frozen=True)
class EditOp:
    """One edit: insert a node, delete one, drag a box, or swap a trajectory."""

    kind: str
    target: Optional[int] = None
    node: Optional[LayoutObject] = None  # insert payload
    offset: Optional[tuple] = None  # drag payload (dx, dy, dz)
    trajectory: Optional[Trajectory] = None  # retrajectory payload

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise ValueError(f"unknown edit kind '{self.kind}'")
        if self.kind == "insert":
            if self.node is None:
                raise ValueError("insert needs a full node payload")
        elif self.target is None:
            raise ValueError(f"{self.kind} needs a target node id")
        if self.kind == "drag":
            if self.offset is None or len(self.offset) != 3:
                raise ValueError("drag needs a (dx, dy, dz) offset")
        if self.kind == "retrajectory" and self.trajectory is None:
            raise ValueError("retrajectory needs a trajectory payload")


@dataclass(frozen=True)
class EditResult:
    layout: Layout4D
    collisions: tuple  # (node id, node id, iou) for every overlapping pair


def _collisions(layout: Layout4D) -> tuple:
    found = []
    objs = layout.objects
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            iou = iou_3d(objs[i].box, objs[j].box)
            if iou > 0.0:
                found.append((objs[i].node_id, objs[j].node_id, iou))
    return tuple(found)


def apply_edit(layout: Layout4D, op: EditOp) -> EditResult:
    """Apply one edit; collisions created by the edit are reported, not fatal."""
    objects = list(layout.objects)
    if op.kind == "insert":
        if any(o.node_id == op.node.node_id for o in objects):
            raise ValueError(f"node id {op.node.node_id} already exists")
        if len(op.node.trajectory) != layout.trajectory_steps and objects:
            raise ValueError("inserted trajectory length must match the layout")
        objects.append(op.node)
    else:
        index = next(
            (i for i, o in enumerate(objects) if o.node_id == op.target), None
        )
        if index is None:
            raise KeyError(f"no layout object with node id {op.target}")
        if op.kind == "delete":
            objects.pop(index)
        elif op.kind == "drag":
            moved = objects[index]
            objects[index] = replace(moved, box=moved.box.translated(op.offset))
        elif op.kind == "retrajectory":
            if len(op.trajectory) != layout.trajectory_steps:
                raise ValueError("new trajectory length must match the layout")
            objects[index] = replace(objects[index], trajectory=op.trajectory)
    edited = Layout4D(tuple(objects), layout.bounds)
    return EditResult(edited, _collisions(edited))


def apply_edits(layout: Layout4D, ops: Sequence[EditOp]) -> EditResult:
    """Apply an ordered edit script; collisions reported for the final state."""
    result = EditResult(layout, ())
    for op in ops:
        result = apply_edit(result.layout, op)
    return result


def _changed_boxes(old: Layout4D, new: Layout4D) -> list:
    old_map = {o.node_id: o for o in old.objects}
    new_map = {o.node_id: o for o in new.objects}
    boxes = []
    for node_id, obj in old_map.items():
        other = new_map.get(node_id)
        if other is None:
            boxes.append(obj.box)
        elif other.box != obj.box:
            boxes.append(obj.box)
            boxes.append(other.box)
    for node_id, obj in new_map.items():
        if node_id not in old_map:
            boxes.append(obj.box)
    return boxes


def _dilate_wrap(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation that wraps horizontally (azimuth) only."""
    if radius <= 0:
        return mask
    out = mask.copy()
    height = mask.shape[0]
    for dv in range(-radius, radius + 1):
        lo, hi = max(0, -dv), min(height, height - dv)
        shifted_rows = np.zeros_like(mask)
        shifted_rows[lo + dv : hi + dv] = mask[lo:hi]
        for du in range(-radius, radius + 1):
            out |= np.roll(shifted_rows, du, axis=1)
    return out


def edit_mask(
    layout_old: Layout4D,
    layout_new: Layout4D,
    cfg: SensorConfig,
    dilation: int = DEFAULT_MASK_DILATION,
) -> np.ndarray:
    """Binary (H, W) mask of pixels whose center ray meets any edited box.

    Both the old and the new position of a moved box are masked; the mask is
    then dilated by the given Chebyshev radius (wrapping in azimuth).
    """
    boxes = _changed_boxes(layout_old, layout_new)
    mask = np.zeros((cfg.height, cfg.width), dtype=bool)
    if boxes:
        dirs = pixel_ray_directions(cfg).reshape(-1, 3)
        rows = np.stack([b.as_row() for b in boxes])
        t_hit, _ = _kernels.ray_box_hits(dirs, np.zeros(3), rows)
        mask = np.isfinite(t_hit).reshape(cfg.height, cfg.width)
    return _dilate_wrap(mask, dilation).astype(np.uint8)


def _blend(d_hat, x0_orig, mask, alpha_bar_prev: float, rng: np.random.Generator):
    d_hat = np.asarray(d_hat, dtype=np.float64)
    x0_orig = np.asarray(x0_orig, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if d_hat.shape != x0_orig.shape:
        raise ValueError(f"shape mismatch: {d_hat.shape} vs {x0_orig.shape}")
    if mask.shape != d_hat.shape[: mask.ndim]:
        raise ValueError("mask must match the leading sample dimensions")
    m = mask.reshape(mask.shape + (1,) * (d_hat.ndim - mask.ndim))
    noise_scale = math.sqrt(max(0.0, 1.0 - alpha_bar_prev))
    if noise_scale > 0.0:
        perturbed = (
            math.sqrt(alpha_bar_prev) * x0_orig
            + noise_scale * rng.standard_normal(d_hat.shape)
        )
    else:
        perturbed = x0_orig
    return (1.0 - m) * perturbed + m * d_hat


def inpaint_blend(
    d_hat,
    x0_orig,
    mask,
    tau: int,
    schedule: diffusion.NoiseSchedule,
    rng: np.random.Generator,
):
    """One blend step: keep masked content, re-noise the original elsewhere."""
    return _blend(d_hat, x0_orig, mask, float(schedule.alpha_bar[tau - 1]), rng)


def resynthesize(
    denoiser: Callable,
    cond,
    x0_orig: np.ndarray,
    mask: np.ndarray,
    schedule: diffusion.NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rerun the sampler with the blend applied after every denoising step.

    Unmasked pixels return to ``x0_orig`` exactly because the final blend
    uses alpha_bar = 1.
    """
    x0_orig = np.asarray(x0_orig, dtype=np.float64)
    timesteps = diffusion.respaced_timesteps(schedule.num_steps, steps)
    abar = schedule.alpha_bar
    x = rng.standard_normal(x0_orig.shape)
    for k in range(len(timesteps) - 1, -1, -1):
        tau = int(timesteps[k])
        tau_prev = int(timesteps[k - 1]) if k > 0 else 0
        abar_t = abar[tau]
        abar_prev = abar[tau_prev]
        alpha = abar_t / abar_prev
        eps_hat = denoiser(x, tau, cond)
        mean = (x - ((1.0 - alpha) / math.sqrt(1.0 - abar_t)) * eps_hat) / math.sqrt(
            alpha
        )
        if k > 0:
            var = (1.0 - alpha) * (1.0 - abar_prev) / (1.0 - abar_t)
            x = mean + math.sqrt(var) * rng.standard_normal(x.shape)
        else:
            x = mean
        x = _blend(x, x0_orig, mask, float(abar_prev), rng)
    return x
