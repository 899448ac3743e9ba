"""Pure NumPy implementations of the hot kernels.

These are the fallback backend; `lidar4d._kernels._native` provides the same
three functions compiled with Cython. Semantics must match exactly:

* ``zbuffer_project``: nearest depth wins, first input index wins ties.
* ``assign_points_to_boxes``: first containing box in box order, boundary
  inclusive.
* ``ray_box_hits``: smallest positive slab-test hit over all boxes.

Box rows are ``[cx, cy, cz, w, l, h, yaw]`` with ``l`` the extent along the
box heading (local x), ``w`` across it (local y), and ``h`` vertical.
"""
from __future__ import annotations

import numpy as np


def zbuffer_project(us, vs, depth, intensity, height, width):
    """Bin points into an image grid keeping the nearest depth per pixel.

    Inputs are parallel 1-D arrays of pixel columns, rows, depths, and
    intensities; indices must already be inside the grid. Returns
    ``(depth, intensity, valid)`` arrays of shape (height, width).
    """
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    intensity = np.asarray(intensity, dtype=np.float64)

    depth_img = np.zeros((height, width), dtype=np.float64)
    intens_img = np.zeros((height, width), dtype=np.float64)
    valid = np.zeros((height, width), dtype=np.uint8)
    if us.size == 0:
        return depth_img, intens_img, valid

    # Sort ascending by (depth, input index), then write reversed so the
    # nearest point (earliest index on ties) lands last and wins.
    order = np.lexsort((np.arange(us.size), depth))[::-1]
    flat = vs[order] * width + us[order]
    depth_img.ravel()[flat] = depth[order]
    intens_img.ravel()[flat] = intensity[order]
    valid.ravel()[flat] = 1
    return depth_img, intens_img, valid


def assign_points_to_boxes(points, boxes):
    """Index of the first box containing each point, -1 for none.

    ``points`` is (N, 3); ``boxes`` is (B, 7) in the row layout documented in
    the module docstring. Containment is boundary inclusive.
    """
    points = np.asarray(points, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    n = points.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or boxes.shape[0] == 0:
        return out
    unassigned = np.ones(n, dtype=bool)
    for b in range(boxes.shape[0]):
        if not unassigned.any():
            break
        cx, cy, cz, w, l, h, yaw = boxes[b]
        c, s = np.cos(yaw), np.sin(yaw)
        dx = points[:, 0] - cx
        dy = points[:, 1] - cy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        inside = (
            (np.abs(lx) <= 0.5 * l)
            & (np.abs(ly) <= 0.5 * w)
            & (np.abs(points[:, 2] - cz) <= 0.5 * h)
        )
        take = inside & unassigned
        out[take] = b
        unassigned &= ~inside
    return out


def ray_box_hits(dirs, origin, boxes):
    """Nearest positive hit distance of each ray against a set of boxes.

    ``dirs`` is (N, 3) ray directions from the common ``origin`` (3,). Returns
    ``(t, idx)``: hit distance (inf for a miss) and hit box index (-1 for a
    miss). A ray starting inside a box hits at its exit distance.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    n = dirs.shape[0]
    best_t = np.full(n, np.inf, dtype=np.float64)
    best_idx = np.full(n, -1, dtype=np.int64)
    for b in range(boxes.shape[0]):
        cx, cy, cz, w, l, h, yaw = boxes[b]
        c, s = np.cos(yaw), np.sin(yaw)
        ox = origin[0] - cx
        oy = origin[1] - cy
        oz = origin[2] - cz
        # Rotate ray into the box frame.
        o_local = np.array([c * ox + s * oy, -s * ox + c * oy, oz])
        d_local = np.empty_like(dirs)
        d_local[:, 0] = c * dirs[:, 0] + s * dirs[:, 1]
        d_local[:, 1] = -s * dirs[:, 0] + c * dirs[:, 1]
        d_local[:, 2] = dirs[:, 2]
        half = np.array([0.5 * l, 0.5 * w, 0.5 * h])

        t_enter = np.full(n, -np.inf)
        t_exit = np.full(n, np.inf)
        miss = np.zeros(n, dtype=bool)
        for axis in range(3):
            d = d_local[:, axis]
            o = o_local[axis]
            parallel = d == 0.0
            miss |= parallel & (np.abs(o) > half[axis])
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-half[axis] - o) / d
                t2 = (half[axis] - o) / d
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            t_enter = np.where(parallel, t_enter, np.maximum(t_enter, lo))
            t_exit = np.where(parallel, t_exit, np.minimum(t_exit, hi))
        hit = ~miss & (t_exit >= t_enter) & (t_exit > 0.0)
        t_hit = np.where(t_enter > 0.0, t_enter, t_exit)
        better = hit & (t_hit < best_t)
        best_t[better] = t_hit[better]
        best_idx[better] = b
    return best_t, best_idx
