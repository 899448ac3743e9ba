import math

import numpy as np
import pytest

from lidar4d import diffusion
from lidar4d.core import Box3D, PointCloud, Trajectory
from lidar4d.edit import (
    EditOp,
    apply_edit,
    apply_edits,
    edit_mask,
    inpaint_blend,
    resynthesize,
)
from lidar4d.layout import Layout4D, LayoutObject
from lidar4d.rangecodec import pixel_ray_directions
from lidar4d.synth import intersect_ray_obb


def _shape():
    return PointCloud(np.array([[0.0, 0.0, 0.0, 0.5]]))


def _layout(*objs):
    return Layout4D(tuple(objs))


def _obj(node_id, x, y, size=(2.0, 4.0, 1.8), yaw=0.0, steps=5):
    return LayoutObject(
        node_id, "car", Box3D((x, y, -0.5), size, yaw), Trajectory.zeros(steps), _shape()
    )


def test_delete_then_insert_restores_layout():
    layout = _layout(_obj(1, 10, 0), _obj(2, -8, 3))
    deleted = apply_edit(layout, EditOp("delete", target=1)).layout
    assert [o.node_id for o in deleted.objects] == [2]
    restored = apply_edit(deleted, EditOp("insert", node=layout.objects[0])).layout
    assert sorted(o.node_id for o in restored.objects) == [1, 2]
    a = restored.get(1)
    assert a.box == layout.objects[0].box


def test_drag_by_zero_keeps_layout():
    layout = _layout(_obj(1, 10, 0))
    result = apply_edit(layout, EditOp("drag", target=1, offset=(0.0, 0.0, 0.0)))
    assert result.layout.get(1).box == layout.get(1).box
    assert result.collisions == ()


def test_drag_into_collision_is_flagged():
    layout = _layout(_obj(1, 10, 0), _obj(2, 20, 0))
    result = apply_edit(layout, EditOp("drag", target=2, offset=(-9.0, 0.0, 0.0)))
    assert len(result.collisions) == 1
    a, b, iou = result.collisions[0]
    assert {a, b} == {1, 2}
    # the oracle: recompute the overlap directly
    from lidar4d.core import iou_3d

    assert iou == pytest.approx(
        iou_3d(result.layout.get(1).box, result.layout.get(2).box)
    )
    assert iou > 0.0


def test_retrajectory_replaces_and_validates():
    layout = _layout(_obj(1, 10, 0))
    new_traj = Trajectory([[1.0, 0], [2, 0], [3, 0], [4, 0], [5, 0]])
    result = apply_edit(layout, EditOp("retrajectory", target=1, trajectory=new_traj))
    assert result.layout.get(1).trajectory == new_traj
    with pytest.raises(ValueError):
        apply_edit(layout, EditOp("retrajectory", target=1, trajectory=Trajectory.zeros(2)))


def test_apply_edit_errors():
    layout = _layout(_obj(1, 10, 0))
    with pytest.raises(KeyError):
        apply_edit(layout, EditOp("delete", target=9))
    with pytest.raises(ValueError):
        apply_edit(layout, EditOp("insert", node=layout.objects[0]))
    with pytest.raises(ValueError):
        EditOp("drag", target=1, offset=(1.0, 0.0))
    with pytest.raises(ValueError):
        EditOp("teleport", target=1)


def test_node_count_accounting():
    layout = _layout(_obj(1, 10, 0), _obj(2, -8, 3))
    ops = [
        EditOp("delete", target=1),
        EditOp("insert", node=_obj(3, 15, 5)),
        EditOp("insert", node=_obj(4, -15, -5)),
    ]
    result = apply_edits(layout, ops)
    assert len(result.layout) == len(layout) - 1 + 2


def test_edit_mask_empty_without_changes(sensor):
    layout = _layout(_obj(1, 10, 0))
    mask = edit_mask(layout, layout, sensor)
    assert mask.shape == (sensor.height, sensor.width)
    assert mask.sum() == 0


def test_edit_mask_dilation_monotone(sensor):
    layout = _layout(_obj(1, 10, 0))
    edited = apply_edit(layout, EditOp("delete", target=1)).layout
    m0 = edit_mask(layout, edited, sensor, dilation=0)
    m2 = edit_mask(layout, edited, sensor, dilation=2)
    assert m0.sum() > 0
    assert np.all(m2 >= m0)


def test_edit_mask_matches_ray_oracle(sensor):
    layout = _layout(_obj(1, 12, 2, yaw=0.4))
    edited = apply_edit(layout, EditOp("delete", target=1)).layout
    mask = edit_mask(layout, edited, sensor, dilation=0)
    box = layout.get(1).box
    dirs = pixel_ray_directions(sensor)
    for v in range(0, sensor.height, 4):
        for u in range(0, sensor.width, 16):
            hit = intersect_ray_obb(np.zeros(3), dirs[v, u], box) is not None
            assert bool(mask[v, u]) == hit


def test_edit_mask_ignores_untouched_nodes(sensor):
    layout = _layout(_obj(1, 12, 2), _obj(2, -10, -4))
    moved = apply_edit(layout, EditOp("drag", target=1, offset=(2.0, 0.0, 0.0))).layout
    mask = edit_mask(layout, moved, sensor, dilation=0)
    other = edit_mask(
        _layout(_obj(1, 12, 2)),
        _layout(_obj(1, 14, 2)),
        sensor,
        dilation=0,
    )
    assert np.array_equal(mask, other)


def test_retrajectory_does_not_mask(sensor):
    layout = _layout(_obj(1, 12, 2))
    new_traj = Trajectory([[1.0, 0]] * 5)
    edited = apply_edit(layout, EditOp("retrajectory", target=1, trajectory=new_traj)).layout
    assert edit_mask(layout, edited, sensor).sum() == 0


@pytest.fixture(scope="module")
def schedule():
    return diffusion.cosine_schedule(128)


def test_blend_all_ones_returns_denoised(schedule):
    rng = np.random.default_rng(0)
    d_hat = rng.standard_normal((4, 6))
    x0 = rng.standard_normal((4, 6))
    out = inpaint_blend(d_hat, x0, np.ones((4, 6)), 50, schedule, rng)
    assert np.array_equal(out, d_hat)


def test_blend_all_zeros_unit_alpha_returns_original(schedule):
    rng = np.random.default_rng(0)
    d_hat = rng.standard_normal((4, 6))
    x0 = rng.standard_normal((4, 6))
    out = inpaint_blend(d_hat, x0, np.zeros((4, 6)), 1, schedule, rng)
    # tau = 1 uses alpha_bar[0] = 1: zero noise weight
    assert np.array_equal(out, x0)


def test_blend_moments_on_unmasked_pixels(schedule):
    rng = np.random.default_rng(42)
    tau = 64
    abar_prev = float(schedule.alpha_bar[tau - 1])
    x0 = np.full((2000,), 1.5)
    d_hat = np.zeros(2000)
    mask = np.zeros(2000)
    samples = inpaint_blend(d_hat, x0, mask, tau, schedule, rng)
    assert samples.mean() == pytest.approx(math.sqrt(abar_prev) * 1.5, abs=0.05)
    assert samples.std() == pytest.approx(math.sqrt(1 - abar_prev), abs=0.05)


def test_blend_shape_mismatch(schedule):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        inpaint_blend(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((2, 2)), 5, schedule, rng)


def test_resynthesize_restores_outside_mask_and_steers_inside(schedule):
    rng = np.random.default_rng(9)
    x0_orig = rng.uniform(-1, 1, (8, 16))
    target = x0_orig.copy()
    target[2:5, 4:9] = 0.77
    mask = np.zeros((8, 16))
    mask[2:5, 4:9] = 1.0
    denoiser = diffusion.make_target_oracle(target, schedule)
    out = resynthesize(denoiser, None, x0_orig, mask, schedule, 64, rng)
    outside = mask == 0.0
    assert np.array_equal(out[outside], x0_orig[outside])
    assert np.allclose(out[~outside], 0.77, atol=1e-9)
