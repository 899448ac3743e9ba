import math

import numpy as np
import pytest

from lidar4d.core import Box3D, PointCloud, Pose, Trajectory
from lidar4d.layout import Layout4D, LayoutObject
from lidar4d.rangecodec import project, unproject
from lidar4d.warp import (
    conditioning_map,
    ego_pose_at,
    heading_sequence,
    object_pose_at,
    relative_motion,
    split_fg_bg,
    warp_background,
    warp_object,
    warp_object_step,
)

from conftest import random_cloud


def test_ego_pose_straight_motion():
    traj = Trajectory([[1.0, 0.0], [2.0, 0.0]])
    pose = ego_pose_at(traj, 2)
    assert np.allclose(pose.translation, [2.0, 0.0, 0.0])
    assert np.allclose(pose.rotation, np.eye(3))


def test_ego_pose_diagonal_step_yaw():
    traj = Trajectory([[0.0, 0.0], [1.0, 1.0]])
    pose = ego_pose_at(traj, 2)
    yaw = math.atan2(pose.rotation[1, 0], pose.rotation[0, 0])
    assert yaw == pytest.approx(math.pi / 4)


def test_ego_pose_zero_trajectory_is_identity():
    traj = Trajectory.zeros(4)
    for t in range(5):
        pose = ego_pose_at(traj, t)
        assert np.allclose(pose.matrix, np.eye(4))
    with pytest.raises(ValueError):
        ego_pose_at(traj, 5)


def test_heading_holds_previous_on_zero_step():
    traj = Trajectory([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    yaws = heading_sequence(traj)
    assert yaws[1] == 0.0
    assert yaws[2] == 0.0  # zero step keeps heading
    assert yaws[3] == pytest.approx(math.pi / 2)


def test_relative_motion_identity_and_composition(rng):
    a = Pose.from_yaw(0.4, (1.0, 2.0, 0.0))
    assert np.allclose(relative_motion(a, a).matrix, np.eye(4), atol=1e-12)
    t1 = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    t2 = Pose(np.eye(3), np.array([0.0, 3.0, 0.0]))
    assert np.allclose(relative_motion(t2, t1).translation, [-1.0, 3.0, 0.0])
    for _ in range(10):
        g_prev = Pose.from_yaw(rng.uniform(-3, 3), rng.uniform(-5, 5, 3))
        g_t = Pose.from_yaw(rng.uniform(-3, 3), rng.uniform(-5, 5, 3))
        delta = relative_motion(g_t, g_prev)
        assert np.allclose(delta.compose(g_prev).matrix, g_t.matrix, atol=1e-9)


def test_split_no_boxes_all_background(rng, sensor):
    cloud = random_cloud(rng, 100, sensor)
    decomp = split_fg_bg(cloud, [])
    assert len(decomp.background) == 100
    assert decomp.foregrounds == {}


def test_split_assigns_contained_point():
    box = Box3D((5.0, 0.0, 0.0), (2, 2, 2), 0.0)
    cloud = PointCloud.from_xyz([[5.0, 0.0, 0.0], [20.0, 0.0, 0.0]])
    decomp = split_fg_bg(cloud, [box], [7])
    assert len(decomp.foregrounds[7]) == 1
    assert len(decomp.background) == 1


def test_split_partition_property(rng, sensor):
    cloud = random_cloud(rng, 500, sensor)
    boxes = [
        Box3D((10, 0, 0), (4, 4, 4), 0.3),
        Box3D((11, 1, 0), (4, 4, 4), -0.5),  # overlapping: first box wins
        Box3D((-15, 5, 0), (6, 6, 6), 0.0),
    ]
    decomp = split_fg_bg(cloud, boxes)
    assert decomp.total_points() == len(cloud)


def test_warp_background_examples():
    cloud = PointCloud.from_xyz([[10.0, 0.0, 0.0]])
    same = warp_background(cloud, Pose.identity(), Pose.identity())
    assert same == cloud
    forward = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    moved = warp_background(cloud, forward, Pose.identity())
    assert np.allclose(moved.xyz, [[9.0, 0.0, 0.0]])


def test_warp_background_round_trip(rng, sensor):
    cloud = random_cloud(rng, 200, sensor)
    pose_t = Pose.from_yaw(0.3, (1.0, -0.5, 0.0))
    pose_prev = Pose.from_yaw(-0.2, (0.0, 1.0, 0.0))
    there = warp_background(cloud, pose_t, pose_prev)
    back = warp_background(there, pose_prev, pose_t)
    assert np.allclose(back.xyz, cloud.xyz, atol=1e-9)


def test_warp_preserves_pairwise_distances(rng, sensor):
    cloud = random_cloud(rng, 50, sensor)
    pose_t = Pose.from_yaw(1.1, (3.0, -2.0, 0.0))
    moved = warp_background(cloud, pose_t, Pose.identity())
    d0 = np.linalg.norm(cloud.xyz[:, None] - cloud.xyz[None, :], axis=2)
    d1 = np.linalg.norm(moved.xyz[:, None] - moved.xyz[None, :], axis=2)
    assert np.allclose(d0, d1, atol=1e-9)


def test_composed_increments_match_direct(rng):
    steps = 100
    disp = np.cumsum(rng.uniform(-0.5, 0.5, (steps, 2)), axis=0)
    traj = Trajectory(disp)
    composed = Pose.identity()
    for t in range(1, steps + 1):
        composed = relative_motion(ego_pose_at(traj, t), ego_pose_at(traj, t - 1)).compose(
            composed
        )
    direct = ego_pose_at(traj, steps)
    assert np.allclose(composed.matrix, direct.matrix, atol=1e-7)


def test_warp_object_static_ego_moving_object():
    box = Box3D((5.0, 0.0, 0.0), (2, 2, 2), 0.0)
    fg = PointCloud.from_xyz([[5.0, 0.0, 0.0]])
    traj = Trajectory([[1.0, 0.0]])
    ego = Trajectory.zeros(1)
    moved, box_t = warp_object(fg, box, traj, ego, 1)
    assert np.allclose(moved.xyz, [[6.0, 0.0, 0.0]])
    assert np.allclose(box_t.center, [6.0, 0.0, 0.0])


def test_warp_object_moving_ego_static_object():
    box = Box3D((5.0, 0.0, 0.0), (2, 2, 2), 0.0)
    fg = PointCloud.from_xyz([[5.0, 0.0, 0.0]])
    traj = Trajectory.zeros(1)
    ego = Trajectory([[1.0, 0.0]])
    moved, box_t = warp_object(fg, box, traj, ego, 1)
    assert np.allclose(moved.xyz, [[4.0, 0.0, 0.0]])
    assert np.allclose(box_t.center, [4.0, 0.0, 0.0])


def test_warp_object_center_matches_composed_transform(rng):
    for _ in range(10):
        box = Box3D(rng.uniform(-10, 10, 3), (2, 4, 2), rng.uniform(-3, 3))
        traj = Trajectory(rng.uniform(-2, 2, (3, 2)))
        ego = Trajectory(rng.uniform(-1, 1, (3, 2)))
        t = 3
        fg = PointCloud.from_xyz([box.center])
        moved, box_t = warp_object(fg, box, traj, ego, t)
        expected = ego_pose_at(ego, t).inverse().compose(object_pose_at(box, traj, t))
        assert np.allclose(moved.xyz[0], expected.apply(box.center), atol=1e-9)
        assert np.allclose(box_t.center, expected.apply(box.center), atol=1e-9)


def test_warp_object_step_composes_to_full_warp(rng):
    box = Box3D((4.0, 1.0, 0.0), (2, 3, 2), 0.4)
    traj = Trajectory([[0.5, 0.1], [1.0, 0.4]])
    ego = Trajectory([[0.2, 0.0], [0.4, 0.1]])
    fg0 = PointCloud.from_xyz(rng.uniform(-1, 1, (20, 3)) + box.center)
    direct, _ = warp_object(fg0, box, traj, ego, 2)
    via1, _ = warp_object(fg0, box, traj, ego, 1)
    stepped = warp_object_step(via1, box, traj, ego, 2)
    assert np.allclose(stepped.xyz, direct.xyz, atol=1e-9)


def _layout_for(boxes, trajectories, ids):
    objs = tuple(
        LayoutObject(i, "car", b, t, PointCloud(np.zeros((1, 4))))
        for i, b, t in zip(ids, boxes, trajectories)
    )
    return Layout4D(objs)


def test_conditioning_map_zero_motion_matches_frame0(rng, sensor):
    cloud = random_cloud(rng, 3000, sensor, r_lo=2.0, r_hi=60.0)
    boxes = [Box3D((10, 0, 0), (4, 4, 4), 0.0)]
    traj = [Trajectory.zeros(2)]
    layout = _layout_for(boxes, traj, [1])
    decomp = split_fg_bg(cloud, boxes, [1])
    ego = Trajectory.zeros(2)
    cond = conditioning_map(decomp, decomp, layout, ego, 1, sensor)
    assert cond == project(cloud, sensor)


def test_conditioning_map_depth_is_min_over_sources(rng, sensor):
    near = PointCloud.from_xyz([[5.0, 0.0, 0.0]])
    far = PointCloud.from_xyz([[9.0, 0.0, 0.0]])
    layout = _layout_for([], [], [])
    ego = Trajectory.zeros(1)
    from lidar4d.warp import FrameDecomposition

    cond = conditioning_map(
        FrameDecomposition(near, {}), FrameDecomposition(far, {}), layout, ego, 1, sensor
    )
    rows, cols = np.nonzero(cond.valid)
    assert len(rows) == 1
    assert cond.depth[rows[0], cols[0]] == np.float32(5.0)


def test_conditioning_map_reprojection_idempotent(rng, sensor):
    cloud = random_cloud(rng, 2000, sensor, r_lo=2.0, r_hi=60.0)
    layout = _layout_for([], [], [])
    decomp = split_fg_bg(cloud, [])
    ego = Trajectory([[0.05, 0.0]])
    cond = conditioning_map(decomp, decomp, layout, ego, 1, sensor)
    again = project(unproject(cond, sensor), sensor)
    assert cond == again
