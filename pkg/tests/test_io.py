import struct

import numpy as np
import pytest

from lidar4d import io
from lidar4d.core import Box3D, PointCloud, Trajectory
from lidar4d.diffusion import mlp_init
from lidar4d.edit import EditOp
from lidar4d.errors import (
    BadMagicError,
    CountMismatchError,
    SchemaError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from lidar4d.evalsuite import DetectionRecord, GroundTruthRecord
from lidar4d.layout import Layout4D, LayoutObject
from lidar4d.scenegraph import build_graph
from lidar4d.synth import SceneObject, SceneSpec


def _cloud():
    data = np.array(
        [[1.0, 2.0, 3.0, 0.5], [-4.0, 0.25, 8.0, 1.0]], dtype=np.float32
    ).astype(np.float64)
    return PointCloud(data)


def test_pointcloud_round_trip(tmp_path):
    path = tmp_path / "cloud.lcpc"
    cloud = _cloud()
    io.write_pointcloud(cloud, path)
    assert io.read_pointcloud(path) == cloud


def test_pointcloud_bad_magic(tmp_path):
    path = tmp_path / "bad.lcpc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagicError):
        io.read_pointcloud(path)


def test_pointcloud_truncation_and_count(tmp_path):
    path = tmp_path / "cloud.lcpc"
    io.write_pointcloud(_cloud(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(TruncatedPayloadError):
        io.read_pointcloud(path)
    path.write_bytes(raw + b"\x00" * 16)
    with pytest.raises(CountMismatchError):
        io.read_pointcloud(path)


def test_pointcloud_version_rejection(tmp_path):
    path = tmp_path / "cloud.lcpc"
    io.write_pointcloud(_cloud(), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        io.read_pointcloud(path)


def test_range_tensor_round_trip(tmp_path):
    path = tmp_path / "tensor.lcrt"
    tensor = np.random.default_rng(0).normal(size=(4, 8, 3)).astype(np.float32)
    io.write_range_tensor(tensor, path)
    assert np.array_equal(io.read_range_tensor(path), tensor)


def test_range_tensor_shape_mismatch(tmp_path):
    path = tmp_path / "tensor.lcrt"
    io.write_range_tensor(np.zeros((2, 4, 3), dtype=np.float32), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(TruncatedPayloadError):
        io.read_range_tensor(path)


def test_range_tensor_little_endian_layout(tmp_path):
    path = tmp_path / "tensor.lcrt"
    tensor = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    io.write_range_tensor(tensor, path)
    raw = path.read_bytes()
    assert raw[:4] == b"LCRT"
    version, h, w, c = struct.unpack("<IIII", raw[4:20])
    assert (version, h, w, c) == (1, 1, 2, 3)
    assert struct.unpack("<6f", raw[20:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_denoiser_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    model = mlp_init(4, 3, rng, hidden=(8, 6))
    path = tmp_path / "model.lcdn"
    io.write_denoiser(model, path)
    back = io.read_denoiser(path)
    assert back.x_dim == model.x_dim and back.cond_dim == model.cond_dim
    for a, b in zip(back.weights, model.weights):
        assert np.array_equal(a, b.astype(np.float32).astype(np.float64))


def _layout():
    shape = PointCloud(np.array([[0.1, -0.2, 0.3, 0.5]]))
    objs = (
        LayoutObject(1, "car", Box3D((10, 0, 0), (1.8, 4.2, 1.6), 0.2),
                     Trajectory([[1.0, 0.0], [2.0, 0.0]]), shape),
    )
    return Layout4D(objs)


def test_scene_graph_json_round_trip():
    ann = {
        "objects": [
            {
                "category": "car",
                "num_points": 77,
                "box": {"center": [5, 1, 0], "size": [1.8, 4.2, 1.6], "yaw": 0.3},
                "motion_state": "straight",
            }
        ]
    }
    graph = build_graph(ann)
    doc = io.scene_graph_to_json(graph)
    assert io.scene_graph_from_json(doc) == graph


def test_layout_json_round_trip():
    layout = _layout()
    doc = io.layout_to_json(layout)
    back = io.layout_from_json(doc)
    assert back.get(1).box == layout.get(1).box
    assert back.get(1).trajectory == layout.get(1).trajectory
    assert back.get(1).shape == layout.get(1).shape


def test_schema_kind_and_version_checks():
    doc = io.layout_to_json(_layout())
    doc["schema"] = "somethingelse"
    with pytest.raises(SchemaError):
        io.layout_from_json(doc)
    doc["schema"] = "layout"
    doc["version"] = 99
    with pytest.raises(UnsupportedVersionError):
        io.layout_from_json(doc)


def test_scene_spec_json_round_trip():
    spec = SceneSpec(
        ground_z=-1.84,
        objects=(
            SceneObject(Box3D((8, 0, -0.5), (2, 4, 2), 0.1), Trajectory.zeros(3), 0.7),
        ),
        ego_trajectory=Trajectory([[0.5, 0], [1.0, 0], [1.5, 0]]),
        noise_sigma=0.0,
    )
    back = io.scene_spec_from_json(io.scene_spec_to_json(spec))
    assert back.ground_z == spec.ground_z
    assert back.objects[0].box == spec.objects[0].box
    assert back.ego_trajectory == spec.ego_trajectory


def test_edit_script_round_trip():
    ops = [
        EditOp("delete", target=1),
        EditOp("drag", target=2, offset=(1.0, 0.0, 0.0)),
        EditOp("retrajectory", target=3, trajectory=Trajectory.zeros(2)),
    ]
    back = io.edit_script_from_json(io.edit_script_to_json(ops))
    assert [op.kind for op in back] == ["delete", "drag", "retrajectory"]
    assert back[1].offset == (1.0, 0.0, 0.0)


def test_detection_json_round_trip():
    dets = [DetectionRecord("f0", Box3D((1, 0, 0), (1, 1, 1), 0.0), "car", 0.9)]
    gts = [GroundTruthRecord("f0", Box3D((1, 0, 0), (1, 1, 1), 0.0), "car")]
    back = io.detections_from_json(io.detections_to_json(dets))
    assert back[0].confidence == 0.9
    back_gt = io.ground_truths_from_json(io.ground_truths_to_json(gts))
    assert back_gt[0].category == "car"


def test_classification_and_box_samples_round_trip():
    preds, truths = io.classification_from_json(
        io.classification_to_json(["car", "bus"], ["car", "car"])
    )
    assert preds == ["car", "bus"] and truths == ["car", "car"]
    box = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    samples, gts = io.box_samples_from_json(io.box_samples_to_json([[box]], [box]))
    assert samples[0][0] == box and gts[0] == box


def test_metric_report_round_trip():
    doc = io.metric_report_to_json({"jsd": 0.5}, seed=7)
    assert io.metric_report_from_json(doc) == {"jsd": 0.5}
    assert doc["seed"] == 7


def test_png_writer_is_deterministic(tmp_path):
    img = np.linspace(0, 1, 64).reshape(8, 8)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    io.write_png_gray(img, a)
    io.write_png_gray(img, b)
    blob = a.read_bytes()
    assert blob == b.read_bytes()
    assert blob.startswith(b"\x89PNG\r\n\x1a\n")


def test_csv_writer(tmp_path):
    path = tmp_path / "grid.csv"
    io.write_csv(np.array([[1.0, 2.0], [3.0, 4.5]]), path)
    rows = path.read_text().strip().splitlines()
    assert rows[0].split(",") == ["1", "2"]
