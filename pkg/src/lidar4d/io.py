"""File formats: binary point clouds and range tensors, JSON schemas, the
denoiser parameter file, and PNG/CSV figure export.

Binary layouts (all little-endian):

* Point cloud ``.lcpc``: magic ``LCPC``, u32 version, u32 count, then
  count x 4 float32 rows (x, y, z, intensity).
* Range tensor ``.lcrt``: magic ``LCRT``, u32 version, u32 H, u32 W, u32 C,
  then H*W*C float32 values, row-major, channel last.
* Denoiser parameters ``.lcdn``: magic ``LCDN``, u32 version, u32 x_dim,
  u32 cond_dim, u32 emb_dim, u32 n_layers, then n_layers + 1 u32 layer
  widths, then per layer float32 weights (in x out, row-major) and biases.

JSON documents carry ``{"schema": <kind>, "version": <int>}``; readers
reject documents whose version exceeds the supported one.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Box3D, PointCloud, Trajectory
from .diffusion import MLPDenoiser
from .edit import EditOp
from .errors import (
    BadMagicError,
    CountMismatchError,
    SchemaError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .evalsuite import DetectionRecord, GroundTruthRecord
from .layout import Layout4D, LayoutObject, WorldBounds
from .rangecodec import RangeImage
from .scenegraph import Edge, Node, SceneGraph, parse_box
from .synth import SceneObject, SceneSpec

POINTCLOUD_MAGIC = b"LCPC"
RANGE_TENSOR_MAGIC = b"LCRT"
DENOISER_MAGIC = b"LCDN"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Binary formats
# ---------------------------------------------------------------------------


def _read_exact(handle, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise TruncatedPayloadError(f"truncated {what}: wanted {count} bytes, got {len(data)}")
    return data


def _check_magic(handle, expected: bytes):
    magic = handle.read(len(expected))
    if magic != expected:
        raise BadMagicError(f"bad magic {magic!r}, expected {expected!r}")


def _check_version(version: int, what: str):
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(f"{what} version {version} is newer than supported {FORMAT_VERSION}")


def write_pointcloud(cloud: PointCloud, path) -> None:
    payload = cloud.data.astype("<f4").tobytes()
    with open(path, "wb") as handle:
        handle.write(POINTCLOUD_MAGIC)
        handle.write(struct.pack("<II", FORMAT_VERSION, len(cloud)))
        handle.write(payload)


def read_pointcloud(path) -> PointCloud:
    with open(path, "rb") as handle:
        _check_magic(handle, POINTCLOUD_MAGIC)
        version, count = struct.unpack("<II", _read_exact(handle, 8, "header"))
        _check_version(version, "point cloud")
        payload = handle.read()
    expected = count * 16
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) != expected:
        raise CountMismatchError(
            f"payload holds {len(payload) // 16} rows, header promises {count}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(count, 4)
    return PointCloud(data.astype(np.float64))


def write_range_tensor(tensor: np.ndarray, path) -> None:
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ValueError("range tensor must be (H, W, C)")
    h, w, c = tensor.shape
    with open(path, "wb") as handle:
        handle.write(RANGE_TENSOR_MAGIC)
        handle.write(struct.pack("<IIII", FORMAT_VERSION, h, w, c))
        handle.write(tensor.astype("<f4").tobytes())


def read_range_tensor(path) -> np.ndarray:
    with open(path, "rb") as handle:
        _check_magic(handle, RANGE_TENSOR_MAGIC)
        version, h, w, c = struct.unpack("<IIII", _read_exact(handle, 16, "header"))
        _check_version(version, "range tensor")
        payload = handle.read()
    expected = h * w * c * 4
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) != expected:
        raise CountMismatchError(
            f"payload holds {len(payload) // 4} values, header promises {h * w * c}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32)


def write_denoiser(model: MLPDenoiser, path) -> None:
    widths = [model.weights[0].shape[0]] + [w.shape[1] for w in model.weights]
    with open(path, "wb") as handle:
        handle.write(DENOISER_MAGIC)
        handle.write(
            struct.pack(
                "<IIIII",
                FORMAT_VERSION,
                model.x_dim,
                model.cond_dim,
                model.emb_dim,
                len(model.weights),
            )
        )
        handle.write(struct.pack(f"<{len(widths)}I", *widths))
        for w, b in zip(model.weights, model.biases):
            handle.write(w.astype("<f4").tobytes())
            handle.write(b.astype("<f4").tobytes())


def read_denoiser(path) -> MLPDenoiser:
    with open(path, "rb") as handle:
        _check_magic(handle, DENOISER_MAGIC)
        version, x_dim, cond_dim, emb_dim, n_layers = struct.unpack(
            "<IIIII", _read_exact(handle, 20, "header")
        )
        _check_version(version, "denoiser")
        widths = struct.unpack(
            f"<{n_layers + 1}I", _read_exact(handle, 4 * (n_layers + 1), "layer widths")
        )
        weights, biases = [], []
        for i in range(n_layers):
            din, dout = widths[i], widths[i + 1]
            wbytes = _read_exact(handle, din * dout * 4, f"layer {i} weights")
            bbytes = _read_exact(handle, dout * 4, f"layer {i} biases")
            weights.append(
                np.frombuffer(wbytes, dtype="<f4").reshape(din, dout).astype(np.float64)
            )
            biases.append(np.frombuffer(bbytes, dtype="<f4").astype(np.float64))
    if widths[0] != x_dim + emb_dim + cond_dim or widths[-1] != x_dim:
        raise CountMismatchError("layer widths disagree with the header dims")
    return MLPDenoiser(x_dim, cond_dim, emb_dim, tuple(weights), tuple(biases))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def _envelope(kind: str, payload: dict) -> dict:
    return {"schema": kind, "version": SCHEMA_VERSION, **payload}


def _open_document(doc: dict, kind: str) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError("document", "expected a JSON object")
    if doc.get("schema") != kind:
        raise SchemaError("schema", f"expected '{kind}', got {doc.get('schema')!r}")
    version = doc.get("version")
    if not isinstance(version, int):
        raise SchemaError("version", "expected an integer")
    if version > SCHEMA_VERSION:
        raise UnsupportedVersionError(
            f"{kind} schema version {version} is newer than supported {SCHEMA_VERSION}"
        )
    return doc


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def dump_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=False)
        handle.write("\n")


def box_to_json(box: Box3D) -> dict:
    return {
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
    }


def trajectory_to_json(trajectory: Trajectory) -> list:
    return [[float(a), float(b)] for a, b in trajectory.displacements]


def _trajectory_from_json(raw, context: str) -> Trajectory:
    if not isinstance(raw, list) or not raw:
        raise SchemaError(context, "expected a non-empty list of [dx, dy]")
    try:
        return Trajectory(np.asarray(raw, dtype=float))
    except (ValueError, TypeError) as exc:
        raise SchemaError(context, str(exc)) from exc


def scene_graph_to_json(graph: SceneGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        nodes.append(
            {
                "id": n.id,
                "category": n.category,
                "motion_state": n.motion_state,
                "box": None if n.box is None else box_to_json(n.box),
                "num_points": n.num_points,
                "trajectory": None
                if n.trajectory is None
                else trajectory_to_json(n.trajectory),
            }
        )
    edges = [
        {"subject": e.subject, "object": e.object, "labels": list(e.labels)}
        for e in graph.edges
    ]
    return _envelope("scene_graph", {"nodes": nodes, "edges": edges})


def scene_graph_from_json(doc: dict) -> SceneGraph:
    doc = _open_document(doc, "scene_graph")
    nodes = []
    for i, raw in enumerate(doc.get("nodes", [])):
        context = f"nodes[{i}]"
        if not isinstance(raw, dict) or "id" not in raw:
            raise SchemaError(context, "expected a node object with an id")
        box = None
        if raw.get("box") is not None:
            box = parse_box(raw["box"], f"{context}.box")
        trajectory = None
        if raw.get("trajectory") is not None:
            trajectory = _trajectory_from_json(raw["trajectory"], f"{context}.trajectory")
        nodes.append(
            Node(
                int(raw["id"]),
                str(raw.get("category", "")),
                str(raw.get("motion_state", "stationary")),
                box=box,
                num_points=int(raw.get("num_points", 0)),
                trajectory=trajectory,
            )
        )
    edges = []
    for i, raw in enumerate(doc.get("edges", [])):
        context = f"edges[{i}]"
        if not isinstance(raw, dict) or "subject" not in raw or "object" not in raw:
            raise SchemaError(context, "expected subject/object/labels")
        edges.append(
            Edge(int(raw["subject"]), int(raw["object"]), tuple(raw.get("labels", ())))
        )
    return SceneGraph(tuple(nodes), tuple(edges))


def layout_to_json(layout: Layout4D) -> dict:
    objects = []
    for o in layout.objects:
        objects.append(
            {
                "node_id": o.node_id,
                "category": o.category,
                "box": box_to_json(o.box),
                "trajectory": trajectory_to_json(o.trajectory),
                "shape": [[float(v) for v in row] for row in o.shape.data],
            }
        )
    return _envelope(
        "layout",
        {
            "bounds": {
                "minimum": [float(v) for v in layout.bounds.minimum],
                "maximum": [float(v) for v in layout.bounds.maximum],
            },
            "objects": objects,
        },
    )


def layout_from_json(doc: dict) -> Layout4D:
    doc = _open_document(doc, "layout")
    bounds_raw = doc.get("bounds")
    if not isinstance(bounds_raw, dict):
        raise SchemaError("bounds", "expected an object")
    bounds = WorldBounds(
        np.asarray(bounds_raw.get("minimum"), dtype=float),
        np.asarray(bounds_raw.get("maximum"), dtype=float),
    )
    objects = []
    for i, raw in enumerate(doc.get("objects", [])):
        context = f"objects[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(context, "expected an object record")
        try:
            shape = PointCloud(np.asarray(raw.get("shape", []), dtype=float).reshape(-1, 4))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{context}.shape", str(exc)) from exc
        objects.append(
            LayoutObject(
                int(raw["node_id"]),
                str(raw.get("category", "")),
                parse_box(raw["box"], f"{context}.box"),
                _trajectory_from_json(raw["trajectory"], f"{context}.trajectory"),
                shape,
            )
        )
    return Layout4D(tuple(objects), bounds)


def scene_spec_to_json(spec: SceneSpec) -> dict:
    return _envelope(
        "scene_spec",
        {
            "ground_z": spec.ground_z,
            "ground_intensity": spec.ground_intensity,
            "noise_sigma": spec.noise_sigma,
            "ego_trajectory": trajectory_to_json(spec.ego_trajectory),
            "objects": [
                {
                    "box": box_to_json(o.box),
                    "trajectory": trajectory_to_json(o.trajectory),
                    "intensity": o.intensity,
                }
                for o in spec.objects
            ],
        },
    )


def scene_spec_from_json(doc: dict) -> SceneSpec:
    doc = _open_document(doc, "scene_spec")
    if "ground_z" not in doc:
        raise SchemaError("ground_z", "missing")
    objects = []
    for i, raw in enumerate(doc.get("objects", [])):
        context = f"objects[{i}]"
        objects.append(
            SceneObject(
                parse_box(raw["box"], f"{context}.box"),
                _trajectory_from_json(raw["trajectory"], f"{context}.trajectory"),
                float(raw.get("intensity", 0.5)),
            )
        )
    return SceneSpec(
        ground_z=float(doc["ground_z"]),
        objects=tuple(objects),
        ego_trajectory=_trajectory_from_json(doc["ego_trajectory"], "ego_trajectory"),
        ground_intensity=float(doc.get("ground_intensity", 0.2)),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
    )


def edit_script_to_json(ops: Sequence[EditOp]) -> dict:
    payload = []
    for op in ops:
        entry: dict = {"kind": op.kind}
        if op.target is not None:
            entry["target"] = op.target
        if op.node is not None:
            entry["node"] = {
                "node_id": op.node.node_id,
                "category": op.node.category,
                "box": box_to_json(op.node.box),
                "trajectory": trajectory_to_json(op.node.trajectory),
                "shape": [[float(v) for v in row] for row in op.node.shape.data],
            }
        if op.offset is not None:
            entry["offset"] = [float(v) for v in op.offset]
        if op.trajectory is not None:
            entry["trajectory"] = trajectory_to_json(op.trajectory)
        payload.append(entry)
    return _envelope("edit_script", {"ops": payload})


def edit_script_from_json(doc: dict) -> list:
    doc = _open_document(doc, "edit_script")
    ops = []
    for i, raw in enumerate(doc.get("ops", [])):
        context = f"ops[{i}]"
        if not isinstance(raw, dict) or "kind" not in raw:
            raise SchemaError(context, "expected an op with a kind")
        node = None
        if raw.get("node") is not None:
            n = raw["node"]
            node = LayoutObject(
                int(n["node_id"]),
                str(n.get("category", "")),
                parse_box(n["box"], f"{context}.node.box"),
                _trajectory_from_json(n["trajectory"], f"{context}.node.trajectory"),
                PointCloud(np.asarray(n.get("shape", []), dtype=float).reshape(-1, 4)),
            )
        trajectory = None
        if raw.get("trajectory") is not None:
            trajectory = _trajectory_from_json(raw["trajectory"], f"{context}.trajectory")
        try:
            ops.append(
                EditOp(
                    kind=str(raw["kind"]),
                    target=raw.get("target"),
                    node=node,
                    offset=tuple(raw["offset"]) if raw.get("offset") else None,
                    trajectory=trajectory,
                )
            )
        except ValueError as exc:
            raise SchemaError(context, str(exc)) from exc
    return ops


def detections_to_json(records: Sequence[DetectionRecord]) -> dict:
    return _envelope(
        "detections",
        {
            "records": [
                {
                    "frame_id": r.frame_id,
                    "box": box_to_json(r.box),
                    "category": r.category,
                    "confidence": r.confidence,
                }
                for r in records
            ]
        },
    )


def detections_from_json(doc: dict) -> list:
    doc = _open_document(doc, "detections")
    records = []
    for i, raw in enumerate(doc.get("records", [])):
        context = f"records[{i}]"
        try:
            records.append(
                DetectionRecord(
                    str(raw["frame_id"]),
                    parse_box(raw["box"], f"{context}.box"),
                    str(raw["category"]),
                    float(raw["confidence"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(context, str(exc)) from exc
    return records


def ground_truths_to_json(records: Sequence[GroundTruthRecord]) -> dict:
    return _envelope(
        "ground_truths",
        {
            "records": [
                {
                    "frame_id": r.frame_id,
                    "box": box_to_json(r.box),
                    "category": r.category,
                }
                for r in records
            ]
        },
    )


def ground_truths_from_json(doc: dict) -> list:
    doc = _open_document(doc, "ground_truths")
    records = []
    for i, raw in enumerate(doc.get("records", [])):
        context = f"records[{i}]"
        try:
            records.append(
                GroundTruthRecord(
                    str(raw["frame_id"]),
                    parse_box(raw["box"], f"{context}.box"),
                    str(raw["category"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(context, str(exc)) from exc
    return records


def classification_from_json(doc: dict) -> tuple:
    """Prediction/truth label pairs for classification accuracy scoring."""
    doc = _open_document(doc, "classification")
    preds, truths = [], []
    for i, raw in enumerate(doc.get("records", [])):
        context = f"records[{i}]"
        if not isinstance(raw, dict) or "pred" not in raw or "truth" not in raw:
            raise SchemaError(context, "expected pred/truth labels")
        preds.append(str(raw["pred"]))
        truths.append(str(raw["truth"]))
    return preds, truths


def classification_to_json(preds: Sequence[str], truths: Sequence[str]) -> dict:
    return _envelope(
        "classification",
        {"records": [{"pred": p, "truth": t} for p, t in zip(preds, truths)]},
    )


def box_samples_from_json(doc: dict) -> tuple:
    """Per-object sampled boxes plus ground-truth boxes for consistency."""
    doc = _open_document(doc, "box_samples")
    samples, gts = [], []
    for i, raw in enumerate(doc.get("objects", [])):
        context = f"objects[{i}]"
        if not isinstance(raw, dict) or "gt_box" not in raw or "samples" not in raw:
            raise SchemaError(context, "expected gt_box and samples")
        gts.append(parse_box(raw["gt_box"], f"{context}.gt_box"))
        samples.append(
            [
                parse_box(b, f"{context}.samples[{j}]")
                for j, b in enumerate(raw["samples"])
            ]
        )
    return samples, gts


def box_samples_to_json(samples, gt_boxes) -> dict:
    return _envelope(
        "box_samples",
        {
            "objects": [
                {
                    "gt_box": box_to_json(gt),
                    "samples": [box_to_json(b) for b in boxes],
                }
                for boxes, gt in zip(samples, gt_boxes)
            ]
        },
    )


def metric_report_to_json(metrics: dict, seed: Optional[int] = None, extra: Optional[dict] = None) -> dict:
    payload: dict = {"metrics": metrics}
    if seed is not None:
        payload["seed"] = seed
    if extra:
        payload.update(extra)
    return _envelope("metric_report", payload)


def metric_report_from_json(doc: dict) -> dict:
    doc = _open_document(doc, "metric_report")
    metrics = doc.get("metrics")
    if not isinstance(metrics, dict):
        raise SchemaError("metrics", "expected an object")
    return metrics


# ---------------------------------------------------------------------------
# Figure export
# ---------------------------------------------------------------------------


def write_png_gray(values: np.ndarray, path) -> None:
    """Write a [0, 1] float array as an 8-bit grayscale PNG."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("PNG export needs a 2-D array")
    img = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    height, width = img.shape
    raw = b"".join(b"\x00" + img[row].tobytes() for row in range(height))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        data = tag + payload
        return struct.pack(">I", len(payload)) + data + struct.pack(
            ">I", zlib.crc32(data) & 0xFFFFFFFF
        )

    header = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    blob = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 6))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(blob)


def range_image_to_png(image: RangeImage, max_range: float, path) -> None:
    """Depth channel normalized by max range; invalid pixels render black."""
    scaled = np.where(image.valid, image.depth / max_range, 0.0)
    write_png_gray(np.clip(scaled, 0.0, 1.0), path)


def bev_to_png(mass: np.ndarray, path) -> None:
    """Occupancy mass grid rendered with a log-ish brightness curve."""
    mass = np.asarray(mass, dtype=np.float64)
    peak = mass.max()
    scaled = np.sqrt(mass / peak) if peak > 0 else mass
    write_png_gray(scaled, path)


def write_csv(array: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(array), delimiter=",", fmt="%.9g")
