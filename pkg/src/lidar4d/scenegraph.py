"""Ego-centric scene graphs built from annotation records.

A graph holds the ego vehicle as node 0 plus filtered foreground objects.
Every ordered object pair carries an edge with its relation labels, and every
object carries one edge toward the ego node.

Relation predicates (the delta is object center minus subject center, in ego
coordinates):

* position: ``front`` if dx >= |dy|, ``behind`` if -dx >= |dy|, otherwise
  ``left`` (dy > 0) or ``right``. Exactly one always applies.
* ``close by`` iff the center distance is below ``close_by_radius``.
* ``bigger than`` / ``smaller than`` iff the volume ratio exceeds
  ``size_ratio``.
* ``taller than`` / ``shorter than`` iff the height difference exceeds
  ``height_margin``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Box3D, Trajectory
from .errors import SchemaError

CATEGORIES = (
    "car",
    "truck",
    "construction vehicle",
    "bus",
    "trailer",
    "motorcycle",
    "bicycle",
    "pedestrian",
)
EGO_CATEGORY = "ego"
MOTION_STATES = ("stationary", "straight", "left-turn", "right-turn")
RELATION_LABELS = (
    "front",
    "behind",
    "left",
    "right",
    "close by",
    "bigger than",
    "smaller than",
    "taller than",
    "shorter than",
)

MIN_OBJECT_POINTS = 30
FILTER_BOUNDS = np.array([[-80.0, -80.0, -8.0], [80.0, 80.0, 8.0]])
EGO_SIZE = (1.8, 4.0, 1.5)  # (w, l, h): a nominal car footprint


@dataclass(frozen=True)
class RelationConfig:
    close_by_radius: float = 10.0
    size_ratio: float = 1.2
    height_margin: float = 0.3

    def __post_init__(self):
        if min(self.close_by_radius, self.size_ratio, self.height_margin) <= 0:
            raise ValueError("relation thresholds must be positive")


@dataclass(frozen=True)
class Node:
    id: int
    category: str
    motion_state: str
    box: Optional[Box3D] = None
    num_points: int = 0
    trajectory: Optional[Trajectory] = None


@dataclass(frozen=True)
class Edge:
    subject: int
    object: int
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple
    edges: tuple

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        if not nodes or nodes[0].id != 0 or nodes[0].category != EGO_CATEGORY:
            raise ValueError("node 0 must be the ego node")
        ids = {n.id for n in nodes}
        if len(ids) != len(nodes):
            raise ValueError("node ids must be unique")
        for e in edges:
            if e.subject == e.object:
                raise ValueError("self edges are not allowed")
            if e.subject not in ids or e.object not in ids:
                raise ValueError("edge endpoints must reference existing nodes")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    @property
    def object_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if n.id != 0)


def _require(record: dict, key: str, kind, context: str):
    if key not in record:
        raise SchemaError(f"{context}.{key}", "missing")
    value = record[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{context}.{key}", "expected a number")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{context}.{key}", f"expected {kind.__name__}")
    return value


def parse_box(record: dict, context: str) -> Box3D:
    center = _require(record, "center", list, context)
    size = _require(record, "size", list, context)
    yaw = _require(record, "yaw", float, context)
    if len(center) != 3:
        raise SchemaError(f"{context}.center", "expected 3 values")
    if len(size) != 3:
        raise SchemaError(f"{context}.size", "expected 3 values")
    try:
        return Box3D(np.asarray(center, dtype=float), np.asarray(size, dtype=float), yaw)
    except (ValueError, TypeError) as exc:
        raise SchemaError(context, str(exc)) from exc


def _parse_object(record: dict, index: int) -> dict:
    context = f"objects[{index}]"
    if not isinstance(record, dict):
        raise SchemaError(context, "expected an object record")
    category = _require(record, "category", str, context)
    num_points = _require(record, "num_points", int, context)
    if num_points < 0:
        raise SchemaError(f"{context}.num_points", "must be non-negative")
    box = parse_box(_require(record, "box", dict, context), f"{context}.box")
    motion_state = record.get("motion_state", "stationary")
    if motion_state not in MOTION_STATES:
        raise SchemaError(f"{context}.motion_state", f"unknown state '{motion_state}'")
    trajectory = None
    if record.get("trajectory") is not None:
        raw = record["trajectory"]
        if not isinstance(raw, list) or not raw:
            raise SchemaError(f"{context}.trajectory", "expected a non-empty list")
        try:
            trajectory = Trajectory(np.asarray(raw, dtype=float))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{context}.trajectory", str(exc)) from exc
    return {
        "category": category,
        "num_points": num_points,
        "box": box,
        "motion_state": motion_state,
        "trajectory": trajectory,
    }


def _filtered_records(annotation: dict, bounds: np.ndarray) -> list:
    if not isinstance(annotation, dict):
        raise SchemaError("annotation", "expected an object")
    objects = _require(annotation, "objects", list, "annotation")
    kept = []
    for i, raw in enumerate(objects):
        rec = _parse_object(raw, i)
        if rec["category"] not in CATEGORIES:
            continue
        if rec["num_points"] < MIN_OBJECT_POINTS:
            continue
        center = rec["box"].center
        if np.any(center < bounds[0]) or np.any(center > bounds[1]):
            continue
        kept.append(rec)
    return kept


def filter_objects(annotation: dict, bounds=None) -> list:
    """Objects passing the category, point-count, and volume filters.

    Returns ``(Box3D, category, num_points)`` triples in annotation order.
    """
    bounds = FILTER_BOUNDS if bounds is None else np.asarray(bounds, dtype=float)
    return [
        (rec["box"], rec["category"], rec["num_points"])
        for rec in _filtered_records(annotation, bounds)
    ]


def relate(subject: Box3D, obj: Box3D, cfg: RelationConfig) -> tuple:
    """Relation labels for the directed pair subject -> object."""
    delta = obj.center - subject.center
    dx, dy = float(delta[0]), float(delta[1])
    if dx >= abs(dy):
        labels = ["front"]
    elif -dx >= abs(dy):
        labels = ["behind"]
    elif dy > 0:
        labels = ["left"]
    else:
        labels = ["right"]
    if float(np.linalg.norm(delta)) < cfg.close_by_radius:
        labels.append("close by")
    if subject.volume > cfg.size_ratio * obj.volume:
        labels.append("bigger than")
    elif obj.volume > cfg.size_ratio * subject.volume:
        labels.append("smaller than")
    dh = subject.height - obj.height
    if dh > cfg.height_margin:
        labels.append("taller than")
    elif -dh > cfg.height_margin:
        labels.append("shorter than")
    return tuple(labels)


def ego_box(size=EGO_SIZE) -> Box3D:
    """Unit-heading box for the ego node at the sensor origin."""
    return Box3D(np.zeros(3), np.asarray(size, dtype=float), 0.0)


def build_graph(
    annotation: dict,
    relation_cfg: Optional[RelationConfig] = None,
    bounds=None,
    ego_size=EGO_SIZE,
) -> SceneGraph:
    """Assemble the ego node, filtered objects, and all relation edges."""
    cfg = relation_cfg or RelationConfig()
    bounds = FILTER_BOUNDS if bounds is None else np.asarray(bounds, dtype=float)
    records = _filtered_records(annotation, bounds)

    ego_info = annotation.get("ego", {})
    if not isinstance(ego_info, dict):
        raise SchemaError("annotation.ego", "expected an object")
    ego_state = ego_info.get("motion_state", "stationary")
    if ego_state not in MOTION_STATES:
        raise SchemaError("annotation.ego.motion_state", f"unknown state '{ego_state}'")
    ego_traj = None
    if ego_info.get("trajectory") is not None:
        try:
            ego_traj = Trajectory(np.asarray(ego_info["trajectory"], dtype=float))
        except (ValueError, TypeError) as exc:
            raise SchemaError("annotation.ego.trajectory", str(exc)) from exc

    nodes = [
        Node(0, EGO_CATEGORY, ego_state, box=ego_box(ego_size), trajectory=ego_traj)
    ]
    for i, rec in enumerate(records):
        nodes.append(
            Node(
                i + 1,
                rec["category"],
                rec["motion_state"],
                box=rec["box"],
                num_points=rec["num_points"],
                trajectory=rec["trajectory"],
            )
        )

    edges = []
    object_nodes = nodes[1:]
    for s in object_nodes:
        for o in object_nodes:
            if s.id == o.id:
                continue
            edges.append(Edge(s.id, o.id, relate(s.box, o.box, cfg)))
    for s in object_nodes:
        edges.append(Edge(s.id, 0, relate(s.box, nodes[0].box, cfg)))
    return SceneGraph(tuple(nodes), tuple(edges))
