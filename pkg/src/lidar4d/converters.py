"""Annotation converter stub for external driving datasets.

This module documents the mapping from typical devkit-style per-frame records
onto the annotation JSON consumed by ``build-graph``; downloading or parsing
any particular dataset is out of scope. The expected source fields per object
are:

==================  ==========================================================
annotation field    devkit equivalent
==================  ==========================================================
category            detection class name, lower case (for example ``car``,
                    ``truck``, ``bus``, ``pedestrian``)
num_points          LiDAR point count inside the box for the sample
box.center          box center in the LiDAR/ego frame, meters
box.size            (width, length, height) meters, length along the heading
box.yaw             heading about +z, radians
motion_state        optional; one of stationary/straight/left-turn/right-turn
                    (classify from the instance track if unavailable)
trajectory          optional; future planar displacements relative to the
                    sample, one (dx, dy) per future frame
==================  ==========================================================

Ego motion goes into the optional ``ego`` block in the same trajectory
encoding.
"""
from __future__ import annotations

from typing import Optional, Sequence

from .core import Box3D, Trajectory


def annotation_from_records(
    frame_id: str,
    objects: Sequence[dict],
    ego_trajectory: Optional[Trajectory] = None,
    ego_motion_state: str = "stationary",
) -> dict:
    """Assemble an annotation document from already-extracted object records.

    Each object record needs ``category``, ``num_points``, and ``box``
    (a :class:`Box3D`), plus optional ``motion_state`` and ``trajectory``
    (a :class:`Trajectory`). Field extraction from a specific devkit is the
    caller's job; see the module docstring for the mapping.
    """
    converted = []
    for record in objects:
        box: Box3D = record["box"]
        entry = {
            "category": record["category"],
            "num_points": int(record["num_points"]),
            "box": {
                "center": [float(v) for v in box.center],
                "size": [float(v) for v in box.size],
                "yaw": float(box.yaw),
            },
        }
        if record.get("motion_state") is not None:
            entry["motion_state"] = record["motion_state"]
        if record.get("trajectory") is not None:
            traj: Trajectory = record["trajectory"]
            entry["trajectory"] = [[float(a), float(b)] for a, b in traj.displacements]
        converted.append(entry)
    doc = {"frame_id": frame_id, "objects": converted}
    ego: dict = {"motion_state": ego_motion_state}
    if ego_trajectory is not None:
        ego["trajectory"] = [
            [float(a), float(b)] for a, b in ego_trajectory.displacements
        ]
    doc["ego"] = ego
    return doc
