"""Hot-kernel dispatch: compiled extension when available, NumPy otherwise.

Set ``LIDAR4D_KERNELS=pure`` or ``LIDAR4D_KERNELS=native`` to force a backend;
forcing ``native`` raises if the extension was not built.
"""
from __future__ import annotations

import os

from . import pure

try:
    from . import _native
except ImportError:
    _native = None

_choice = os.environ.get("LIDAR4D_KERNELS", "").strip().lower()
if _choice == "pure":
    _backend = pure
elif _choice == "native":
    if _native is None:
        raise ImportError(
            "LIDAR4D_KERNELS=native but the compiled extension is unavailable"
        )
    _backend = _native
else:
    _backend = _native if _native is not None else pure

zbuffer_project = _backend.zbuffer_project
assign_points_to_boxes = _backend.assign_points_to_boxes
ray_box_hits = _backend.ray_box_hits


def active_backend() -> str:
    """Name of the backend in use: 'native' or 'pure'."""
    return "native" if _backend is _native else "pure"


def available_backends() -> tuple[str, ...]:
    return ("native", "pure") if _native is not None else ("pure",)
