"""Scene, object, layout, and temporal metrics for generated LiDAR data.

Distributional metrics (JSD, MMD, Frechet) operate on histograms, sample
sets, or feature moments; geometric metrics (Chamfer, ICP, TTCE, CTC) operate
on point clouds; layout metrics (SCR, MSCR, BCR, TCR) check generated boxes
and trajectories against a scene graph; detection-style metrics (FDC, AP,
CFCA, CFSC) consume prediction records produced by external models.

Every metric is pure and permutation invariant over its input collections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import warp
from .core import (
    Box3D,
    PointCloud,
    Pose,
    SceneSequence,
    Trajectory,
    iou_3d,
    normalize_angle,
)
from .layout import Layout4D
from .rangecodec import RangeImage, normalize_depth, SensorConfig
from .scenegraph import RelationConfig, SceneGraph, relate


# ---------------------------------------------------------------------------
# Distribution metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BEVHistogram:
    """Normalized bird's-eye-view occupancy grid."""

    mass: np.ndarray
    bin_size: float
    empty: bool

    @property
    def shape(self):
        return self.mass.shape


def bev_histogram(
    cloud: PointCloud, bound: float = 80.0, bins: int = 100
) -> BEVHistogram:
    """2-D histogram of (x, y) over [-bound, bound]^2, normalized to sum 1.

    Out-of-bounds points are dropped; an all-out or empty cloud yields a zero
    grid flagged empty.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    xyz = cloud.xyz
    hist, _, _ = np.histogram2d(
        xyz[:, 0],
        xyz[:, 1],
        bins=bins,
        range=[[-bound, bound], [-bound, bound]],
    )
    total = hist.sum()
    if total == 0.0:
        return BEVHistogram(hist, 2.0 * bound / bins, True)
    return BEVHistogram(hist / total, 2.0 * bound / bins, False)


def _as_mass(h) -> np.ndarray:
    return h.mass if isinstance(h, BEVHistogram) else np.asarray(h, dtype=np.float64)


def jsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence between two mass distributions."""
    p = _as_mass(p).ravel()
    q = _as_mass(q).ravel()
    if p.shape != q.shape:
        raise ValueError("distributions must share a shape")

    def kl(a, b):
        mask = a > 0.0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    m = 0.5 * (p + q)
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def _gaussian_gram(x: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    sq = (
        np.sum(x**2, axis=1)[:, None]
        + np.sum(y**2, axis=1)[None, :]
        - 2.0 * x @ y.T
    )
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma**2))


def median_heuristic_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples (1.0 if degenerate)."""
    z = np.vstack([x, y])
    sq = (
        np.sum(z**2, axis=1)[:, None]
        + np.sum(z**2, axis=1)[None, :]
        - 2.0 * z @ z.T
    )
    dists = np.sqrt(np.maximum(sq[np.triu_indices(len(z), k=1)], 0.0))
    med = float(np.median(dists)) if dists.size else 0.0
    return med if med > 0.0 else 1.0


def mmd(
    x,
    y,
    kernel: str = "gaussian",
    bandwidth: Optional[float] = None,
) -> float:
    """Biased V-statistic estimate of the squared maximum mean discrepancy.

    ``kernel`` is 'gaussian' (bandwidth from the median heuristic when not
    given) or 'linear'.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("sample sets must be non-empty")
    if x.shape[1] != y.shape[1]:
        raise ValueError("sample dimensions must match")
    if kernel == "linear":
        diff = x.mean(axis=0) - y.mean(axis=0)
        return float(diff @ diff)
    if kernel != "gaussian":
        raise ValueError(f"unknown kernel '{kernel}'")
    sigma = bandwidth if bandwidth is not None else median_heuristic_bandwidth(x, y)
    kxx = _gaussian_gram(x, x, sigma).mean()
    kyy = _gaussian_gram(y, y, sigma).mean()
    kxy = _gaussian_gram(x, y, sigma).mean()
    return float(max(kxx + kyy - 2.0 * kxy, 0.0))


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """First and second moments of a feature sample."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be square and match the mean")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureSet":
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if feats.shape[0] < 2:
            raise ValueError("need at least two feature rows")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False))


def frechet(a: FeatureSet, b: FeatureSet, psd_tol: float = 1e-8) -> float:
    """Frechet distance between two Gaussians fitted to feature sets.

    The cross term uses the symmetric square root, so the matrix whose
    eigenvalues are summed is positive semidefinite up to round-off; negative
    eigenvalues beyond ``psd_tol`` raise, small ones clip to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("feature dimensions must match")
    diff = a.mean - b.mean
    vals_a, vecs_a = np.linalg.eigh(a.cov)
    if vals_a.min() < -psd_tol:
        raise ValueError("covariance is not positive semidefinite")
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if vals.min() < -psd_tol:
        raise ValueError("cross covariance is not positive semidefinite")
    trace_cross = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_cross)


# ---------------------------------------------------------------------------
# Geometry metrics
# ---------------------------------------------------------------------------


def _xyz(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.xyz
    return np.atleast_2d(np.asarray(points, dtype=np.float64))


def chamfer(x, y) -> float:
    """Symmetric mean squared nearest-neighbor distance."""
    xa, ya = _xyz(x), _xyz(y)
    if len(xa) == 0 or len(ya) == 0:
        raise ValueError("point sets must be non-empty")
    d_xy, _ = cKDTree(ya).query(xa)
    d_yx, _ = cKDTree(xa).query(ya)
    return float(np.mean(d_xy**2) + np.mean(d_yx**2))


def _kabsch(source: np.ndarray, target: np.ndarray):
    """Closed-form rigid fit mapping source points onto target points."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    h = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    correction = np.diag([1.0, 1.0, d])
    rot = vt.T @ correction @ u.T
    return rot, mu_t - rot @ mu_s


@dataclass
class IcpStats:
    iterations: int
    mse_history: list


def icp(
    x,
    y,
    max_iters: int = 50,
    tol: float = 1e-10,
    return_stats: bool = False,
):
    """Point-to-point ICP estimating the pose mapping x onto y.

    Nearest neighbors come from a spatial index over y; each iteration fits
    the rigid transform in closed form and stops once the mean squared error
    improves by less than ``tol``.
    """
    xa, ya = _xyz(x), _xyz(y)
    if len(xa) < 3 or len(ya) < 3:
        raise ValueError("ICP needs at least 3 points per cloud")
    for pts in (xa, ya):
        if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) < 2:
            raise ValueError("degenerate (collinear) geometry")

    tree = cKDTree(ya)
    rot = np.eye(3)
    trans = np.zeros(3)
    prev_mse = math.inf
    history = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        moved = xa @ rot.T + trans
        dists, idx = tree.query(moved)
        mse = float(np.mean(dists**2))
        history.append(mse)
        if prev_mse - mse < tol:
            break
        prev_mse = mse
        rot, trans = _kabsch(xa, ya[idx])
    pose = Pose(rot, trans)
    if return_stats:
        return pose, IcpStats(iterations, history)
    return pose


def _sequence_parts(sequence, gt_poses):
    if isinstance(sequence, SceneSequence):
        clouds = sequence.clouds
        poses = sequence.poses if gt_poses is None else tuple(gt_poses)
    else:
        clouds = tuple(sequence)
        if gt_poses is None:
            raise ValueError("ground-truth poses are required for raw clouds")
        poses = tuple(gt_poses)
    if len(poses) != len(clouds):
        raise ValueError("poses must match frames")
    return clouds, poses


def ttce(
    sequence,
    gt_poses: Optional[Sequence[Pose]] = None,
    max_iters: int = 50,
    tol: float = 1e-10,
):
    """Mean registration error against ground-truth frame-to-frame motion.

    For each consecutive pair, ICP estimates the transform taking frame t
    points into frame t+1; errors are the Frobenius distance of the rotation
    from identity (after removing the true rotation) and the Euclidean
    translation gap. Returns (rotation error, translation error).
    """
    clouds, poses = _sequence_parts(sequence, gt_poses)
    if len(clouds) < 2:
        raise ValueError("need at least two frames")
    rot_err = 0.0
    trans_err = 0.0
    pairs = 0
    for t in range(len(clouds) - 1):
        true_rel = poses[t + 1].inverse().compose(poses[t])
        est = icp(clouds[t], clouds[t + 1], max_iters=max_iters, tol=tol)
        rot_err += float(
            np.linalg.norm(est.rotation @ true_rel.rotation.T - np.eye(3))
        )
        trans_err += float(np.linalg.norm(est.translation - true_rel.translation))
        pairs += 1
    return rot_err / pairs, trans_err / pairs


def ctc(
    sequence,
    gt_poses: Optional[Sequence[Pose]] = None,
    interval: int = 1,
) -> float:
    """Mean Chamfer distance between frames k apart after exact alignment."""
    clouds, poses = _sequence_parts(sequence, gt_poses)
    if interval < 1 or interval >= len(clouds):
        raise ValueError("interval must lie in [1, frames - 1]")
    total = 0.0
    pairs = 0
    for t in range(len(clouds) - interval):
        align = poses[t].inverse().compose(poses[t + interval])
        moved = align.apply(clouds[t + interval].xyz)
        total += chamfer(clouds[t].xyz, moved)
        pairs += 1
    return total / pairs


# ---------------------------------------------------------------------------
# Layout metrics
# ---------------------------------------------------------------------------


def _resolve_box(layout: Layout4D, graph: SceneGraph, node_id: int) -> Box3D:
    if node_id == 0:
        box = graph.node(0).box
        if box is None:
            raise KeyError("graph ego node carries no box")
        return box
    return layout.get(node_id).box


def scr(layout: Layout4D, graph: SceneGraph, cfg: RelationConfig) -> float:
    """Fraction of graph edges whose labels hold for the generated boxes.

    An edge counts as consistent when every stored label is reproduced by
    re-evaluating the relation predicates on the layout geometry.
    """
    if not graph.edges:
        raise ValueError("graph has no edges to check")
    consistent = 0
    for edge in graph.edges:
        subject = _resolve_box(layout, graph, edge.subject)
        obj = _resolve_box(layout, graph, edge.object)
        recomputed = set(relate(subject, obj, cfg))
        if set(edge.labels) <= recomputed:
            consistent += 1
    return consistent / len(graph.edges)


@dataclass(frozen=True)
class MotionClassifierConfig:
    stationary_threshold: float = 0.5  # meters of net displacement
    turn_threshold: float = math.radians(15.0)


def classify_motion_state(
    trajectory, cfg: MotionClassifierConfig = MotionClassifierConfig()
) -> str:
    """stationary / straight / left-turn / right-turn from displacements."""
    disp = trajectory.displacements
    if float(np.linalg.norm(disp[-1])) < cfg.stationary_threshold:
        return "stationary"
    steps = np.diff(np.vstack([[0.0, 0.0], disp]), axis=0)
    headings = [
        math.atan2(dy, dx) for dx, dy in steps if not (dx == 0.0 and dy == 0.0)
    ]
    if len(headings) < 2:
        return "straight"
    change = normalize_angle(headings[-1] - headings[0])
    if abs(change) > cfg.turn_threshold:
        return "left-turn" if change > 0.0 else "right-turn"
    return "straight"


def mscr(
    layout: Layout4D,
    graph: SceneGraph,
    cfg: MotionClassifierConfig = MotionClassifierConfig(),
) -> float:
    """Fraction of trajectories whose classified state matches the graph."""
    if not layout.objects:
        raise ValueError("layout has no trajectories to check")
    matches = 0
    for obj in layout.objects:
        node = graph.node(obj.node_id)
        if classify_motion_state(obj.trajectory, cfg) == node.motion_state:
            matches += 1
    return matches / len(layout.objects)


def bcr(frames: Sequence[Sequence[Box3D]]) -> float:
    """Colliding unordered box pairs over all pairs, summed across frames."""
    colliding = 0
    total = 0
    for boxes in frames:
        n = len(boxes)
        for i in range(n):
            for j in range(i + 1, n):
                total += 1
                if iou_3d(boxes[i], boxes[j]) > 0.0:
                    colliding += 1
    if total == 0:
        raise ValueError("need at least one frame with two boxes")
    return colliding / total


def propagate_boxes(
    boxes: Sequence[Box3D], trajectories: Sequence[Trajectory]
) -> list:
    """Per-step box lists at steps 1..T under the travel-heading motion."""
    if len(boxes) != len(trajectories):
        raise ValueError("boxes and trajectories must align")
    steps = {len(t) for t in trajectories}
    if len(steps) != 1:
        raise ValueError("trajectory lengths must be uniform")
    horizon = steps.pop()
    return [
        [warp.object_box_at(b, t, step) for b, t in zip(boxes, trajectories)]
        for step in range(1, horizon + 1)
    ]


def tcr(boxes: Sequence[Box3D], trajectories: Sequence[Trajectory]) -> float:
    """Fraction of pairs whose propagated boxes collide at any step."""
    n = len(boxes)
    if n < 2:
        raise ValueError("need at least two objects")
    frames = propagate_boxes(boxes, trajectories)
    colliding = 0
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            if any(iou_3d(frame[i], frame[j]) > 0.0 for frame in frames):
                colliding += 1
    return colliding / total


# ---------------------------------------------------------------------------
# Detection-style metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionRecord:
    frame_id: str
    box: Box3D
    category: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruthRecord:
    frame_id: str
    box: Box3D
    category: str


def fdc(detections: Sequence[DetectionRecord], classes=None) -> dict:
    """Per-class mean confidence and count; absent classes stay absent."""
    sums: dict = {}
    counts: dict = {}
    for det in detections:
        if classes is not None and det.category not in classes:
            continue
        sums[det.category] = sums.get(det.category, 0.0) + det.confidence
        counts[det.category] = counts.get(det.category, 0) + 1
    return {
        cat: {"mean_confidence": sums[cat] / counts[cat], "count": counts[cat]}
        for cat in sorted(sums)
    }


def _match_iou(a: Box3D, b: Box3D, space: str) -> float:
    if space == "3D":
        return iou_3d(a, b)
    if space == "BEV":
        from .core import iou_bev

        return iou_bev(a, b)
    raise ValueError(f"unknown match space '{space}'")


def average_precision(
    detections: Sequence[DetectionRecord],
    ground_truths: Sequence[GroundTruthRecord],
    iou_threshold: float = 0.5,
    mode: str = "R11",
    match_space: str = "3D",
) -> float:
    """Interpolated average precision with greedy confidence-order matching.

    Matching is frame-scoped and class-agnostic (split inputs per class for
    per-class scores); each ground truth matches at most one detection.
    ``mode`` R11 averages over recalls {0, 0.1, .., 1}, R40 over
    {1/40, .., 1}.
    """
    if mode not in ("R11", "R40"):
        raise ValueError(f"unknown AP mode '{mode}'")
    if not ground_truths:
        return 0.0
    if not detections:
        return 0.0

    order = sorted(
        range(len(detections)), key=lambda i: (-detections[i].confidence, i)
    )
    gt_by_frame: dict = {}
    for j, gt in enumerate(ground_truths):
        gt_by_frame.setdefault(gt.frame_id, []).append(j)
    matched = set()
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        best_iou, best_j = 0.0, None
        for j in gt_by_frame.get(det.frame_id, ()):
            if j in matched:
                continue
            iou = _match_iou(det.box, ground_truths[j].box, match_space)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j is not None:
            matched.add(best_j)
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(order) + 1)
    recall = cum_tp / len(ground_truths)
    if mode == "R11":
        points = np.linspace(0.0, 1.0, 11)
    else:
        points = np.arange(1, 41) / 40.0
    ap = 0.0
    for r in points:
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / len(points)


def cfca(pred_labels: Sequence[str], gt_labels: Sequence[str]) -> float:
    """Classification accuracy over aligned label lists."""
    if len(pred_labels) != len(gt_labels):
        raise ValueError("label lists must align")
    if not gt_labels:
        raise ValueError("label lists are empty")
    correct = sum(1 for p, g in zip(pred_labels, gt_labels) if p == g)
    return correct / len(gt_labels)


def cfsc(samples: Sequence[Sequence[Box3D]], gt_boxes: Sequence[Box3D]) -> float:
    """Mean over objects of the mean IoU of sampled boxes vs ground truth."""
    if len(samples) != len(gt_boxes):
        raise ValueError("sample lists must align with ground truths")
    if not gt_boxes:
        raise ValueError("no objects to score")
    per_object = []
    for boxes, gt in zip(samples, gt_boxes):
        if not boxes:
            raise ValueError("every object needs at least one sampled box")
        per_object.append(
            sum(iou_3d(b, gt) for b in boxes) / len(boxes)
        )
    return float(np.mean(per_object))


# ---------------------------------------------------------------------------
# Smoke-test feature extractor
# ---------------------------------------------------------------------------


def range_patch_features(
    image: RangeImage, cfg: SensorConfig, grid=(4, 8)
) -> np.ndarray:
    """Handcrafted patch statistics of a range image, shape (gh * gw * 4,).

    Per patch: mean normalized depth, depth standard deviation, valid pixel
    fraction, and mean intensity (invalid pixels contribute zeros). Intended
    for self-contained smoke comparisons only; scores computed with these
    features are not comparable to any published numbers.
    """
    gh, gw = grid
    height, width = image.shape
    if height % gh or width % gw:
        raise ValueError("grid must divide the image shape")
    depth_norm = np.zeros(image.shape)
    mask = image.valid
    depth_norm[mask] = normalize_depth(image.depth[mask].astype(np.float64), cfg)
    feats = []
    for i in range(gh):
        for j in range(gw):
            rows = slice(i * height // gh, (i + 1) * height // gh)
            cols = slice(j * width // gw, (j + 1) * width // gw)
            d = depth_norm[rows, cols]
            m = mask[rows, cols]
            inten = image.intensity[rows, cols]
            feats.extend([d.mean(), d.std(), m.mean(), float(inten.mean())])
    return np.asarray(feats)
