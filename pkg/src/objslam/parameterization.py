"""Object parameterization: robust centroid/extent, yaw from line alignment, local refinement.

A cube is ``t, yaw, s``; a quadric is ``t, s``. The pipeline is

    build_forest -> filter_outliers -> estimate_centroid_scale
    (cubes)      -> init_orientation -> refine_pose

Views carry the segments that fall inside the object's detection box in one
frame together with that frame's camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewPoints
from .geometry import (
    CUBE_EDGES,
    UNIT_VERTICES,
    BBox2D,
    CameraIntrinsics,
    CubeModel,
    Pose,
    QuadricModel,
    angle_diff,
    segment_angles,
    wrap_half_pi,
    yaw_matrix,
)
from .iforest import (
    MIN_INLIERS,
    SCORE_THRESHOLD,
    build_forest,
    estimate_centroid_scale,
    filter_outliers,
)

CUBE_LABELS = frozenset(
    ["book", "keyboard", "chair", "laptop", "monitor", "tv", "box", "table", "desk",
     "mouse", "cabinet", "drawer", "bed", "couch", "sofa", "remote", "cell phone",
     "microwave", "oven", "refrigerator", "suitcase"]
)
QUADRIC_LABELS = frozenset(
    ["ball", "sports ball", "bottle", "cup", "can", "vase", "bowl", "apple",
     "orange", "teddy bear", "potted plant", "plant", "mug"]
)

N_SAMPLES = 30
XI_DEG = 5.0
BOX_MARGIN_PX = 5.0


def model_kind(label: str) -> str:
    """``"quadric"`` for round or irregular classes, ``"cube"`` otherwise."""
    return "quadric" if label in QUADRIC_LABELS else "cube"


@dataclass
class ParamConfig:
    n_trees: int = 100
    psi: int = 256
    score_threshold: float = SCORE_THRESHOLD
    s_min: float = 0.01
    min_points: int = 10
    # refinement
    near_parallel_deg: float = 10.0
    angle_trunc_deg: float = 10.0
    dist_trunc_px: float = 30.0
    theta_step: float = math.pi / 180
    scale_step: float = 0.02
    max_iters: int = 50
    rel_tol: float = 1e-4
    max_views: int = 12  # views with segments used per estimate, evenly spread over the history
    seed: int = 0


@dataclass
class View:
    """One frame's camera and the segments assigned to an object."""

    K: CameraIntrinsics
    T_c: Pose
    segments: np.ndarray  # (n, 4) x0, y0, x1, y1
    bbox: BBox2D | None = None

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)


@dataclass
class ObjectEstimate:
    model: CubeModel | QuadricModel
    inlier_count: int
    score_history: list = field(default_factory=list)
    flags: tuple = ()
    inlier_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return self.model.kind


def segments_in_box(segments, box: BBox2D, margin: float = BOX_MARGIN_PX) -> np.ndarray:
    """Segments with both endpoints inside ``box`` grown by ``margin`` pixels."""
    S = np.asarray(segments, dtype=float).reshape(-1, 4)
    if box is None or len(S) == 0:
        return S
    ok = box.contains(S[:, :2], margin) & box.contains(S[:, 2:], margin)
    return S[ok]


def _project_edges(t, yaw, s, view: View):
    """Projected cube edges as (12, 4) pixel endpoints plus a validity mask."""
    V = (UNIT_VERTICES * s) @ yaw_matrix(yaw).T + t
    R, tc = view.T_c.rotation, view.T_c.translation
    Pc = V @ R.T + tc
    z = Pc[:, 2]
    ok_v = z > 1e-6
    zs = np.where(ok_v, z, 1.0)
    uv = np.stack([view.K.fx * Pc[:, 0] / zs + view.K.cx, view.K.fy * Pc[:, 1] / zs + view.K.cy], axis=1)
    a, b = CUBE_EDGES[:, 0], CUBE_EDGES[:, 1]
    E = np.hstack([uv[a], uv[b]])
    ok = ok_v[a] & ok_v[b] & (np.hypot(E[:, 2] - E[:, 0], E[:, 3] - E[:, 1]) > 1e-9)
    return E, ok


def frame_score(seg_angles: np.ndarray, edge_angles: np.ndarray, xi_deg: float = XI_DEG):
    """Alignment score and mean passing error of one frame.

    ``e`` is the squared angle difference (degrees^2) of each segment to the
    nearest projected edge; segments with ``e < xi^2`` pass.
    """
    n_a = len(seg_angles)
    if n_a == 0 or len(edge_angles) == 0:
        return 0.0, 0.0
    d = np.degrees(angle_diff(seg_angles[:, None], edge_angles[None, :])).min(axis=1)
    e = d**2
    passing = e < xi_deg**2
    n_p = int(passing.sum())
    if n_p == 0:
        return 0.0, 0.0
    mean_e = float(e[passing].mean())
    score = n_p / n_a * (1.0 + 0.1 * (xi_deg - mean_e))
    return max(score, 0.0), mean_e


def yaw_samples(theta0: float = 0.0, n: int = N_SAMPLES) -> np.ndarray:
    return np.array([wrap_half_pi(theta0 - math.pi / 2 + k * math.pi / n) for k in range(n)])


def init_orientation(t, s, views: list[View], theta0: float = 0.0):
    """Best yaw among 30 uniform samples by summed per-frame alignment score.

    Returns ``(theta, error, history)`` where ``error`` is the summed mean
    passing error at the chosen sample and ``history`` lists ``(theta, score)``.
    With no segments at all the result is ``(theta0, inf, [])``.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    views = [v for v in views if len(v.segments)]
    if not views:
        return theta0, math.inf, []
    f = _Objective(t, views, ParamConfig())
    history = []
    best = (-1.0, math.inf, theta0)
    for theta in yaw_samples(theta0):
        # frame_score for every view at once
        E, ok = f.edges(theta, s)
        ea = segment_angles(E.reshape(-1, 4)).reshape(ok.shape)
        d = np.where(ok[f.vi], np.degrees(angle_diff(f.ang[:, None], ea[f.vi])), np.inf)
        e = d.min(axis=1) ** 2
        passing = e < XI_DEG**2
        n_p = np.bincount(f.vi, passing, len(f.views))
        mean_e = np.bincount(f.vi, np.where(passing, e, 0.0), len(f.views)) / np.maximum(n_p, 1)
        score = np.where(n_p > 0, np.maximum(n_p / f.counts * (1.0 + 0.1 * (XI_DEG - mean_e)), 0.0), 0.0)
        total, err = float(score.sum()), float(mean_e.sum())
        history.append((float(theta), total))
        if total > best[0]:
            best = (total, err, float(theta))
    return best[2], best[1], history


def _point_segment_dist(P, A, B):
    """Distances from points ``P`` (..., 2) to segments ``A``-``B`` (..., 2), broadcast."""
    AB = B - A
    L2 = np.maximum((AB**2).sum(-1), 1e-12)
    u = np.clip(((P - A) * AB).sum(-1) / L2, 0.0, 1.0)
    D = A + u[..., None] * AB - P
    return np.hypot(D[..., 0], D[..., 1])


class _Objective:
    """Object term: truncated angle error of segments plus edge-to-segment distance.

    All views are evaluated in one batch: segments of every view are stacked
    with a view index and compared against that view's 12 projected edges.
    """

    def __init__(self, t, views: list[View], cfg: ParamConfig):
        self.t = np.asarray(t, dtype=float)
        self.views = [v for v in views if len(v.segments)]
        self.cfg = cfg
        if not self.views:
            return
        self.R = np.stack([v.T_c.rotation for v in self.views])
        self.tc = np.stack([v.T_c.translation for v in self.views])
        self.f = np.array([[v.K.fx, v.K.fy] for v in self.views])
        self.c = np.array([[v.K.cx, v.K.cy] for v in self.views])
        counts = np.array([len(v.segments) for v in self.views])
        self.vi = np.repeat(np.arange(len(self.views)), counts)
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.counts = counts
        self.S = np.vstack([v.segments for v in self.views])
        self.ang = segment_angles(self.S)

    def __bool__(self):
        return bool(self.views)

    def edges(self, theta, s):
        """Projected edges (views, 12, 4) and validity (views, 12)."""
        V = (UNIT_VERTICES * np.asarray(s)) @ yaw_matrix(theta).T + self.t
        Pc = np.einsum("vij,kj->vki", self.R, V) + self.tc[:, None, :]
        z = Pc[..., 2]
        ok_v = z > 1e-6
        zs = np.where(ok_v, z, 1.0)
        uv = Pc[..., :2] / zs[..., None] * self.f[:, None, :] + self.c[:, None, :]
        a, b = CUBE_EDGES[:, 0], CUBE_EDGES[:, 1]
        E = np.concatenate([uv[:, a], uv[:, b]], axis=2)
        length = np.hypot(E[..., 2] - E[..., 0], E[..., 3] - E[..., 1])
        return E, ok_v[:, a] & ok_v[:, b] & (length > 1e-9)

    def terms(self, theta, s):
        cfg = self.cfg
        E, ok = self.edges(theta, s)
        ea = np.arctan2(E[..., 3] - E[..., 1], E[..., 2] - E[..., 0]) % math.pi
        d = np.degrees(angle_diff(self.ang[:, None], ea[self.vi]))  # (segs, 12)
        d = np.where(ok[self.vi], d, np.inf)
        per_seg = np.minimum(d.min(axis=1) ** 2, cfg.angle_trunc_deg**2)
        e_theta = np.bincount(self.vi, per_seg, len(self.views)) / self.counts
        # distances only for near-parallel (segment, edge) pairs
        si, ei = np.nonzero(d < cfg.near_parallel_deg)
        Ep = E[self.vi[si], ei]
        S, A, B = self.S[si], Ep[:, :2], Ep[:, 2:]
        dist = np.full(d.shape, np.inf)
        dist[si, ei] = 0.5 * (_point_segment_dist(S[:, :2], A, B) + _point_segment_dist(S[:, 2:], A, B))
        per_edge = np.minimum(np.minimum.reduceat(dist, self.starts, axis=0), cfg.dist_trunc_px)
        n_ok = ok.sum(axis=1)
        e_s = np.where(ok, per_edge, 0.0).sum(axis=1) / np.maximum(n_ok, 1)
        none = n_ok == 0
        e_theta = np.where(none, cfg.angle_trunc_deg**2, e_theta)
        e_s = np.where(none, cfg.dist_trunc_px, e_s)
        return float(e_theta.sum()), float(e_s.sum())

    def __call__(self, theta, s) -> float:
        a, b = self.terms(theta, s)
        return a + b


def has_near_parallel(t, theta, s, views: list[View], tol_deg: float = 10.0) -> bool:
    for v in views:
        if not len(v.segments):
            continue
        E, ok = _project_edges(np.asarray(t), theta, np.asarray(s), v)
        if not ok.any():
            continue
        d = np.degrees(angle_diff(segment_angles(v.segments)[:, None], segment_angles(E[ok])[None, :]))
        if (d < tol_deg).any():
            return True
    return False


def refine_pose(t, theta, s, views: list[View], cfg: ParamConfig | None = None, trace: list | None = None):
    """Coordinate descent over (yaw, s_l, s_w, s_h) with t fixed.

    Each sweep tries +/- one step on every coordinate in turn and keeps any
    improvement; a sweep without improvement halves both step sizes. Stops
    after ``max_iters`` sweeps, when an improving sweep gains less than
    ``rel_tol`` relative, or when both steps are negligible. ``trace`` (if
    given) receives the objective after every sweep.
    """
    cfg = cfg or ParamConfig()
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float).copy()
    theta = float(theta)
    f = _Objective(t, views, cfg)
    if not f or not has_near_parallel(t, theta, s, views, cfg.near_parallel_deg):
        return theta, s
    cur = f(theta, s)
    if trace is not None:
        trace.append(cur)
    dth, ds = cfg.theta_step, cfg.scale_step
    for _ in range(cfg.max_iters):
        start = cur
        for k in range(4):
            for sign in (1.0, -1.0):
                if k == 0:
                    th2, s2 = theta + sign * dth, s
                else:
                    s2 = s.copy()
                    s2[k - 1] = max(s2[k - 1] * (1.0 + sign * ds), cfg.s_min)
                    th2 = theta
                val = f(th2, s2)
                if val < cur:
                    cur, theta, s = val, th2, s2
                    break
        if trace is not None:
            trace.append(cur)
        if cur < start:
            if (start - cur) / max(abs(start), 1e-12) < cfg.rel_tol:
                break
        else:
            dth *= 0.5
            ds *= 0.5
            if dth < 1e-6 and ds < 1e-6:
                break
    return theta, s


def yaw_frame_extent(points, t, theta, s_min: float = 0.01) -> np.ndarray:
    """Half-range of ``points`` measured along the axes of a box with yaw ``theta``."""
    P = (np.asarray(points, dtype=float) - np.asarray(t)) @ yaw_matrix(theta)
    return np.maximum((P.max(axis=0) - P.min(axis=0)) / 2, s_min)


def parameterize(points, label: str, views: list[View] | None = None, cfg: ParamConfig | None = None,
                 kind: str | None = None) -> ObjectEstimate:
    """Estimate a cube or quadric from an object's world points and its views."""
    cfg = cfg or ParamConfig()
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) < cfg.min_points:
        raise TooFewPoints(f"need at least {cfg.min_points} points, got {len(X)}")
    kind = kind or model_kind(label)
    forest = build_forest(X, cfg.n_trees, min(cfg.psi, len(X)), seed=cfg.seed)
    inliers, mask = filter_outliers(X, forest, cfg.score_threshold, MIN_INLIERS)
    t, s = estimate_centroid_scale(inliers, cfg.s_min)
    if kind == "quadric":
        return ObjectEstimate(QuadricModel(t, s), len(inliers), inlier_mask=mask)
    views = views or []
    theta, _, history = init_orientation(t, s, views)
    flags = ()
    if not history:
        flags = ("no_segments",)
        return ObjectEstimate(CubeModel(t, 0.0, s), len(inliers), history, flags, mask)
    s = yaw_frame_extent(inliers, t, theta, cfg.s_min)
    theta, s = refine_pose(t, theta, s, views, cfg)
    return ObjectEstimate(CubeModel(t, theta, s), len(inliers), history, flags, mask)
