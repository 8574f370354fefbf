"""Object-level data association.

A local object (one detection plus the world points inside its box) is
matched to a global map object when the projected-point box agrees with the
detection (P-IoU) and at least one of three cheaper cues agrees: the
constant-velocity box prediction (M-IoU), a per-axis Wilcoxon rank-sum test
on the point clouds, or a single-sample t-test of the new centroid against
the object's centroid history. Duplicates are folded together afterwards
with a pooled two-sample t-test on centroid histories.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import stats

from .errors import DegenerateVariance, NoVisiblePoints
from .geometry import BBox2D, CameraIntrinsics, Pose, bbox_iou, project_bbox

VARIANCE_FLOOR = 1e-9


@dataclass
class AssociationConfig:
    alpha: float = 0.05
    iou_motion_min: float = 0.3
    iou_project_min: float = 0.3
    merge_distance_max: float = 1.0
    subsample_cap: int = 5000
    min_test_points: int = 5
    degenerate_distance: float = 0.1
    project_max_points: int = 800
    # frames a track may skip and still get a motion prediction; 1 means strictly t-1 and t-2
    motion_max_gap: int = 1
    # "ensemble" is the full gate; "iou" is the frame-to-frame IoU tracker baseline
    strategy: str = "ensemble"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("iou_motion_min", "iou_project_min"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.motion_max_gap < 1:
            raise ValueError("motion_max_gap must be >= 1")
        if self.strategy not in ("ensemble", "iou"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class LocalObject:
    label: str
    bbox: BBox2D
    points: np.ndarray
    frame_id: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass
class GlobalObject:
    id: int
    votes: Counter
    points: np.ndarray
    centroid_history: list
    boxes: dict = field(default_factory=dict)  # frame_id -> BBox2D, last two observations
    observations: list = field(default_factory=list)  # (frame_id, BBox2D), full history
    n_seen: int = 0
    estimate: object = None
    flags: set = field(default_factory=set)

    @property
    def label(self) -> str:
        # ties resolved alphabetically for determinism
        best = max(self.votes.values())
        return min(k for k, v in self.votes.items() if v == best)

    @property
    def history(self) -> np.ndarray:
        return np.asarray(self.centroid_history, dtype=float).reshape(-1, 3)

    @property
    def centroid(self) -> np.ndarray:
        return self.history.mean(axis=0)


class ObjectMap:
    """Mutable set of global objects; single writer."""

    def __init__(self, seed: int = 0):
        self.objects: dict[int, GlobalObject] = {}
        self.next_id = 0
        self.rng = np.random.default_rng(seed)
        # merge tests that failed, keyed by ids and history lengths; histories only grow
        self.rejected: set = set()

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects[k] for k in sorted(self.objects))

    def spawn(self, local: LocalObject, cap: int) -> GlobalObject:
        g = GlobalObject(
            id=self.next_id,
            votes=Counter({local.label: 1}),
            points=np.empty((0, 3)),
            centroid_history=[local.centroid],
        )
        self.next_id += 1
        _absorb_points(g, local.points, cap, self.rng)
        _record_box(g, local.frame_id, local.bbox)
        self.objects[g.id] = g
        return g


def _record_box(g: GlobalObject, frame_id: int, box: BBox2D):
    g.boxes[frame_id] = box
    for k in sorted(g.boxes)[:-2]:
        del g.boxes[k]
    g.observations.append((frame_id, box))


def _absorb_points(g: GlobalObject, new: np.ndarray, cap: int, rng: np.random.Generator):
    """Union with exact-duplicate removal, then reservoir subsampling to ``cap``."""
    if len(new) == 0:
        return
    if len(g.points):
        seen = {p.tobytes() for p in g.points}
        keep = np.fromiter((p.tobytes() not in seen for p in new), bool, len(new))
        new = new[keep]
    if len(new) == 0:
        return
    room = max(cap - len(g.points), 0)
    head, tail = new[:room], new[room:]
    g.points = np.vstack([g.points, head]) if len(g.points) else head.copy()
    g.n_seen += len(head)
    if len(tail):
        counts = g.n_seen + np.arange(1, len(tail) + 1)
        slots = np.floor(rng.random(len(tail)) * counts).astype(int)
        hit = slots < cap
        g.points[slots[hit]] = tail[hit]
        g.n_seen += len(tail)


def motion_iou(g: GlobalObject, local: LocalObject, max_gap: int = 1) -> Optional[float]:
    """IoU of the constant-velocity box prediction, or None without two recent boxes.

    With ``max_gap`` 1 the boxes must be from t-1 and t-2. Larger values let
    the last two observations be up to ``max_gap`` frames apart and the newest
    up to ``max_gap`` frames old; the velocity is scaled per frame.
    """
    t = local.frame_id
    past = sorted(k for k in g.boxes if k < t)[-2:]
    if len(past) < 2:
        return None
    f2, f1 = past
    if t - f1 > max_gap or f1 - f2 > max_gap:
        return None
    a = np.array(g.boxes[f1].as_list())
    v = (a - np.array(g.boxes[f2].as_list())) / (f1 - f2)
    pred = a + v * (t - f1)
    x0, x1 = sorted((pred[0], pred[2]))
    y0, y1 = sorted((pred[1], pred[3]))
    return bbox_iou(BBox2D(x0, y0, x1, y1), local.bbox)


def _last_box_iou(g: GlobalObject, local: LocalObject) -> Optional[float]:
    pred = motion_iou(g, local)
    if pred is not None:
        return pred
    b1 = g.boxes.get(local.frame_id - 1)
    return None if b1 is None else bbox_iou(b1, local.bbox)


def rank_sum_test(P, Q, alpha: float = 0.05, min_size: int = 5) -> Optional[bool]:
    """Wilcoxon rank-sum (Mann-Whitney) acceptance of a common distribution.

    Mid-ranks for ties; the tie term of the variance is dropped. Returns
    None when either sample is smaller than ``min_size``.
    """
    P = np.asarray(P, dtype=float).ravel()
    Q = np.asarray(Q, dtype=float).ravel()
    n1, n2 = len(P), len(Q)
    if n1 < min_size or n2 < min_size:
        return None
    w = mann_whitney_w(P, Q)
    lo, hi = rank_sum_region(n1, n2, alpha)
    return bool(lo <= w <= hi)


def mann_whitney_w(P, Q) -> float:
    """W = min(W_P, W_Q) where W_P is the rank sum of P minus |P|(|P|+1)/2."""
    n1, n2 = len(P), len(Q)
    ranks = stats.rankdata(np.concatenate([P, Q]))
    wp = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    wq = ranks[n1:].sum() - n2 * (n2 + 1) / 2
    return float(min(wp, wq))


def rank_sum_region(n1: int, n2: int, alpha: float) -> tuple[float, float]:
    m = n1 * n2 / 2
    var = n1 * n2 * (n1 + n2 + 1) / 12
    s = _z_crit(alpha)
    half = s * math.sqrt(var)
    return m - half, m + half


@lru_cache(maxsize=None)
def _z_crit(alpha: float) -> float:
    return float(stats.norm.ppf(1 - alpha / 2))


@lru_cache(maxsize=None)
def _t_crit(alpha: float, df: int) -> float:
    return float(stats.t.ppf(1 - alpha / 2, df))


def _stride(X: np.ndarray, cap: int) -> np.ndarray:
    if len(X) <= cap:
        return X
    idx = np.linspace(0, len(X) - 1, cap).round().astype(int)
    return X[idx]


def np_test_3d(P, Q, alpha: float = 0.05, min_size: int = 5, cap: int = 5000) -> Optional[bool]:
    """Rank-sum test in each coordinate; accepted only if all three accept."""
    P = _stride(np.asarray(P, dtype=float).reshape(-1, 3), cap)
    Q = _stride(np.asarray(Q, dtype=float).reshape(-1, 3), cap)
    verdicts = [rank_sum_test(P[:, d], Q[:, d], alpha, min_size) for d in range(3)]
    if any(v is None for v in verdicts):
        return None
    return all(verdicts)


def single_t_test(C, c, alpha: float = 0.05, min_size: int = 3) -> Optional[bool]:
    """Single-sample t-test of ``c`` against the history ``C``, per dimension.

    ``C`` is (n,) or (n, d). Raises DegenerateVariance when any dimension of
    ``C`` has (near) zero spread.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    n = len(C)
    if n < min_size:
        return None
    c = np.broadcast_to(np.asarray(c, dtype=float), C.shape[1:])
    sd = C.std(axis=0, ddof=1)
    if np.any(sd <= VARIANCE_FLOOR):
        raise DegenerateVariance("centroid history has zero spread")
    t = (C.mean(axis=0) - c) / (sd / math.sqrt(n))
    crit = _t_crit(alpha, n - 1)
    return bool(np.all(np.abs(t) <= crit))


def double_t_test(C1, C2, alpha: float = 0.05, min_size: int = 2) -> Optional[bool]:
    """Pooled two-sample t-test on centroid histories, per dimension."""
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    if C1.ndim == 1:
        C1, C2 = C1[:, None], C2[:, None]
    n1, n2 = len(C1), len(C2)
    if n1 < min_size or n2 < min_size:
        return None
    sd = pooled_sd(C1, C2)
    if np.any(sd <= VARIANCE_FLOOR):
        raise DegenerateVariance("pooled spread is zero")
    t = (C1.mean(axis=0) - C2.mean(axis=0)) / sd
    crit = _t_crit(alpha, n1 + n2 - 2)
    return bool(np.all(np.abs(t) <= crit))


def pooled_sd(C1: np.ndarray, C2: np.ndarray) -> np.ndarray:
    n1, n2 = len(C1), len(C2)
    v1 = C1.var(axis=0, ddof=1)
    v2 = C2.var(axis=0, ddof=1)
    pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
    return np.sqrt(pooled * (1 / n1 + 1 / n2))


def project_iou(g: GlobalObject, local: LocalObject, K: CameraIntrinsics, T_c: Pose, max_points: int) -> float:
    if len(g.points) == 0:
        return 0.0
    try:
        box = project_bbox(_stride(g.points, max_points), K, T_c)
    except NoVisiblePoints:
        return 0.0
    return bbox_iou(box, local.bbox)


@dataclass
class AssociationReport:
    frame_id: int
    decisions: list = field(default_factory=list)
    merges: list = field(default_factory=list)

    @property
    def new_ids(self) -> list[int]:
        return [d["new_id"] for d in self.decisions if d.get("new_id") is not None]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(d["local"], d["matched"]) for d in self.decisions if d.get("matched") is not None]

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "decisions": self.decisions, "merges": [list(m) for m in self.merges]}


def _centroid_fallback(a: np.ndarray, b: np.ndarray, cfg: AssociationConfig) -> bool:
    return bool(np.linalg.norm(a - b) < cfg.degenerate_distance)


def _ensemble_verdicts(g, local, K, T_c, cfg):
    diag = {"id": g.id, "p_iou": project_iou(g, local, K, T_c, cfg.project_max_points)}
    diag["passed"] = False
    if diag["p_iou"] < cfg.iou_project_min:
        return diag
    m = motion_iou(g, local, cfg.motion_max_gap)
    diag["m_iou"] = m
    if m is not None and m >= cfg.iou_motion_min:
        diag["passed"] = True
        return diag
    nt = np_test_3d(local.points, g.points, cfg.alpha, cfg.min_test_points, cfg.subsample_cap)
    diag["np"] = nt
    if nt:
        diag["passed"] = True
        return diag
    try:
        st = single_t_test(g.history, local.centroid, cfg.alpha)
    except DegenerateVariance:
        st = _centroid_fallback(g.centroid, local.centroid, cfg)
        diag["st_fallback"] = True
    diag["st"] = st
    diag["passed"] = bool(st)
    return diag


def associate_frame(
    obj_map: ObjectMap,
    locals_: list[LocalObject],
    K: CameraIntrinsics,
    T_c: Pose,
    cfg: AssociationConfig,
) -> AssociationReport:
    """Associate one frame's local objects with the map, in place."""
    frame_id = locals_[0].frame_id if locals_ else -1
    report = AssociationReport(frame_id=frame_id)
    existing = list(obj_map)
    candidates = []  # (score, local index, global id)
    decisions = []
    for i, local in enumerate(locals_):
        d = {"local": i, "label": local.label, "matched": None, "new_id": None, "candidates": []}
        decisions.append(d)
        if len(local.points) == 0:
            d["skipped"] = "no points"
            continue
        for g in existing:
            if g.label != local.label:
                continue
            if cfg.strategy == "iou":
                score = _last_box_iou(g, local)
                diag = {"id": g.id, "iou": score, "passed": score is not None and score >= cfg.iou_motion_min}
            else:
                diag = _ensemble_verdicts(g, local, K, T_c, cfg)
                score = diag["p_iou"]
            d["candidates"].append(diag)
            if diag["passed"]:
                candidates.append((score, i, g.id))

    # one-to-one, highest score first
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_locals, used_globals = set(), set()
    for score, i, gid in candidates:
        if i in used_locals or gid in used_globals:
            continue
        used_locals.add(i)
        used_globals.add(gid)
        local = locals_[i]
        g = obj_map.objects[gid]
        _absorb_points(g, local.points, cfg.subsample_cap, obj_map.rng)
        g.centroid_history.append(local.centroid)
        g.votes[local.label] += 1
        _record_box(g, local.frame_id, local.bbox)
        decisions[i]["matched"] = gid

    for i, local in enumerate(locals_):
        if i in used_locals or len(local.points) == 0:
            continue
        g = obj_map.spawn(local, cfg.subsample_cap)
        decisions[i]["new_id"] = g.id

    report.decisions = decisions
    if cfg.strategy == "ensemble":
        report.merges = merge_duplicates(obj_map, cfg)
    return report


def merge_duplicates(obj_map: ObjectMap, cfg: AssociationConfig) -> list[tuple[int, int]]:
    """Fold same-label objects whose centroid histories pass the two-sample test."""
    objs = list(obj_map)
    pairs = []
    _, lab = np.unique([g.label for g in objs], return_inverse=True)
    cents = np.array([g.centroid for g in objs]).reshape(-1, 3)
    D = np.linalg.norm(cents[:, None] - cents[None], axis=-1)
    close = (D <= cfg.merge_distance_max) & (lab[:, None] == lab[None, :])
    for a_i, b_i in zip(*np.nonzero(np.triu(close, 1))):
        pairs.append((float(D[a_i, b_i]), objs[a_i].id, objs[b_i].id))
    pairs.sort()
    merged = []
    gone = set()
    for dist, ia, ib in pairs:
        if ia in gone or ib in gone:
            continue
        a, b = obj_map.objects[ia], obj_map.objects[ib]
        if a.label != b.label:
            continue
        key = (ia, len(a.centroid_history), ib, len(b.centroid_history), cfg.alpha, cfg.degenerate_distance)
        if key in obj_map.rejected:
            continue
        try:
            ok = double_t_test(a.history, b.history, cfg.alpha)
        except DegenerateVariance:
            ok = _centroid_fallback(a.centroid, b.centroid, cfg)
        if not ok:
            obj_map.rejected.add(key)
            continue
        keep, drop = (a, b) if a.id < b.id else (b, a)
        _merge_into(keep, drop, cfg.subsample_cap, obj_map.rng)
        del obj_map.objects[drop.id]
        gone.add(drop.id)
        merged.append((keep.id, drop.id))
    return merged


def _merge_into(keep: GlobalObject, drop: GlobalObject, cap: int, rng):
    _absorb_points(keep, drop.points, cap, rng)
    keep.centroid_history.extend(drop.centroid_history)
    keep.votes.update(drop.votes)
    for fid, box in drop.boxes.items():
        keep.boxes.setdefault(fid, box)
    for k in sorted(keep.boxes)[:-2]:
        del keep.boxes[k]
    keep.observations = sorted(keep.observations + drop.observations, key=lambda o: o[0])
