"""Map evaluation: centre distance, yaw error and 2D/3D IoU against ground truth."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from shapely.geometry import Polygon

from .geometry import yaw_matrix

MATCH_GATE = 0.5  # metres


def footprint(t, yaw, s) -> Polygon:
    """Top-view rectangle of a gravity-aligned box."""
    corners = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * np.asarray(s)[:2]
    R = yaw_matrix(yaw)[:2, :2]
    xy = corners @ R.T + np.asarray(t)[:2]
    return Polygon(xy)


def _yaw(model) -> float:
    return float(getattr(model, "yaw", 0.0))


def iou_2d(a, b) -> float:
    pa = footprint(a.t, _yaw(a), a.s)
    pb = footprint(b.t, _yaw(b), b.s)
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0


def iou_3d(a, b) -> float:
    """IoU of two gravity-aligned boxes (quadrics use their bounding box)."""
    pa = footprint(a.t, _yaw(a), a.s)
    pb = footprint(b.t, _yaw(b), b.s)
    inter_xy = pa.intersection(pb).area
    lo = max(a.t[2] - a.s[2], b.t[2] - b.s[2])
    hi = min(a.t[2] + a.s[2], b.t[2] + b.s[2])
    inter = inter_xy * max(hi - lo, 0.0)
    va = 8 * float(np.prod(a.s))
    vb = 8 * float(np.prod(b.s))
    union = va + vb - inter
    return float(inter / union) if union > 0 else 0.0


def yaw_error_deg(a: float, b: float) -> float:
    """Smallest yaw difference over the four equivalent box yaws, in degrees."""
    d = (a - b) % (math.pi / 2)
    return math.degrees(min(d, math.pi / 2 - d))


def match_objects(est, gt, gate: float = MATCH_GATE) -> list[tuple[int, int]]:
    """Index pairs (est, gt) minimising total centre distance, gated at ``gate``."""
    if not est or not gt:
        return []
    A = np.array([o.model.t for o in est])
    B = np.array([o.model.t for o in gt])
    D = np.linalg.norm(A[:, None] - B[None], axis=-1)
    big = 1e6
    cost = np.where(D <= gate, D, big)
    r, c = linear_sum_assignment(cost)
    return sorted((int(i), int(j)) for i, j in zip(r, c) if D[i, j] <= gate)


def eval_map(est_map, gt_map, gate: float = MATCH_GATE) -> dict:
    """Per-object and mean CDE (cm), YAE (deg), top-view IoU and 3D IoU."""
    est = sorted(est_map.objects, key=lambda o: o.id)
    gt = sorted(gt_map.objects, key=lambda o: o.id)
    pairs = match_objects(est, gt, gate)
    rows = []
    for i, j in pairs:
        e, g = est[i], gt[j]
        row = {
            "gt_id": g.id,
            "est_id": e.id,
            "label": g.label,
            "label_ok": e.label == g.label,
            "cde_cm": 100.0 * float(np.linalg.norm(e.model.t - g.model.t)),
            "yae_deg": None,
            "iou_2d": iou_2d(e.model, g.model),
            "iou_3d": iou_3d(e.model, g.model),
        }
        if e.kind == "cube" and g.kind == "cube":
            row["yae_deg"] = yaw_error_deg(e.model.yaw, g.model.yaw)
        rows.append(row)
    matched_gt = {gt[j].id for _, j in pairs}
    matched_est = {est[i].id for i, _ in pairs}

    def mean(key, rs):
        vals = [r[key] for r in rs if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    n_gt = len(gt)
    return {
        "objects": rows,
        "misses": [g.id for g in gt if g.id not in matched_gt],
        "false_positives": [e.id for e in est if e.id not in matched_est],
        "n_gt": n_gt,
        "n_est": len(est),
        "n_matched": len(pairs),
        "count_error": len(est) - n_gt,
        "mean_cde_cm": mean("cde_cm", rows),
        "mean_yae_deg": mean("yae_deg", rows),
        "mean_iou_2d": mean("iou_2d", rows),
        "mean_iou_3d": mean("iou_3d", rows),
        # misses count as zero overlap
        "gt_mean_iou_2d": float(sum(r["iou_2d"] for r in rows) / n_gt) if n_gt else None,
        "gt_mean_iou_3d": float(sum(r["iou_3d"] for r in rows) / n_gt) if n_gt else None,
    }
