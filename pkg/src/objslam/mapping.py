"""Frame-by-frame map building: association, then periodic parameterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import AssociationConfig, AssociationReport, GlobalObject, LocalObject, ObjectMap, associate_frame
from .errors import ObjSlamError
from .geometry import CubeModel, QuadricModel
from .io import Frame, MapObject, ObjectMapFile
from .parameterization import ObjectEstimate, ParamConfig, View, model_kind, parameterize, segments_in_box


@dataclass
class MappingConfig:
    n_param: int = 10  # re-parameterize every n frames
    min_points: int = 10  # fewer points -> under-observed fallback
    prune: bool = True  # drop iForest outliers from the object's cloud at each refresh
    depth_gate: bool = True  # cut each box's points to a band around their median depth


def depth_gate(z: np.ndarray, k: float = 3.0, floor: float = 0.05) -> np.ndarray:
    """Mask of depths within ``k`` robust sigmas (at least ``floor`` metres) of the median."""
    if len(z) == 0:
        return np.zeros(0, dtype=bool)
    med = np.median(z)
    band = max(k * 1.4826 * float(np.median(np.abs(z - med))), floor)
    return np.abs(z - med) <= band


def assign_points(frame: Frame, gate: bool = True) -> list[np.ndarray]:
    """World points per detection.

    A point inside one box belongs to it. A point inside several boxes goes
    to the box whose unambiguous points have the closest median depth, or to
    the smallest box when no box has unambiguous points. With ``gate`` each
    box's points are then cut to a depth band around their median, which
    drops most background seen through the box.
    """
    out = [np.zeros((0, 3)) for _ in frame.detections]
    if not frame.detections or not len(frame.points):
        return out
    uv = frame.points[:, :2]
    depth = (frame.points[:, 2:] - frame.T_c.center) @ frame.T_c.rotation[2]
    inside = np.stack([d.bbox.contains(uv) for d in frame.detections])  # (dets, points)
    n_in = inside.sum(axis=0)
    ref = np.array([np.median(depth[inside[k] & (n_in == 1)]) if np.any(inside[k] & (n_in == 1)) else np.nan
                    for k in range(len(frame.detections))])
    areas = np.array([d.bbox.area for d in frame.detections])
    cost = np.where(inside, np.abs(depth[None, :] - np.nan_to_num(ref, nan=np.inf)[:, None]), np.inf)
    by_area = np.argmin(np.where(inside, areas[:, None], np.inf), axis=0)
    owner = np.where(np.isfinite(cost.min(axis=0)), np.argmin(cost, axis=0), by_area)
    has = n_in > 0
    for k in range(len(frame.detections)):
        sel = np.flatnonzero(has & (owner == k))
        if gate:
            sel = sel[depth_gate(depth[sel])]
        out[k] = frame.points[sel, 2:]
    return out


def local_objects(frame: Frame, gate: bool = True) -> list[LocalObject]:
    return [
        LocalObject(d.label, d.bbox, pts, frame.frame_id)
        for d, pts in zip(frame.detections, assign_points(frame, gate))
    ]


def fallback_estimate(points, label: str, s_min: float = 0.01, flag: str = "under_observed") -> ObjectEstimate:
    """Mean and half-range without outlier rejection or orientation."""
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    t = X.mean(axis=0)
    s = np.maximum((X.max(axis=0) - X.min(axis=0)) / 2, s_min)
    model = QuadricModel(t, s) if model_kind(label) == "quadric" else CubeModel(t, 0.0, s)
    return ObjectEstimate(model, len(X), [], (flag,))


class Mapper:
    """Owns the object map and the per-frame camera/segment context."""

    def __init__(self, assoc: AssociationConfig | None = None, param: ParamConfig | None = None,
                 mapping: MappingConfig | None = None, seed: int = 0):
        self.assoc = assoc or AssociationConfig(seed=seed)
        self.param = param or ParamConfig(seed=seed)
        self.cfg = mapping or MappingConfig()
        self.seed = seed
        self.map = ObjectMap(seed)
        self.frames: dict[int, Frame] = {}
        self.estimates: dict[int, ObjectEstimate] = {}
        self._seen: dict[int, tuple] = {}
        self.reports: list[AssociationReport] = []
        self.n_frames = 0

    def step(self, frame: Frame) -> AssociationReport:
        self.frames[frame.frame_id] = frame
        locals_ = local_objects(frame, self.cfg.depth_gate)
        report = associate_frame(self.map, locals_, frame.K, frame.T_c, self.assoc)
        if not locals_:
            report.frame_id = frame.frame_id
        for keep, drop in report.merges:
            self.estimates.pop(drop, None)
        self.reports.append(report)
        self.n_frames += 1
        if self.cfg.n_param and self.n_frames % self.cfg.n_param == 0:
            self.parameterize_all()
        return report

    def views_for(self, g: GlobalObject) -> list[View]:
        """Views holding segments, thinned to ``max_views`` evenly spaced ones (latest kept)."""
        views = []
        for fid, box in g.observations:
            fr = self.frames.get(fid)
            if fr is None:
                continue
            segs = segments_in_box(fr.segments, box)
            if len(segs):
                views.append(View(fr.K, fr.T_c, segs, box))
        cap = self.param.max_views
        if cap and len(views) > cap:
            idx = np.unique(np.linspace(0, len(views) - 1, cap).round().astype(int))
            views = [views[i] for i in idx]
        return views

    def estimate(self, g: GlobalObject) -> ObjectEstimate:
        if len(g.points) < self.cfg.min_points:
            return fallback_estimate(g.points, g.label, self.param.s_min)
        cfg = ParamConfig(**{**self.param.__dict__, "seed": self.param.seed * 100003 + g.id})
        try:
            return parameterize(g.points, g.label, self.views_for(g), cfg)
        except ObjSlamError:
            return fallback_estimate(g.points, g.label, self.param.s_min, "param_failed")

    def refresh(self, g: GlobalObject) -> ObjectEstimate:
        """Re-estimate one object; its cloud keeps only the iForest inliers."""
        est = self.estimate(g)
        if self.cfg.prune and est.inlier_mask is not None and len(est.inlier_mask) == len(g.points):
            g.points = g.points[est.inlier_mask]
        self.estimates[g.id] = g.estimate = est
        self._seen[g.id] = self._signature(g)
        return est

    @staticmethod
    def _signature(g: GlobalObject) -> tuple:
        return len(g.observations), len(g.points), g.observations[-1][0] if g.observations else None

    def parameterize_all(self) -> None:
        """Refresh every object observed since its last estimate."""
        for g in self.map:
            if g.id not in self.estimates or self._seen.get(g.id) != self._signature(g):
                self.refresh(g)

    def map_file(self, provenance: dict | None = None) -> ObjectMapFile:
        objs = []
        for g in self.map:
            est = self.estimates.get(g.id)
            if est is None:
                est = self.estimates[g.id] = self.estimate(g)
            objs.append(MapObject(g.id, g.label, est.model, est.inlier_count, tuple(est.flags)))
        return ObjectMapFile(objs, dict(provenance or {}))


def run_mapping(frames, assoc=None, param=None, mapping=None, seed: int = 0, provenance=None):
    """Process a frame stream; parameterize every ``n_param`` frames and at the end."""
    m = Mapper(assoc, param, mapping, seed)
    for fr in frames:
        m.step(fr)
    m.parameterize_all()
    return m, m.map_file(provenance)
