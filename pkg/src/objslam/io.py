"""File formats: frame JSONL, object maps, scenes.

Frames are written with shortest round-trip float repr so a write/read cycle
is bit-exact. Maps, reports and scenes are written canonically (sorted keys,
floats at 9 significant digits) so that reruns diff cleanly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import SchemaError
from .geometry import BBox2D, CameraIntrinsics, CubeModel, Pose, QuadricModel

SCHEMA_VERSION = 1
SIG_DIGITS = 9
ORTHO_TOL = 1e-6


@dataclass
class Detection:
    label: str
    bbox: BBox2D
    confidence: float = 1.0


@dataclass
class Frame:
    frame_id: int
    timestamp: float
    T_c: Pose
    K: CameraIntrinsics
    detections: list[Detection] = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))  # u, v, x, y, z
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 5)
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)

    def to_dict(self) -> dict:
        K = self.K
        return {
            "frame_id": int(self.frame_id),
            "timestamp": float(self.timestamp),
            "pose": {"R": self.T_c.rotation.tolist(), "t": self.T_c.translation.tolist()},
            "K": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
            "detections": [
                {"label": d.label, "bbox": d.bbox.as_list(), "confidence": float(d.confidence)}
                for d in self.detections
            ],
            "points": self.points.tolist(),
            "segments": self.segments.tolist(),
        }


# ---------------------------------------------------------------- parsing helpers


def _req(d: dict, key: str, line, prefix=""):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError("missing required field", line, prefix + key)
    return d[key]


def _num(v, line, name) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"expected a finite number, got {v!r}", line, name)
    return float(v)


def _array(v, shape_tail: int, line, name) -> np.ndarray:
    if not isinstance(v, list):
        raise SchemaError("expected a list", line, name)
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("expected numeric rows", line, name) from None
    if a.size == 0:
        return a.reshape(0, shape_tail)
    if a.ndim != 2 or a.shape[1] != shape_tail:
        raise SchemaError(f"expected rows of {shape_tail} numbers", line, name)
    if not np.all(np.isfinite(a)):
        raise SchemaError("non-finite value", line, name)
    return a


def frame_from_dict(d: dict, line=None) -> Frame:
    if not isinstance(d, dict):
        raise SchemaError("expected a JSON object", line)
    fid = _req(d, "frame_id", line)
    if isinstance(fid, bool) or not isinstance(fid, int):
        raise SchemaError("expected an integer", line, "frame_id")
    ts = _num(d.get("timestamp", float(fid)), line, "timestamp")

    pose = _req(d, "pose", line)
    R = _array(_req(pose, "R", line, "pose."), 3, line, "pose.R")
    t = np.asarray(_req(pose, "t", line, "pose."), dtype=float) if isinstance(pose.get("t"), list) else None
    if R.shape != (3, 3):
        raise SchemaError("expected a 3x3 matrix", line, "pose.R")
    if t is None or t.shape != (3,) or not np.all(np.isfinite(t)):
        raise SchemaError("expected 3 finite numbers", line, "pose.t")
    if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOL or np.linalg.det(R) <= 0:
        raise SchemaError("rotation is not orthonormal", line, "pose.R")
    T_c = Pose(R, t)

    kd = _req(d, "K", line)
    try:
        K = CameraIntrinsics(
            _num(_req(kd, "fx", line, "K."), line, "K.fx"),
            _num(_req(kd, "fy", line, "K."), line, "K.fy"),
            _num(_req(kd, "cx", line, "K."), line, "K.cx"),
            _num(_req(kd, "cy", line, "K."), line, "K.cy"),
            int(_num(_req(kd, "width", line, "K."), line, "K.width")),
            int(_num(_req(kd, "height", line, "K."), line, "K.height")),
        )
    except ValueError as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(str(e), line, "K") from None

    dets = []
    raw = d.get("detections", [])
    if not isinstance(raw, list):
        raise SchemaError("expected a list", line, "detections")
    for k, det in enumerate(raw):
        name = f"detections[{k}]"
        label = _req(det, "label", line, name + ".")
        if not isinstance(label, str) or not label:
            raise SchemaError("expected a non-empty string", line, name + ".label")
        bb = _req(det, "bbox", line, name + ".")
        if not isinstance(bb, list) or len(bb) != 4:
            raise SchemaError("expected [xmin, ymin, xmax, ymax]", line, name + ".bbox")
        vals = [_num(v, line, name + ".bbox") for v in bb]
        try:
            box = BBox2D(*vals)
        except ValueError as e:
            raise SchemaError(str(e), line, name + ".bbox") from None
        conf = _num(det.get("confidence", 1.0), line, name + ".confidence")
        dets.append(Detection(label, box, conf))

    pts = _array(d.get("points", []), 5, line, "points")
    if len(pts):
        u, v = pts[:, 0], pts[:, 1]
        if np.any((u < 0) | (u > K.width) | (v < 0) | (v > K.height)):
            raise SchemaError("point pixel outside the image", line, "points")
    segs = _array(d.get("segments", []), 4, line, "segments")
    if len(segs) and np.any(np.all(segs[:, :2] == segs[:, 2:], axis=1)):
        raise SchemaError("degenerate segment", line, "segments")
    return Frame(fid, ts, T_c, K, dets, pts, segs)


def iter_frames(path) -> Iterator[Frame]:
    """Frames of a JSONL file in order; blank lines are skipped."""
    last = None
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                d = json.loads(text)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON ({e.msg})", lineno) from None
            fr = frame_from_dict(d, lineno)
            if last is not None and fr.frame_id <= last:
                raise SchemaError(f"frame_id {fr.frame_id} does not increase (previous {last})", lineno, "frame_id")
            last = fr.frame_id
            yield fr


def read_frames(path) -> list[Frame]:
    return list(iter_frames(path))


def write_frames(path, frames) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fr in frames:
            fh.write(json.dumps(fr.to_dict(), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------- canonical JSON


def canonical(obj):
    """Round floats to 9 significant digits, recursively; NaN/inf become None."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        r = float(f"{x:.{SIG_DIGITS}g}")
        return 0.0 if r == 0 else r
    return obj


def dumps(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e.msg})", e.lineno) from None


# ---------------------------------------------------------------- object maps


@dataclass
class MapObject:
    id: int
    label: str
    model: CubeModel | QuadricModel
    inlier_count: int = 0
    flags: tuple = ()

    @property
    def kind(self) -> str:
        return self.model.kind

    def to_dict(self) -> dict:
        return {
            "id": int(self.id),
            "label": self.label,
            "kind": self.kind,
            "t": self.model.t.tolist(),
            "yaw": float(self.model.yaw),
            "s": self.model.s.tolist(),
            "inlier_count": int(self.inlier_count),
            "flags": sorted(self.flags),
        }


@dataclass
class ObjectMapFile:
    objects: list[MapObject]
    provenance: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "objects": [o.to_dict() for o in sorted(self.objects, key=lambda o: o.id)],
            "provenance": self.provenance,
        }


def map_from_dict(d: dict) -> ObjectMapFile:
    if not isinstance(d, dict):
        raise SchemaError("expected a JSON object")
    objs = []
    seen = set()
    for k, o in enumerate(_req(d, "objects", None)):
        name = f"objects[{k}]"
        oid = _req(o, "id", None, name + ".")
        if isinstance(oid, bool) or not isinstance(oid, int):
            raise SchemaError("expected an integer", None, name + ".id")
        if oid in seen:
            raise SchemaError(f"duplicate id {oid}", None, name + ".id")
        seen.add(oid)
        label = _req(o, "label", None, name + ".")
        kind = o.get("kind", "cube")
        t = np.asarray(_req(o, "t", None, name + "."), dtype=float)
        s = np.asarray(_req(o, "s", None, name + "."), dtype=float)
        if t.shape != (3,) or s.shape != (3,):
            raise SchemaError("expected 3-vectors", None, name)
        try:
            if kind == "quadric":
                model = QuadricModel(t, s)
            elif kind == "cube":
                model = CubeModel(t, _num(o.get("yaw", 0.0), None, name + ".yaw"), s)
            else:
                raise SchemaError(f"unknown kind {kind!r}", None, name + ".kind")
        except ValueError as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError(str(e), None, name) from None
        objs.append(MapObject(oid, str(label), model, int(o.get("inlier_count", 0)), tuple(o.get("flags", ()))))
    return ObjectMapFile(objs, d.get("provenance", {}), int(d.get("schema", SCHEMA_VERSION)))


def read_map(path) -> ObjectMapFile:
    return map_from_dict(read_json(path))


def write_map(path, m: ObjectMapFile) -> None:
    write_json(path, m.to_dict())
