"""Tabletop active mapping in simulation.

The simulator renders sparse observations of boxes and cylinders resting on a
table: fixed surface landmarks (the texture), detector boxes and edge
segments. Exploration keeps a surface occupancy grid on the five non-bottom
faces of every estimated object and picks views by an entropy-driven utility.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .association import AssociationConfig
from .errors import InvalidInput
from .geometry import (
    CUBE_EDGES,
    BBox2D,
    CameraIntrinsics,
    CubeModel,
    Pose,
    QuadricModel,
    bbox_iou,
    clamp_box,
    cube_vertices,
    project_points,
    segment_ray_hits_box,
    visible_edges,
    yaw_matrix,
)
from .io import Detection, Frame, MapObject, ObjectMapFile
from .mapping import Mapper, MappingConfig, assign_points
from .metrics import eval_map
from .parameterization import ParamConfig

P_OCC = 0.99
P_FREE = 0.01
UNKNOWN, FREE, OCCUPIED = 0, 1, 2
CELL = 0.01
POLICIES = ("nbv", "random", "coverage", "init")

# (axis, sign) of the gridded faces; the bottom face rests on the table
FACES = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


# ---------------------------------------------------------------- scene


@dataclass
class SimObject:
    label: str
    shape: str  # "box" or "cylinder"
    t: np.ndarray  # centre
    yaw: float
    s: np.ndarray  # half extents; a cylinder has s = (r, r, h/2)
    texture: float = 0.5  # landmarks per cm^2

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        self.s = np.asarray(self.s, dtype=float).reshape(3)
        if self.shape not in ("box", "cylinder"):
            raise InvalidInput(f"unknown shape {self.shape!r}")
        if np.any(self.s <= 0) or self.texture < 0:
            raise InvalidInput("object extents must be positive and texture non-negative")
        if self.shape == "cylinder":
            self.yaw = 0.0

    @property
    def model(self):
        if self.shape == "cylinder":
            return QuadricModel(self.t, self.s)
        return CubeModel(self.t, self.yaw, self.s)

    def to_dict(self) -> dict:
        return {"label": self.label, "shape": self.shape, "t": self.t.tolist(), "yaw": float(self.yaw),
                "s": self.s.tolist(), "texture": float(self.texture)}


@dataclass
class SimScene:
    table: tuple  # xmin, ymin, xmax, ymax
    objects: list[SimObject]
    seed: int = 0
    table_height: float = 0.0
    point_noise: float = 0.003  # fixed triangulation error of each landmark, metres
    table_texture: float = 0.005  # clutter landmarks on the table, per cm^2
    pixel_noise: float = 1.0
    segment_noise: float = 0.5
    feature_prob: float = 1.0  # chance a visible landmark is tracked in a frame
    dropout: float = 0.0  # chance the detector misses a visible object
    min_box: float = 2.0  # detector ignores boxes with a shorter side, pixels
    grazing: float = 1.0  # tracking chance scales with cos(incidence) ** grazing
    K: CameraIntrinsics = field(default_factory=default_intrinsics)
    _landmarks: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.table = tuple(float(v) for v in self.table)
        if not (self.table[0] < self.table[2] and self.table[1] < self.table[3]):
            raise InvalidInput("malformed table rectangle")

    @property
    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.table
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2, self.table_height])

    def landmarks(self, k: int):
        """Persistent landmarks of object ``k``: (true points, normals, mapped points).

        Mapped points carry a fixed error, like triangulated map points: every
        frame that sees a landmark reports the same world position. ``k = -1``
        is the table top (points under objects removed).
        """
        if k not in self._landmarks:
            rng = np.random.default_rng([self.seed, 7, k + 1])
            if k < 0:
                L, N = self._table_points(rng)
            else:
                L, N = _sample_surface(self.objects[k], rng)
            self._landmarks[k] = (L, N, L + rng.normal(0, self.point_noise, L.shape))
        return self._landmarks[k]

    def _table_points(self, rng):
        x0, y0, x1, y1 = self.table
        n = int(rng.poisson(self.table_texture * (x1 - x0) * (y1 - y0) * 1e4))
        P = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.full(n, self.table_height)])
        free = np.ones(n, dtype=bool)
        for o in self.objects:
            q = (P - o.t) @ yaw_matrix(o.yaw)
            if o.shape == "box":
                free &= ~np.all(np.abs(q[:, :2]) <= o.s[:2], axis=1)
            else:
                free &= np.hypot(q[:, 0], q[:, 1]) > o.s[0]
        P = P[free]
        return P, np.tile([0.0, 0.0, 1.0], (len(P), 1))

    def gt_map(self) -> ObjectMapFile:
        return ObjectMapFile([MapObject(k, o.label, o.model) for k, o in enumerate(self.objects)],
                             {"scene_seed": self.seed})

    def to_dict(self) -> dict:
        return {
            "table": list(self.table),
            "table_height": self.table_height,
            "seed": self.seed,
            "noise": {"point": self.point_noise, "pixel": self.pixel_noise, "segment": self.segment_noise,
                      "feature_prob": self.feature_prob, "dropout": self.dropout, "min_box": self.min_box,
                      "grazing": self.grazing},
            "table_texture": self.table_texture,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimScene":
        try:
            noise = d.get("noise", {})
            objs = [SimObject(o["label"], o.get("shape", "box"), o["t"], float(o.get("yaw", 0.0)), o["s"],
                              float(o.get("texture", 0.5))) for o in d.get("objects", [])]
            return cls(tuple(d["table"]), objs, int(d.get("seed", 0)), float(d.get("table_height", 0.0)),
                       float(noise.get("point", 0.003)), float(d.get("table_texture", 0.005)),
                       float(noise.get("pixel", 1.0)), float(noise.get("segment", 0.5)),
                       float(noise.get("feature_prob", 1.0)), float(noise.get("dropout", 0.0)),
                       float(noise.get("min_box", 2.0)), float(noise.get("grazing", 1.0)))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise InvalidInput(f"bad scene description: {e}") from None


def _sample_surface(o: SimObject, rng) -> tuple[np.ndarray, np.ndarray]:
    """Landmarks on every surface except the bottom, at ``texture`` points per cm^2."""
    pts, nrm = [], []
    R = yaw_matrix(o.yaw)
    if o.shape == "box":
        for axis, sign in FACES:
            b, c = [a for a in range(3) if a != axis]
            area_cm2 = (2 * o.s[b]) * (2 * o.s[c]) * 1e4
            n = int(rng.poisson(o.texture * area_cm2))
            q = np.zeros((n, 3))
            q[:, axis] = sign * o.s[axis]
            q[:, b] = rng.uniform(-o.s[b], o.s[b], n)
            q[:, c] = rng.uniform(-o.s[c], o.s[c], n)
            normal = np.zeros(3)
            normal[axis] = sign
            pts.append(q @ R.T + o.t)
            nrm.append(np.tile(R @ normal, (n, 1)))
    else:
        r, h = o.s[0], o.s[2]
        n_top = int(rng.poisson(o.texture * math.pi * r * r * 1e4))
        rad = r * np.sqrt(rng.random(n_top))
        ang = rng.uniform(0, 2 * math.pi, n_top)
        pts.append(o.t + np.stack([rad * np.cos(ang), rad * np.sin(ang), np.full(n_top, h)], axis=1))
        nrm.append(np.tile([0.0, 0.0, 1.0], (n_top, 1)))
        n_side = int(rng.poisson(o.texture * 2 * math.pi * r * 2 * h * 1e4))
        ang = rng.uniform(0, 2 * math.pi, n_side)
        z = rng.uniform(-h, h, n_side)
        ring = np.stack([np.cos(ang), np.sin(ang), np.zeros(n_side)], axis=1)
        pts.append(o.t + ring * r + np.stack([np.zeros(n_side), np.zeros(n_side), z], axis=1))
        nrm.append(ring)
    return np.vstack(pts).reshape(-1, 3), np.vstack(nrm).reshape(-1, 3)


def _bound_points(o: SimObject) -> np.ndarray:
    """Points whose projection bounds the object's image footprint."""
    if o.shape == "box":
        return cube_vertices(o.model)
    ang = np.linspace(0, 2 * math.pi, 24, endpoint=False)
    ring = np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1) * o.s[0]
    return np.vstack([o.t + ring + [0, 0, o.s[2]], o.t + ring - [0, 0, o.s[2]]])


def _sample_points(o: SimObject) -> np.ndarray:
    """Five probe points for the occlusion test: centre and four top-face points."""
    R = yaw_matrix(o.yaw)
    q = np.array([[0, 0, 0], [0.7, 0, 0.9], [-0.7, 0, 0.9], [0, 0.7, 0.9], [0, -0.7, 0.9]]) * o.s
    return q @ R.T + o.t


def _occluded(scene: SimScene, k: int, eye, P) -> np.ndarray:
    hit = np.zeros(len(P), dtype=bool)
    for m, other in enumerate(scene.objects):
        if m != k:
            hit |= segment_ray_hits_box(eye, P, other.t, other.yaw, other.s)
    return hit


def _in_image(uv, ok, K: CameraIntrinsics) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return ok & (uv[:, 0] >= 0) & (uv[:, 0] <= K.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height)


def _clip_segment(p, q, K: CameraIntrinsics):
    """Liang-Barsky clip of segment p-q to the image rectangle; None if outside."""
    d = q - p
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p[0]), (d[0], K.width - p[0]), (-d[1], p[1]), (d[1], K.height - p[1])):
        if pk == 0:
            if qk < 0:
                return None
            continue
        r = qk / pk
        if pk < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return p + t0 * d, p + t1 * d


def _view_rng(scene: SimScene, T_c: Pose):
    key = zlib.crc32(np.round(np.hstack([T_c.rotation.ravel(), T_c.translation]), 12).tobytes())
    return np.random.default_rng([scene.seed, 11, key])


def _visible_landmarks(scene: SimScene, k: int, T_c: Pose, rng) -> np.ndarray:
    """Rows (u, v, x, y, z) for the landmarks of ``k`` tracked from ``T_c``."""
    K = scene.K
    eye = T_c.center
    L, N, M = scene.landmarks(k)
    if not len(L):
        return np.zeros((0, 5))
    ray = eye - L
    cos_inc = np.einsum("ij,ij->i", N, ray) / np.linalg.norm(ray, axis=1)
    vis = cos_inc > 0
    uv, ok = project_points(L, K, T_c)
    vis &= _in_image(uv, ok, K)
    p = scene.feature_prob * np.clip(cos_inc, 0, 1) ** scene.grazing
    if np.any(p[vis] < 1.0):
        vis &= rng.random(len(L)) < p
    idx = np.flatnonzero(vis)
    if len(idx):
        vis[idx[_occluded(scene, k, eye, L[idx])]] = False
    return np.hstack([uv[vis], M[vis]])


def simulate_observation(scene: SimScene, T_c: Pose, frame_id: int = 0) -> Frame:
    """Deterministic synthetic frame for ``(scene.seed, view)``.

    Every GT object whose probe points are not all hidden yields a detection
    (the projected GT box with pixel noise). Points are the persistent
    landmarks visible in the view, table clutter included; box edges that
    are visible and unoccluded yield noisy segments (cylinders give none).
    """
    K = scene.K
    eye = T_c.center
    rng = _view_rng(scene, T_c)
    dets, segs = [], []
    points = [_visible_landmarks(scene, -1, T_c, rng)]
    for k, o in enumerate(scene.objects):
        points.append(_visible_landmarks(scene, k, T_c, rng))
        probes = _sample_points(o)
        uv_p, ok_p = project_points(probes, K, T_c)
        seen = _in_image(uv_p, ok_p, K) & ~_occluded(scene, k, eye, probes)
        if not seen.any() or (scene.dropout > 0 and rng.random() < scene.dropout):
            continue
        uv_b, ok_b = project_points(_bound_points(o), K, T_c)
        if not ok_b.all():
            continue
        lo, hi = uv_b.min(axis=0), uv_b.max(axis=0)
        jitter = rng.normal(0, scene.pixel_noise, 4) if scene.pixel_noise > 0 else np.zeros(4)
        x0, y0, x1, y1 = np.array([lo[0], lo[1], hi[0], hi[1]]) + jitter
        box = clamp_box(BBox2D(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)), K)
        if min(box.xmax - box.xmin, box.ymax - box.ymin) < scene.min_box:
            continue
        dets.append(Detection(o.label, box, 1.0))

        if o.shape == "box":
            V = cube_vertices(o.model)
            uv_v, ok_v = project_points(V, K, T_c)
            for (a, b), v in zip(CUBE_EDGES, visible_edges(o.t, o.yaw, o.s, eye)):
                if not (v and ok_v[a] and ok_v[b]):
                    continue
                mids = V[a] + np.outer([0.25, 0.5, 0.75], V[b] - V[a])
                if _occluded(scene, k, eye, mids).any():
                    continue
                clipped = _clip_segment(uv_v[a], uv_v[b], K)
                if clipped is None:
                    continue
                p, q = clipped
                if scene.segment_noise > 0:
                    p = p + rng.normal(0, scene.segment_noise, 2)
                    q = q + rng.normal(0, scene.segment_noise, 2)
                p = np.clip(p, 0, [K.width, K.height])
                q = np.clip(q, 0, [K.width, K.height])
                if np.hypot(*(q - p)) < 10:
                    continue
                segs.append([*p, *q])
    pts = np.vstack(points)
    return Frame(frame_id, float(frame_id), T_c, K, dets, pts, np.array(segs).reshape(-1, 4))


LABEL_SHAPES = {
    "book": ("box", (0.11, 0.075, 0.02)),
    "box": ("box", (0.07, 0.05, 0.05)),
    "keyboard": ("box", (0.2, 0.07, 0.015)),
    "laptop": ("box", (0.16, 0.11, 0.012)),
    "mouse": ("box", (0.05, 0.03, 0.018)),
    "cup": ("cylinder", (0.04, 0.04, 0.05)),
    "bottle": ("cylinder", (0.035, 0.035, 0.11)),
    "can": ("cylinder", (0.033, 0.033, 0.06)),
}


def random_scene(seed: int, n_objects: int | None = None, table=(0.0, 0.0, 1.0, 0.7)) -> SimScene:
    """Non-overlapping random boxes and cylinders on a table."""
    rng = np.random.default_rng([seed, 3])
    n = int(rng.integers(4, 7)) if n_objects is None else n_objects
    labels = sorted(LABEL_SHAPES)
    objs: list[SimObject] = []
    x0, y0, x1, y1 = table
    tries = 0
    while len(objs) < n and tries < 2000:
        tries += 1
        lab = labels[int(rng.integers(len(labels)))]
        shape, base = LABEL_SHAPES[lab]
        s = np.array(base) * rng.uniform(0.85, 1.2)
        if shape == "cylinder":
            s[1] = s[0]
        rad = math.hypot(s[0], s[1])
        c = rng.uniform([x0 + rad + 0.03, y0 + rad + 0.03], [x1 - rad - 0.03, y1 - rad - 0.03])
        if any(math.hypot(*(c - o.t[:2])) < rad + math.hypot(o.s[0], o.s[1]) + 0.04 for o in objs):
            continue
        yaw = float(rng.uniform(-math.pi / 2, math.pi / 2)) if shape == "box" else 0.0
        objs.append(SimObject(lab, shape, [c[0], c[1], s[2]], yaw, s, float(rng.uniform(0.3, 0.9))))
    return SimScene(table, objs, seed)


# ---------------------------------------------------------------- views


def look_at_table(eye, scene: SimScene) -> Pose:
    return Pose.look_at(eye, scene.center)


def init_views(scene: SimScene, height: float = 0.6, lean: float = 0.35) -> list[Pose]:
    """Top views from above the four table corners, aimed ``lean`` of the way to the centre."""
    x0, y0, x1, y1 = scene.table
    z = scene.table_height + height
    c = scene.center
    out = []
    for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
        corner = np.array([x, y, scene.table_height])
        out.append(Pose.look_at([x, y, z], corner + lean * (c - corner)))
    return out


def candidate_views(scene: SimScene, radius: float = 0.85, elevations=(35.0, 60.0), n_azimuth: int = 16) -> list[Pose]:
    """Hemisphere rings around the table centre plus the four corner top views."""
    c = scene.center
    out = []
    for el in elevations:
        e = math.radians(el)
        for k in range(n_azimuth):
            a = 2 * math.pi * k / n_azimuth
            eye = c + radius * np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])
            out.append(look_at_table(eye, scene))
    return out + init_views(scene)


def coverage_views(scene: SimScene, height: float = 0.6, stops: int = 10) -> list[Pose]:
    """Boustrophedon sweep of nadir views over the table: two rows, snake order."""
    x0, y0, x1, y1 = scene.table
    cols = stops // 2
    xs = np.linspace(x0 + 0.1 * (x1 - x0), x1 - 0.1 * (x1 - x0), cols)
    ys = (y0 + 0.3 * (y1 - y0), y0 + 0.7 * (y1 - y0))
    out = []
    for r, y in enumerate(ys):
        for x in (xs if r % 2 == 0 else xs[::-1]):
            eye = np.array([x, y, scene.table_height + height])
            out.append(Pose.look_at(eye, eye - [0, 0, 1.0], up=(0.0, 1.0, 0.0)))
    return out[:stops]


# ---------------------------------------------------------------- surface grid


def grid_entropy(p) -> np.ndarray:
    """Binary entropy in bits with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise InvalidInput("probability outside [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    h = np.where((p == 0) | (p == 1), 0.0, h)
    return h if h.ndim else float(h)


STATE_P = np.array([0.5, P_FREE, P_OCC])
STATE_H = grid_entropy(STATE_P)


class SurfaceGrid:
    """Occupancy cells on the five non-bottom faces of an estimated box.

    Cell counts are fixed when the grid is created (1 cm cells at that
    estimate). Cells are addressed by normalized face coordinates, so later
    estimates with different extents keep updating the same cells.
    """

    def __init__(self, s, cell: float = CELL):
        s = np.asarray(s, dtype=float)
        self.dims = []
        self.states = []
        for axis, _ in FACES:
            b, c = [a for a in range(3) if a != axis]
            nb = max(1, int(math.ceil(2 * s[b] / cell - 1e-9)))
            nc = max(1, int(math.ceil(2 * s[c] / cell - 1e-9)))
            self.dims.append((nb, nc))
            self.states.append(np.zeros((nb, nc), dtype=np.int8))

    @property
    def total(self) -> int:
        return sum(st.size for st in self.states)

    def counts(self) -> dict:
        allst = np.concatenate([st.ravel() for st in self.states])
        return {"unknown": int((allst == UNKNOWN).sum()), "free": int((allst == FREE).sum()),
                "occupied": int((allst == OCCUPIED).sum())}

    def entropy(self) -> tuple[float, float]:
        """(H_obj, normalized H_obj)."""
        c = self.counts()
        H = c["unknown"] * STATE_H[UNKNOWN] + c["free"] * STATE_H[FREE] + c["occupied"] * STATE_H[OCCUPIED]
        return float(H), float(H / self.total)

    def occupied_ratio(self) -> float:
        return self.counts()["occupied"] / self.total

    def cell_centers(self, model) -> list[np.ndarray]:
        """World positions of every face's cell centres for the given estimate."""
        R = yaw_matrix(getattr(model, "yaw", 0.0))
        s = np.asarray(model.s)
        out = []
        for (axis, sign), (nb, nc) in zip(FACES, self.dims):
            b, c = [a for a in range(3) if a != axis]
            ub = (2 * (np.arange(nb) + 0.5) / nb - 1) * s[b]
            uc = (2 * (np.arange(nc) + 0.5) / nc - 1) * s[c]
            q = np.zeros((nb, nc, 3))
            q[..., axis] = sign * s[axis]
            q[..., b] = ub[:, None]
            q[..., c] = uc[None, :]
            out.append(q.reshape(-1, 3) @ R.T + model.t)
        return out

    def mark_points(self, model, points, reach: float = 1.25) -> int:
        """Cells hit by points become occupied; returns how many points landed."""
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        if not len(P):
            return 0
        s = np.asarray(model.s)
        u = ((P - model.t) @ yaw_matrix(getattr(model, "yaw", 0.0))) / s
        a = np.abs(u)
        near = a.max(axis=1) <= reach
        axis = np.argmax(a, axis=1)
        landed = 0
        for f, ((fa, sign), (nb, nc)) in enumerate(zip(FACES, self.dims)):
            sel = near & (axis == fa) & (np.sign(u[:, fa]) == sign)
            if not sel.any():
                continue
            b, c = [x for x in range(3) if x != fa]
            ib = np.clip(((u[sel, b] + 1) / 2 * nb).astype(int), 0, nb - 1)
            ic = np.clip(((u[sel, c] + 1) / 2 * nc).astype(int), 0, nc - 1)
            self.states[f][ib, ic] = OCCUPIED
            landed += int(sel.sum())
        return landed

    def visible_masks(self, model, K: CameraIntrinsics, T_c: Pose, occluders=()) -> list[np.ndarray]:
        """Per-face masks of cells seen from the camera: facing it, in the image, not occluded."""
        eye = T_c.center
        R = yaw_matrix(getattr(model, "yaw", 0.0))
        masks = []
        for (axis, sign), C, st in zip(FACES, self.cell_centers(model), self.states):
            n = np.zeros(3)
            n[axis] = sign
            n = R @ n
            m = (C - eye) @ n < 0
            if m.any():
                uv, ok = project_points(C, K, T_c)
                m &= _in_image(uv, ok, K)
            for occ in occluders:
                if m.any():
                    idx = np.flatnonzero(m)
                    m[idx[segment_ray_hits_box(eye, C[idx], occ.t, getattr(occ, "yaw", 0.0), occ.s)]] = False
            masks.append(m.reshape(st.shape))
        return masks

    def mark_visible(self, model, K, T_c, occluders=()) -> int:
        """Unknown cells in view become free. Occupied cells never change."""
        changed = 0
        for st, m in zip(self.states, self.visible_masks(model, K, T_c, occluders)):
            new = m & (st == UNKNOWN)
            st[new] = FREE
            changed += int(new.sum())
        return changed

    def view_entropy(self, model, K, T_c, occluders=()) -> float:
        """Entropy of the cells a camera would see."""
        H = 0.0
        for st, m in zip(self.states, self.visible_masks(model, K, T_c, occluders)):
            H += float(STATE_H[st[m]].sum())
        return H


def object_entropy(grid: SurfaceGrid) -> tuple[float, float]:
    return grid.entropy()


# ---------------------------------------------------------------- utility


@dataclass
class ExploreConfig:
    max_steps: int = 10
    lam: float = 0.2
    radius: float = 0.85
    init_height: float = 0.6
    stop_entropy: float = 0.5
    stop_occupied: float = 0.5
    stop_volume_p: float = 0.8
    min_cells_visible: int = 1
    transit_step: float = 0.1  # spacing of tracking frames between chosen views, metres; 0 disables
    entropy_scope: str = "view"  # "view": cells the view sees; "object": the whole grid
    track_gap: int = 3  # lower bound on the association motion gap while exploring, frames
    seed: int = 0

    def __post_init__(self):
        if self.entropy_scope not in ("view", "object"):
            raise InvalidInput(f"unknown entropy_scope {self.entropy_scope!r}")
        if self.track_gap < 1:
            raise InvalidInput("track_gap must be >= 1")
        if self.transit_step < 0 or self.max_steps < 0:
            raise InvalidInput("transit_step and max_steps must be non-negative")


@dataclass
class ObjectState:
    grid: SurfaceGrid
    volumes: list = field(default_factory=list)
    done: bool = False


@dataclass
class ExplorationState:
    mapper: Mapper
    objects: dict = field(default_factory=dict)  # global id -> ObjectState
    step: int = 0
    pose: Pose | None = None
    visited: list = field(default_factory=list)
    n_frames: int = 0
    touched: set = field(default_factory=set)  # ids observed since the last chosen view

    def models(self) -> dict:
        return {gid: self.mapper.estimates[gid].model for gid in self.objects if gid in self.mapper.estimates}


def volume_pdf(history) -> float:
    """Standard-normal density at the z-score of the latest normalized volume (0.5 if degenerate)."""
    v = np.asarray(history, dtype=float)
    if len(v) < 3 or v.std() == 0:
        return 0.5
    z = (v[-1] - v.mean()) / v.std()
    return float(norm.pdf(z))


def volume_density(history) -> float:
    """Density of the latest normalized volume under a normal fitted to the history.

    Volumes are normalized by their mean, so the fit is scale free and a
    tight history gives a tall density. Zero with fewer than three entries,
    infinite when the history has no spread.
    """
    v = np.asarray(history, dtype=float)
    if len(v) < 3:
        return 0.0
    v = v / v.mean()
    sd = v.std()
    if sd == 0:
        return math.inf
    return float(norm.pdf(v[-1], loc=v.mean(), scale=sd))


def neg_plogp(p: float) -> float:
    return 0.0 if p <= 0 else float(-p * math.log2(p))


def _proj_box(model, K, T_c):
    V = cube_vertices(CubeModel(model.t, getattr(model, "yaw", 0.0), model.s))
    uv, ok = project_points(V, K, T_c)
    if not ok.all():
        return None
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    box = clamp_box(BBox2D(lo[0], lo[1], hi[0], hi[1]), K)
    return box if box.area > 0 else None


def _proj_boxes(models: dict, K, T_c) -> dict:
    return {gid: _proj_box(m, K, T_c) for gid, m in models.items()}


def iou_ratio(models: dict, gid: int, K, T_c, boxes: dict | None = None) -> float:
    """Mean IoU of one object's projected box with every other projected box."""
    boxes = boxes if boxes is not None else _proj_boxes(models, K, T_c)
    mine = boxes[gid]
    if mine is None:
        return 0.0
    ious = [bbox_iou(mine, b) for other, b in boxes.items() if other != gid and b is not None]
    return float(np.mean(ious)) if ious else 0.0


def _occluders(models: dict, boxes: dict, gid: int) -> list:
    """Other objects whose image box overlaps this one's (all of them when a box is unknown)."""
    mine = boxes[gid]
    return [models[o] for o in models
            if o != gid and (mine is None or boxes[o] is None or bbox_iou(mine, boxes[o]) > 0)]


def feature_vector(state: ExplorationState, gid: int, K, T_c) -> dict:
    st = state.objects[gid]
    H, Hbar = st.grid.entropy()
    vols = np.asarray(st.volumes, dtype=float)
    vbar = float(vols[-1] / vols.mean()) if len(vols) else 1.0
    return {"H_obj": H, "H_bar": Hbar, "R_o": st.grid.occupied_ratio(),
            "R_iou": iou_ratio(state.models(), gid, K, T_c), "V_bar": vbar, "s": 0 if st.done else 1}


def is_done(st: ObjectState, cfg: ExploreConfig) -> bool:
    _, Hbar = st.grid.entropy()
    explored = Hbar < cfg.stop_entropy or st.grid.occupied_ratio() > cfg.stop_occupied
    return bool(explored and volume_density(st.volumes) > cfg.stop_volume_p)


def view_utility(state: ExplorationState, K, T_c, lam: float = 0.2, scope: str = "view") -> float:
    """Sum over unfinished objects seen from the view of (1-R_o) H + lam (H_IoU + H_V).

    With ``scope`` "view" H is the entropy of the cells the view would
    observe; with "object" it is the entropy of the object's whole grid.
    """
    models = state.models()
    boxes = _proj_boxes(models, K, T_c)
    f = 0.0
    for gid, st in sorted(state.objects.items()):
        if st.done or gid not in models:
            continue
        m = models[gid]
        occ = _occluders(models, boxes, gid)
        masks = st.grid.visible_masks(m, K, T_c, occ)
        if not any(mk.any() for mk in masks):
            continue
        if scope == "object":
            H = st.grid.entropy()[0]
        else:
            H = sum(float(STATE_H[g[mk]].sum()) for g, mk in zip(st.grid.states, masks))
            if H <= 0:
                continue
        R_o = st.grid.occupied_ratio()
        h_iou = neg_plogp(iou_ratio(models, gid, K, T_c, boxes) / 2)
        h_v = neg_plogp(volume_pdf(st.volumes))
        f += (1 - R_o) * H + lam * (h_iou + h_v)
    return f


def select_nbv(state: ExplorationState, candidates: list[Pose], K, lam: float = 0.2, scope: str = "view") -> int:
    """Index of the best candidate; ties go to the shortest move, then the lowest index."""
    if not candidates:
        raise InvalidInput("no candidate views")
    here = state.pose.center if state.pose is not None else None
    best, best_key = 0, None
    for k, T in enumerate(candidates):
        f = view_utility(state, K, T, lam, scope)
        move = float(np.linalg.norm(T.center - here)) if here is not None else 0.0
        key = (-round(f, 9), round(move, 9), k)
        if best_key is None or key < best_key:
            best, best_key = k, key
    return best


# ---------------------------------------------------------------- exploration loop


@dataclass
class ExploreResult:
    policy: str
    map_file: ObjectMapFile
    trace: list  # dict rows, one per (step, object)
    steps: int
    final: dict  # eval_map report of the last step


TRACE_FIELDS = ("scene_seed", "policy", "step", "view", "obj_id", "label", "H_obj", "H_bar", "R_o",
                "done", "cde_cm", "yae_deg", "iou_2d", "iou_3d")


def transit_path(scene: SimScene, a: Pose, b: Pose, step: float) -> list[Pose]:
    """Poses from ``a`` (excluded) to ``b`` (excluded) along a sphere-like arc
    around the table centre, about ``step`` metres apart, looking at the centre."""
    if step <= 0:
        return []
    c = scene.center

    def sph(v):
        r = float(np.linalg.norm(v))
        return r, math.atan2(v[1], v[0]), math.asin(np.clip(v[2] / r, -1, 1))

    ra, aa, ea = sph(a.center - c)
    rb, ab, eb = sph(b.center - c)
    da = (ab - aa + math.pi) % (2 * math.pi) - math.pi
    length = math.hypot(ra * math.cos(ea) * da, ra * (eb - ea)) + abs(rb - ra)
    n = int(math.ceil(length / step))
    out = []
    for k in range(1, n):
        f = k / n
        r, az, el = ra + (rb - ra) * f, aa + da * f, ea + (eb - ea) * f
        eye = c + r * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        out.append(look_at_table(eye, scene))
    return out


def _track(state: ExplorationState, scene: SimScene, T_c: Pose):
    """Feed one frame to the mapper; returns the frame and its report."""
    frame = simulate_observation(scene, T_c, frame_id=state.n_frames)
    state.n_frames += 1
    report = state.mapper.step(frame)
    for keep, drop in report.merges:
        state.objects.pop(drop, None)
        if drop in state.touched:
            state.touched.discard(drop)
            state.touched.add(keep)
    for d in report.decisions:
        gid = d["matched"] if d["matched"] is not None else d["new_id"]
        if gid is not None:
            state.touched.add(gid)
    return frame, report


def _observe(state: ExplorationState, scene: SimScene, T_c: Pose, view_name: str, cfg: ExploreConfig):
    """Travel to a chosen view, then re-estimate touched objects and update the grids there."""
    mapper = state.mapper
    if state.pose is not None:
        for T in transit_path(scene, state.pose, T_c, cfg.transit_step):
            _track(state, scene, T)
    frame, report = _track(state, scene, T_c)
    pts_by_det = assign_points(frame, mapper.cfg.depth_gate)
    per_obj: dict[int, list] = {}
    for d in report.decisions:
        gid = d["matched"] if d["matched"] is not None else d["new_id"]
        if gid is None:
            continue
        for keep, drop in report.merges:
            if gid == drop:
                gid = keep
        per_obj.setdefault(gid, []).append(pts_by_det[d["local"]])
    for g in mapper.map:
        if g.id in state.touched or g.id not in mapper.estimates:
            mapper.refresh(g)
    state.touched = set()
    models = {g.id: mapper.estimates[g.id].model for g in mapper.map}
    boxes = _proj_boxes(models, frame.K, T_c)
    for g in mapper.map:
        st = state.objects.get(g.id)
        if st is None:
            st = state.objects[g.id] = ObjectState(SurfaceGrid(models[g.id].s))
        m = models[g.id]
        if g.id in per_obj:
            st.grid.mark_points(m, np.vstack(per_obj[g.id]))
        st.grid.mark_visible(m, frame.K, T_c, _occluders(models, boxes, g.id))
        st.volumes.append(m.volume)
        st.done = is_done(st, cfg)
    state.pose = T_c
    state.visited.append(view_name)


def _trace_rows(state: ExplorationState, scene: SimScene, policy: str, step: int) -> tuple[list, dict]:
    mf = state.mapper.map_file()
    report = eval_map(mf, scene.gt_map())
    by_est = {r["est_id"]: r for r in report["objects"]}
    rows = []
    for gid, st in sorted(state.objects.items()):
        H, Hbar = st.grid.entropy()
        r = by_est.get(gid, {})
        rows.append({
            "scene_seed": scene.seed, "policy": policy, "step": step, "view": state.visited[-1],
            "obj_id": gid, "label": state.mapper.map.objects[gid].label,
            "H_obj": H, "H_bar": Hbar, "R_o": st.grid.occupied_ratio(), "done": int(st.done),
            "cde_cm": r.get("cde_cm"), "yae_deg": r.get("yae_deg"),
            "iou_2d": r.get("iou_2d"), "iou_3d": r.get("iou_3d"),
        })
    return rows, report


def explore(scene: SimScene, policy: str = "nbv", cfg: ExploreConfig | None = None,
            assoc: AssociationConfig | None = None, param: ParamConfig | None = None) -> ExploreResult:
    """Four corner views, then up to ``max_steps`` views chosen by ``policy``."""
    if policy not in POLICIES:
        raise InvalidInput(f"unknown policy {policy!r}; expected one of {POLICIES}")
    cfg = cfg or ExploreConfig()
    assoc = assoc or AssociationConfig(seed=cfg.seed)
    assoc = replace(assoc, motion_max_gap=max(assoc.motion_max_gap, cfg.track_gap))
    mapper = Mapper(assoc, param or ParamConfig(seed=cfg.seed),
                    MappingConfig(n_param=0), seed=cfg.seed)
    state = ExplorationState(mapper)
    K = scene.K
    trace = []
    for k, T in enumerate(init_views(scene, cfg.init_height)):
        _observe(state, scene, T, f"init{k}", cfg)
    rows, report = _trace_rows(state, scene, policy, 0)
    trace += rows

    cands = candidate_views(scene, cfg.radius)
    names = [f"cand{k}" for k in range(len(cands))]
    init_names = {f"cand{len(cands) - 4 + k}" for k in range(4)}  # corner views already taken
    sweep = coverage_views(scene, cfg.init_height, cfg.max_steps)
    rng = np.random.default_rng([cfg.seed, scene.seed, 5])
    steps = 0
    for step in range(1, cfg.max_steps + 1):
        if policy == "init":
            break
        if all(st.done for st in state.objects.values()):
            break
        if policy == "coverage":
            if step > len(sweep):
                break
            T, name = sweep[step - 1], f"sweep{step - 1}"
        else:
            open_idx = [k for k in range(len(cands)) if names[k] not in state.visited and names[k] not in init_names]
            if not open_idx:
                break
            if policy == "random":
                k = open_idx[int(rng.integers(len(open_idx)))]
            else:
                k = open_idx[select_nbv(state, [cands[i] for i in open_idx], K, cfg.lam, cfg.entropy_scope)]
            T, name = cands[k], names[k]
        _observe(state, scene, T, name, cfg)
        steps = step
        rows, report = _trace_rows(state, scene, policy, step)
        trace += rows
    return ExploreResult(policy, state.mapper.map_file({"policy": policy, "scene_seed": scene.seed}), trace, steps, report)


def entropy_violations(trace) -> list[tuple]:
    """(obj_id, step) pairs where an object's normalized entropy went up."""
    last: dict = {}
    bad = []
    for r in sorted(trace, key=lambda r: (r["obj_id"], r["step"])):
        prev = last.get(r["obj_id"])
        if prev is not None and r["H_bar"] > prev + 1e-12:
            bad.append((r["obj_id"], r["step"]))
        last[r["obj_id"]] = r["H_bar"]
    return bad
