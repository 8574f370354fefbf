"""Synthetic data: room sequences for association, map pairs for relocalization,
line-segment views for orientation."""

from __future__ import annotations

import math

import numpy as np

from .exploration import SimObject, SimScene, simulate_observation
from .geometry import (
    CUBE_EDGES,
    CameraIntrinsics,
    CubeModel,
    Pose,
    cube_vertices,
    project_points,
    visible_edges,
    wrap_half_pi,
)
from .io import Frame
from .parameterization import View
from .topomap import TopoNode, apply_similarity

# ---------------------------------------------------------------- room sequences

ROOM_LABELS = {
    # label: (shape, half extents)
    "chair": ("box", (0.25, 0.25, 0.45)),
    "monitor": ("box", (0.27, 0.06, 0.2)),
    "tv": ("box", (0.5, 0.06, 0.32)),
    "book": ("box", (0.12, 0.08, 0.03)),
    "keyboard": ("box", (0.22, 0.08, 0.02)),
    "laptop": ("box", (0.17, 0.12, 0.1)),
    "box": ("box", (0.15, 0.12, 0.12)),
    "cabinet": ("box", (0.3, 0.22, 0.4)),
    "bottle": ("cylinder", (0.04, 0.04, 0.12)),
    "cup": ("cylinder", (0.045, 0.045, 0.06)),
    "plant": ("cylinder", (0.15, 0.15, 0.3)),
}


def room_scene(seed: int, n_objects: int, size=None) -> SimScene:
    """Office-like cluster: objects on desks and on the floor inside a rectangle
    the camera orbits. The default area grows with the object count."""
    rng = np.random.default_rng([seed, 21])
    W, H = size if size is not None else (0.8 * math.sqrt(n_objects), 0.6 * math.sqrt(n_objects))
    labels = sorted(ROOM_LABELS)
    objs: list[SimObject] = []
    tries = 0
    while len(objs) < n_objects and tries < 50000:
        tries += 1
        lab = labels[int(rng.integers(len(labels)))]
        shape, base = ROOM_LABELS[lab]
        s = np.array(base) * rng.uniform(0.85, 1.15)
        if shape == "cylinder":
            s[1] = s[0]
        xy = rng.uniform([0.1, 0.1], [W - 0.1, H - 0.1])
        rad = math.hypot(s[0], s[1])
        if any(math.hypot(*(xy - o.t[:2])) < rad + math.hypot(o.s[0], o.s[1]) + 0.05 for o in objs):
            continue
        z = s[2] + (0.0 if lab in ("chair", "cabinet", "plant", "tv") else float(rng.choice([0.0, 0.4, 0.75])))
        yaw = float(rng.uniform(-math.pi / 2, math.pi / 2)) if shape == "box" else 0.0
        objs.append(SimObject(lab, shape, [xy[0], xy[1], z], yaw, s, float(rng.uniform(0.03, 0.08))))
    return SimScene((0.0, 0.0, W, H), objs, seed, point_noise=0.01, table_texture=0.002,
                    pixel_noise=2.0, segment_noise=1.0, feature_prob=0.7, dropout=0.15, min_box=24.0)


def room_trajectory(scene: SimScene, n_frames: int, loops: float = 1.1, height: float = 1.5,
                    margin: float = 1.2) -> list[Pose]:
    """Elliptic hand-held loop outside the cluster, looking inwards with a slow pan."""
    x0, y0, x1, y1 = scene.table
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    a, b = (x1 - x0) / 2 + margin, (y1 - y0) / 2 + margin
    poses = []
    for k in range(n_frames):
        phi = 2 * math.pi * loops * k / max(n_frames - 1, 1)
        eye = np.array([c[0] + a * math.cos(phi), c[1] + b * math.sin(phi), height])
        pan = 0.6 * math.sin(3 * phi)
        target = np.array([c[0] + pan * math.sin(phi), c[1] - pan * math.cos(phi), 0.3])
        poses.append(Pose.look_at(eye, target))
    return poses


def association_sequence(seed: int, n_objects: int, n_frames: int = 300) -> tuple[list[Frame], SimScene]:
    """Room sequence with occlusions, detector dropouts and intermittent features."""
    scene = room_scene(seed, n_objects)
    frames = [simulate_observation(scene, T, k) for k, T in enumerate(room_trajectory(scene, n_frames))]
    return frames, scene


def table_orbit(scene: SimScene, n_frames: int = 60, sweep: float = math.pi, radius: float = 0.8,
                elevation: float = 45.0) -> list[Frame]:
    """Smooth half orbit around a table scene, one frame per pose."""
    e = math.radians(elevation)
    frames = []
    for k, a in enumerate(np.linspace(0.0, sweep, n_frames)):
        eye = scene.center + radius * np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])
        frames.append(simulate_observation(scene, Pose.look_at(eye, scene.center), k))
    return frames


def observed_gt(frames: list[Frame], scene: SimScene) -> int:
    """Number of GT objects detected at least once (the count an ideal associator reaches)."""
    seen = set()
    centers = np.array([o.t for o in scene.objects])
    for fr in frames:
        uv, ok = project_points(centers, fr.K, fr.T_c)
        for d in fr.detections:
            # detections carry no ids; the GT whose projected centre is nearest the box centre
            dist = np.linalg.norm(uv - np.array(d.bbox.center), axis=1)
            dist[~ok] = np.inf
            labels = np.array([o.label for o in scene.objects])
            dist[labels != d.label] = np.inf
            if np.isfinite(dist).any():
                seen.add(int(np.argmin(dist)))
    return len(seen)


# object counts of the five association sequences
ASSOC_PROTOCOL = ((0, 10), (1, 18), (2, 27), (3, 36), (4, 45))


def count_objects(frames: list[Frame], strategy: str = "ensemble", **assoc) -> int:
    """Final number of map objects after associating a whole sequence."""
    from .association import AssociationConfig
    from .mapping import Mapper, MappingConfig
    m = Mapper(AssociationConfig(strategy=strategy, **assoc), mapping=MappingConfig(n_param=0))
    for fr in frames:
        m.step(fr)
    return len(m.map)


# ---------------------------------------------------------------- relocalization trials

RELOC_LABELS = ["book", "cup", "keyboard", "monitor", "chair", "bottle", "laptop", "mouse"]
RELOC_SIZES = {
    "book": (0.12, 0.08, 0.02), "cup": (0.04, 0.04, 0.05), "keyboard": (0.22, 0.07, 0.015),
    "monitor": (0.25, 0.05, 0.2), "chair": (0.25, 0.25, 0.45), "bottle": (0.04, 0.04, 0.12),
    "laptop": (0.17, 0.12, 0.015), "mouse": (0.05, 0.03, 0.02),
}
RELOC_QUADRICS = ("cup", "bottle")
# shared-object ratio (%) -> (shared k, objects per map M), k / (2M - k) ~ ratio
RELOC_PROTOCOL = {60: (6, 10), 55: (6, 11), 50: (5, 10), 44: (4, 9), 38: (3, 8), 33: (3, 9)}


def reloc_scene(rng, n: int, area=(4.0, 3.0), min_sep: float = 0.3) -> list[TopoNode]:
    labels = rng.choice(RELOC_LABELS, n)
    pts: list[np.ndarray] = []
    while len(pts) < n:
        p = rng.uniform([0, 0], area)
        if all(np.hypot(*(p - q)) > min_sep for q in pts):
            pts.append(p)
    objs = []
    for k, (lab, p) in enumerate(zip(labels, pts)):
        s = np.array(RELOC_SIZES[lab]) * rng.uniform(0.8, 1.2)
        kind = "quadric" if lab in RELOC_QUADRICS else "cube"
        yaw = 0.0 if kind == "quadric" else float(rng.uniform(-math.pi / 2, math.pi / 2))
        objs.append(TopoNode(k, str(lab), np.array([p[0], p[1], rng.uniform(0, 1)]), yaw, s, kind))
    objs.sort(key=lambda o: o.t[0])
    return objs


def reloc_trial(seed: int, k: int, M: int, noise: float = 0.0):
    """Prior map = first M objects along x, query = last M (k shared), query moved by a random similarity.

    Returns (prior nodes, query nodes, (rho, yaw, t), shared prior ids).
    """
    rng = np.random.default_rng(seed)
    objs = reloc_scene(rng, 2 * M - k)
    prior, query = objs[:M], objs[M - k:]
    rho = float(rng.uniform(0.5, 2.0))
    yaw = float(rng.uniform(-math.pi, math.pi))
    t = rng.uniform(-5, 5, 3)
    perm = rng.permutation(len(query))
    moved = []
    for new_id, o in zip(perm, query):
        y = wrap_half_pi(o.yaw + yaw) if o.kind == "cube" else 0.0
        p = apply_similarity(rho, yaw, t, o.t[None])[0]
        if noise:
            p = p + rng.normal(0, noise, 3)
        moved.append(TopoNode(int(new_id) + 100, o.label, p, y, o.s * rho, o.kind))
    return prior, moved, (rho, yaw, t), [o.id for o in prior[M - k:]]


# ---------------------------------------------------------------- orientation views

DEFAULT_K = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


def yaw_views(seed: int, yaw: float, noise_deg: float = 0.0, n_views: int = 10,
              s=(0.2, 0.12, 0.08), K: CameraIntrinsics = DEFAULT_K):
    """Views of a cube on the ground from random elevated viewpoints.

    Each visible edge becomes one segment; with ``noise_deg`` the segment is
    rotated about its midpoint by a normal angle of that spread.
    Returns (t, s, views).
    """
    rng = np.random.default_rng(seed)
    s = np.asarray(s, dtype=float)
    t = np.array([0.0, 0.0, s[2]])
    cube = CubeModel(t, yaw, s)
    V = cube_vertices(cube)
    views = []
    for _ in range(n_views):
        az = rng.uniform(0, 2 * math.pi)
        el = rng.uniform(0.4, 1.0)
        r = rng.uniform(0.8, 1.2)
        eye = t + r * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        T = Pose.look_at(eye, t)
        uv, _ = project_points(V, K, T)
        segs = []
        for (a, b), vis in zip(CUBE_EDGES, visible_edges(t, yaw, s, eye)):
            if not vis:
                continue
            p, q = uv[a], uv[b]
            if noise_deg:
                m, d = (p + q) / 2, (q - p) / 2
                ang = math.radians(rng.normal(0, noise_deg))
                c, sn = math.cos(ang), math.sin(ang)
                d = np.array([c * d[0] - sn * d[1], sn * d[0] + c * d[1]])
                p, q = m - d, m + d
            segs.append([*p, *q])
        views.append(View(K, T, np.array(segs).reshape(-1, 4)))
    return t, s, views
