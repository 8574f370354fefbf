"""Projective and box geometry.

Conventions: world frame is z-up. Camera poses map world -> camera
(``x_c = R x_w + t``), the camera looks along +z with x right and y down.

Cube vertex ordering is the bit pattern of the signs of (l, w, h):

    k = 4*bl + 2*bw + bh,  offset = (±s_l, ±s_w, ±s_h) with + where the bit is set

so vertex 0 is (-,-,-) and vertex 7 is (+,+,+). Edges join vertices that
differ in exactly one bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NoVisiblePoints

EPS_Z = 1e-6


def yaw_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_half_pi(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2) using the 180 degree box symmetry."""
    return (theta + math.pi / 2) % math.pi - math.pi / 2


def wrap_pi(theta):
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInput("pose contains non-finite values")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """World->camera pose for a camera at ``eye`` looking at ``target``."""
        eye = np.asarray(eye, dtype=float)
        fwd = np.asarray(target, dtype=float) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=float)
        if abs(np.dot(fwd, up)) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])  # rows: camera axes in world
        return cls(R, -R @ eye)

    def is_orthonormal(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.linalg.norm(R.T @ R - np.eye(3)) < tol and np.linalg.det(R) > 0)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (for world->camera poses)."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInput("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True)
class BBox2D:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise InvalidInput(f"malformed box {self.as_list()}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def contains(self, uv, margin: float = 0.0) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        return (
            (uv[:, 0] >= self.xmin - margin)
            & (uv[:, 0] <= self.xmax + margin)
            & (uv[:, 1] >= self.ymin - margin)
            & (uv[:, 1] <= self.ymax + margin)
        )


@dataclass(frozen=True)
class LineSegment2D:
    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        a = tuple(float(v) for v in self.p0)
        b = tuple(float(v) for v in self.p1)
        if a == b:
            raise InvalidInput("degenerate segment")
        object.__setattr__(self, "p0", a)
        object.__setattr__(self, "p1", b)

    def reversed(self) -> "LineSegment2D":
        return LineSegment2D(self.p1, self.p0)

    def as_list(self) -> list[float]:
        return [*self.p0, *self.p1]


@dataclass(frozen=True)
class CubeModel:
    t: np.ndarray
    yaw: float
    s: np.ndarray
    kind: str = field(default="cube", init=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        s = np.asarray(self.s, dtype=float).reshape(3)
        if np.any(s <= 0):
            raise InvalidInput("cube half-extents must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "yaw", wrap_half_pi(float(self.yaw)))

    @property
    def volume(self) -> float:
        return float(8 * np.prod(self.s))


@dataclass(frozen=True)
class QuadricModel:
    t: np.ndarray
    s: np.ndarray
    kind: str = field(default="quadric", init=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        s = np.asarray(self.s, dtype=float).reshape(3)
        if np.any(s <= 0):
            raise InvalidInput("quadric semiaxes must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @property
    def yaw(self) -> float:
        return 0.0

    @property
    def volume(self) -> float:
        return float(8 * np.prod(self.s))

    def dual_matrix(self) -> np.ndarray:
        """Q_w = T Q_o T^T with Q_o = diag(s_l^2, s_w^2, s_h^2, -1)."""
        T = np.eye(4)
        T[:3, 3] = self.t
        Qo = np.diag([*(self.s**2), -1.0])
        return T @ Qo @ T.T


_BITS = np.array([[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)])
UNIT_VERTICES = 2.0 * _BITS - 1.0
CUBE_EDGES = np.array(
    [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
)


def cube_vertices(c) -> np.ndarray:
    """Eight world vertices ``R(yaw) P_o + t`` in bit-pattern order."""
    Po = UNIT_VERTICES * np.asarray(c.s)
    return Po @ yaw_matrix(c.yaw).T + np.asarray(c.t)


def cube_edges(c) -> np.ndarray:
    """Vertex-index pairs of the 12 cube edges (independent of ``c``)."""
    return CUBE_EDGES.copy()


def project_points(P, K: CameraIntrinsics, T_c: Pose):
    """Vectorised pinhole projection.

    Returns ``(uv, valid)`` where ``valid`` marks points with camera depth above
    ``EPS_Z``; ``uv`` rows for invalid points are NaN.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(P)):
        raise InvalidInput("non-finite point")
    Pc = P @ T_c.rotation.T + T_c.translation
    z = Pc[:, 2]
    valid = z > EPS_Z
    uv = np.full((len(P), 2), np.nan)
    zv = z[valid]
    uv[valid, 0] = K.fx * Pc[valid, 0] / zv + K.cx
    uv[valid, 1] = K.fy * Pc[valid, 1] / zv + K.cy
    return uv, valid


def project_point(p, K: CameraIntrinsics, T_c: Pose):
    """Project one world point; ``None`` when it lies behind the camera."""
    uv, valid = project_points(p, K, T_c)
    return uv[0] if valid[0] else None


def bbox_iou(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def segment_angle(seg: LineSegment2D) -> float:
    dx = seg.p1[0] - seg.p0[0]
    dy = seg.p1[1] - seg.p0[1]
    if dx == 0 and dy == 0:
        raise InvalidInput("degenerate segment")
    ang = math.atan2(dy, dx) % math.pi
    # atan2 of the reversed direction differs by exactly pi; modulo keeps it equal
    return 0.0 if ang >= math.pi else ang


def segment_angles(segs) -> np.ndarray:
    """Vectorised ``segment_angle`` for an (n, 4) array of x0, y0, x1, y1."""
    segs = np.asarray(segs, dtype=float).reshape(-1, 4)
    ang = np.arctan2(segs[:, 3] - segs[:, 1], segs[:, 2] - segs[:, 0]) % np.pi
    ang[ang >= np.pi] = 0.0
    return ang


def angle_diff(a, b):
    """Smallest difference between undirected line angles, in [0, pi/2]."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % np.pi
    return np.minimum(d, np.pi - d)


def clamp_box(box: BBox2D, K: CameraIntrinsics) -> BBox2D:
    x0 = min(max(box.xmin, 0.0), K.width)
    x1 = min(max(box.xmax, 0.0), K.width)
    y0 = min(max(box.ymin, 0.0), K.height)
    y1 = min(max(box.ymax, 0.0), K.height)
    return BBox2D(x0, y0, x1, y1)


def project_bbox(points, K: CameraIntrinsics, T_c: Pose) -> BBox2D:
    uv, valid = project_points(points, K, T_c)
    if not valid.any():
        raise NoVisiblePoints("all points are behind the camera")
    uv = uv[valid]
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    return clamp_box(BBox2D(lo[0], lo[1], hi[0], hi[1]), K)


def box_face_normals(yaw: float) -> np.ndarray:
    """Outward normals of the (+x, -x, +y, -y, +z, -z) faces of a yawed box."""
    R = yaw_matrix(yaw)
    n = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    return n @ R.T


# faces listed as (axis, sign); each edge borders two faces
_FACES = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]


def _edge_faces():
    out = []
    for a, b in CUBE_EDGES:
        fixed = [ax for ax in range(3) if _BITS[a][ax] == _BITS[b][ax]]
        faces = []
        for ax in fixed:
            sign = 1 if _BITS[a][ax] else -1
            faces.append(_FACES.index((ax, sign)))
        out.append(faces)
    return np.array(out)


EDGE_FACES = _edge_faces()


def visible_faces(t, yaw, s, eye) -> np.ndarray:
    """Boolean mask over the 6 faces whose outward side faces ``eye``."""
    normals = box_face_normals(yaw)
    R = yaw_matrix(yaw)
    offsets = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    centers = (offsets * np.asarray(s)) @ R.T + np.asarray(t)
    return np.einsum("ij,ij->i", normals, np.asarray(eye) - centers) > 0


def visible_edges(t, yaw, s, eye) -> np.ndarray:
    """Mask over the 12 edges that border at least one camera-facing face."""
    vf = visible_faces(t, yaw, s, eye)
    return vf[EDGE_FACES].any(axis=1)


def segment_ray_hits_box(origin, points, t, yaw, s, margin: float = 0.0) -> np.ndarray:
    """Slab test: does the open segment origin->point pass through the box?

    The endpoint itself is excluded (a small tolerance keeps surface points
    of the box from occluding themselves).
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    R = yaw_matrix(yaw)
    o = (np.asarray(origin, dtype=float) - np.asarray(t)) @ R
    q = (P - np.asarray(t)) @ R
    d = q - o
    half = np.asarray(s, dtype=float) + margin
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # zero direction component: inside slab iff origin inside
    zero = d == 0
    inside = np.abs(o) <= half
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
    enter = tmin.max(axis=1)
    leave = tmax.min(axis=1)
    return (enter <= leave) & (leave > 0) & (enter < 1 - 1e-6)
