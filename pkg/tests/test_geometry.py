import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objslam.errors import InvalidInput, NoVisiblePoints
from objslam.geometry import (
    CUBE_EDGES,
    BBox2D,
    CameraIntrinsics,
    CubeModel,
    LineSegment2D,
    Pose,
    QuadricModel,
    angle_diff,
    bbox_iou,
    cube_vertices,
    project_bbox,
    project_point,
    project_points,
    segment_angle,
    segment_ray_hits_box,
    visible_edges,
    visible_faces,
    wrap_half_pi,
    yaw_matrix,
)

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)

finite = st.floats(-100, 100, allow_nan=False)
angles = st.floats(-10, 10, allow_nan=False)


def test_identity_projects_to_principal_point():
    assert np.allclose(project_point([0, 0, 1], K, Pose.identity()), [320, 240])


def test_point_behind_camera_is_invalid():
    uv, ok = project_points([[0, 0, -1], [0, 0, 0], [1, 0, 2]], K, Pose.identity())
    assert ok.tolist() == [False, False, True]
    assert np.isnan(uv[0]).all()
    assert project_point([0, 0, -1], K, Pose.identity()) is None


def test_project_bbox_all_behind():
    with pytest.raises(NoVisiblePoints):
        project_bbox([[0, 0, -1]], K, Pose.identity())


def test_project_bbox_is_clamped():
    box = project_bbox([[-10, -10, 1], [10, 10, 1]], K, Pose.identity())
    assert box.as_list() == [0, 0, 640, 480]


def test_intrinsics_validation():
    with pytest.raises(InvalidInput):
        CameraIntrinsics(-1, 1, 0, 0, 10, 10)
    with pytest.raises(InvalidInput):
        CameraIntrinsics(1, 1, 20, 0, 10, 10)


def test_pose_rejects_nan():
    with pytest.raises(InvalidInput):
        Pose(np.full((3, 3), np.nan), np.zeros(3))


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite))
def test_look_at_is_orthonormal_and_centred(eye, target):
    eye, target = np.array(eye), np.array(target)
    if np.linalg.norm(target - eye) < 1e-3:
        return
    T = Pose.look_at(eye, target)
    assert T.is_orthonormal(1e-8)
    assert np.allclose(T.center, eye, atol=1e-8)
    # the target sits on the optical axis
    assert np.allclose(T.apply(target)[:2], 0, atol=1e-6 * (1 + np.abs(target - eye).max()))


def test_pose_inverse_compose():
    T = Pose.look_at([1, 2, 3], [0, 0, 0])
    I = T.compose(T.inverse())
    assert np.allclose(I.rotation, np.eye(3)) and np.allclose(I.translation, 0)


def test_bbox_iou_cases():
    a = BBox2D(0, 0, 10, 10)
    assert bbox_iou(a, a) == 1.0
    assert bbox_iou(a, BBox2D(20, 20, 30, 30)) == 0.0
    assert bbox_iou(a, BBox2D(5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert bbox_iou(BBox2D(0, 0, 0, 0), BBox2D(0, 0, 0, 0)) == 0.0
    with pytest.raises(InvalidInput):
        BBox2D(1, 0, 0, 1)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=8, max_size=8))
def test_bbox_iou_symmetric_bounded(v):
    a = BBox2D(min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]), max(v[2], v[3]))
    b = BBox2D(min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]), max(v[6], v[7]))
    iou = bbox_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == bbox_iou(b, a)


def test_segment_angle_direction_free():
    s = LineSegment2D((0, 0), (1, 1))
    assert segment_angle(s) == pytest.approx(math.pi / 4)
    assert segment_angle(s.reversed()) == pytest.approx(math.pi / 4)
    assert segment_angle(LineSegment2D((1, 0), (0, 0))) == 0.0
    with pytest.raises(InvalidInput):
        LineSegment2D((1, 1), (1, 1))


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_segment_angle_range(x0, y0, x1, y1):
    if (x0, y0) == (x1, y1):
        return
    a = segment_angle(LineSegment2D((x0, y0), (x1, y1)))
    assert 0.0 <= a < math.pi


def test_angle_diff():
    assert angle_diff(0.0, math.pi - 0.1) == pytest.approx(0.1)
    assert angle_diff(0.0, math.pi / 2) == pytest.approx(math.pi / 2)


@given(angles)
def test_wrap_half_pi_range_and_symmetry(theta):
    w = wrap_half_pi(theta)
    assert -math.pi / 2 <= w < math.pi / 2
    assert math.isclose(math.cos(2 * w), math.cos(2 * theta), abs_tol=1e-9)


def test_cube_vertices_bit_pattern():
    c = CubeModel([1, 2, 3], 0.0, [0.5, 0.25, 0.125])
    V = cube_vertices(c)
    assert np.allclose(V[0], [0.5, 1.75, 2.875])
    assert np.allclose(V[7], [1.5, 2.25, 3.125])
    assert len(CUBE_EDGES) == 12
    for a, b in CUBE_EDGES:
        assert bin(a ^ b).count("1") == 1


@given(angles)
def test_cube_vertices_rotate_about_center(yaw):
    c = CubeModel([0.3, -0.2, 0.1], yaw, [0.2, 0.1, 0.05])
    V = cube_vertices(c)
    assert np.allclose(V.mean(axis=0), c.t)
    d = V - c.t
    assert np.allclose(np.sort(np.linalg.norm(d, axis=1)), np.linalg.norm(c.s))


def test_model_validation():
    with pytest.raises(InvalidInput):
        CubeModel([0, 0, 0], 0.0, [1, 0, 1])
    with pytest.raises(InvalidInput):
        QuadricModel([0, 0, 0], [1, 1, -1])
    assert CubeModel([0, 0, 0], math.pi, [1, 1, 1]).yaw == pytest.approx(0.0)


def test_quadric_dual_matrix():
    q = QuadricModel([1, 2, 3], [1, 2, 3])
    Q = q.dual_matrix()
    assert np.allclose(Q, Q.T)
    # a plane tangent to the ellipsoid satisfies pi^T Q pi = 0: x = 1 + 1
    pi = np.array([1.0, 0, 0, -2.0])
    assert pi @ Q @ pi == pytest.approx(0.0)


def test_visible_faces_from_above():
    vf = visible_faces([0, 0, 0], 0.0, [1, 1, 1], [0, 0, 10])
    assert vf.tolist() == [False, False, False, False, True, False]
    ve = visible_edges([0, 0, 0], 0.0, [1, 1, 1], [0, 0, 10])
    assert ve.sum() == 4


def test_segment_ray_hits_box():
    hit = segment_ray_hits_box([0, 0, 5], [[0, 0, -5], [3, 0, 0], [0, 0, 1]], [0, 0, 0], 0.0, [1, 1, 1])
    # through the box, beside it, and ending on its top face
    assert hit.tolist() == [True, False, False]
