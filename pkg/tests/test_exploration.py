import math
from types import SimpleNamespace

import numpy as np
import pytest

from objslam.errors import InvalidInput
from objslam.exploration import (
    OCCUPIED,
    P_OCC,
    UNKNOWN,
    ExploreConfig,
    ExplorationState,
    ObjectState,
    SimObject,
    SimScene,
    SurfaceGrid,
    entropy_violations,
    explore,
    grid_entropy,
    init_views,
    iou_ratio,
    neg_plogp,
    random_scene,
    select_nbv,
    simulate_observation,
    transit_path,
    view_utility,
    volume_density,
    volume_pdf,
)
from objslam.geometry import CubeModel, Pose

TABLE = (0.0, 0.0, 1.0, 0.7)


def lone_cube(**kw):
    o = SimObject("book", "box", [0.5, 0.35, 0.05], 0.0, [0.1, 0.07, 0.05], 0.8)
    return SimScene(TABLE, [o], seed=1, table_texture=0.0, **kw)


def fake_state(models: dict, grids: dict, volumes=None) -> ExplorationState:
    mapper = SimpleNamespace(estimates={k: SimpleNamespace(model=m) for k, m in models.items()})
    st = ExplorationState(mapper)
    for k, g in grids.items():
        st.objects[k] = ObjectState(g, list(volumes or []))
    return st


def test_grid_entropy_values():
    assert grid_entropy(0.5) == 1.0
    assert grid_entropy(0.0) == 0.0 and grid_entropy(1.0) == 0.0
    assert grid_entropy(P_OCC) == pytest.approx(0.0808, abs=1e-4)
    with pytest.raises(InvalidInput):
        grid_entropy([0.2, 1.5])


def _hundred_cell_grid():
    # faces: 2*(2*12) + 2*(2*12) + 2*2 = 100 cells at 1 cm
    g = SurfaceGrid([0.01, 0.01, 0.06])
    assert g.total == 100
    return g


def test_normalized_entropy_example():
    g = _hundred_cell_grid()
    flat = np.concatenate([s.ravel() for s in g.states])
    flat[:60] = OCCUPIED
    k = 0
    for s in g.states:
        s.ravel()[:] = flat[k:k + s.size]
        k += s.size
    H, Hbar = g.entropy()
    expected = (40 * 1.0 + 60 * float(grid_entropy(P_OCC))) / 100
    assert Hbar == pytest.approx(expected) and Hbar == pytest.approx(0.4485, abs=1e-4)
    assert H == pytest.approx(100 * expected)


def test_fresh_grid_is_one_bit_per_cell():
    g = SurfaceGrid([0.1, 0.07, 0.05])
    assert g.entropy()[1] == 1.0 and g.occupied_ratio() == 0.0


def test_grid_updates_are_monotone():
    m = CubeModel([0.0, 0.0, 0.05], 0.0, [0.1, 0.07, 0.05])
    g = SurfaceGrid(m.s)
    top = Pose.look_at([0, 0, 1.0], [0, 0, 0], up=(0.0, 1.0, 0.0))
    freed = g.mark_visible(m, lone_cube().K, top)
    # only the top face faces the camera
    assert freed == g.states[4].size
    assert (g.states[4] != UNKNOWN).all() and all((s == UNKNOWN).all() for s in g.states[:4])
    # a point on the top face upgrades a free cell; seeing it again never downgrades it
    g.mark_points(m, [[0.0, 0.0, 0.1]])
    before = [s.copy() for s in g.states]
    assert g.mark_visible(m, lone_cube().K, top) == 0
    assert all(np.array_equal(a, b) for a, b in zip(before, g.states))
    assert (g.states[4] == OCCUPIED).sum() == 1


def test_every_cell_hit_gives_zero_entropy():
    m = CubeModel([0.0, 0.0, 0.0], 0.0, [0.02, 0.02, 0.02])
    g = SurfaceGrid(m.s)
    for C in g.cell_centers(m):
        g.mark_points(m, C)
    assert g.occupied_ratio() == 1.0
    assert g.entropy()[1] == pytest.approx(float(grid_entropy(P_OCC)))


def test_volume_terms():
    assert volume_pdf([1.0]) == 0.5
    assert volume_pdf([1.0, 1.0, 1.0]) == 0.5
    assert volume_pdf([1.0, 2.0, 1.5]) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert volume_density([1.0, 1.0]) == 0.0
    assert volume_density([2.0, 2.0, 2.0]) == math.inf
    # a tight history is converged, a wide one is not
    assert volume_density([1.0, 1.02, 0.99, 1.01]) > 0.8
    assert volume_density([1.0, 3.0, 0.4, 2.0]) < 0.8
    assert neg_plogp(0.0) == 0.0 and neg_plogp(0.5) == 0.5


def test_view_utility_single_object_example():
    m = CubeModel([0.0, 0.0, 0.06], 0.0, [0.01, 0.01, 0.06])
    g = _hundred_cell_grid()
    T = Pose.look_at([0.3, 0.2, 0.4], [0, 0, 0.06])
    st = fake_state({0: m}, {0: g})
    K = lone_cube().K
    lam = 0.2
    # lone object: no IoU term; empty history: pdf clamped to 0.5
    assert iou_ratio(st.models(), 0, K, T) == 0.0
    assert view_utility(st, K, T, lam, scope="object") == pytest.approx(100 + lam * (0 + 0.5))
    seen = sum(int(mk.sum()) for mk in g.visible_masks(m, K, T))
    assert 0 < seen < 100
    assert view_utility(st, K, T, lam) == pytest.approx(seen + lam * 0.5)


def test_view_utility_zero_cases():
    m = CubeModel([0.0, 0.0, 0.05], 0.0, [0.1, 0.07, 0.05])
    K = lone_cube().K
    st = fake_state({0: m}, {0: SurfaceGrid(m.s)})
    away = Pose.look_at([0, 0, 1.0], [0, 0, 2.0], up=(0.0, 1.0, 0.0))
    assert view_utility(st, K, away) == 0.0
    st.objects[0].done = True
    assert view_utility(st, K, Pose.look_at([0.3, 0.2, 0.4], [0, 0, 0])) == 0.0


def test_coincident_boxes_iou_one():
    m = CubeModel([0.0, 0.0, 0.05], 0.0, [0.1, 0.07, 0.05])
    T = Pose.look_at([0.3, 0.2, 0.4], [0, 0, 0])
    assert iou_ratio({0: m, 1: m}, 0, lone_cube().K, T) == pytest.approx(1.0)


def test_select_nbv():
    m = CubeModel([0.0, 0.0, 0.05], 0.0, [0.1, 0.07, 0.05])
    K = lone_cube().K
    st = fake_state({0: m}, {0: SurfaceGrid(m.s)})
    sees = Pose.look_at([0.3, 0.2, 0.4], [0, 0, 0])
    blind = Pose.look_at([0, 0, 1.0], [0, 0, 2.0], up=(0.0, 1.0, 0.0))
    assert select_nbv(st, [sees], K) == 0
    assert select_nbv(st, [blind, sees], K) == 1
    assert select_nbv(st, [sees, blind], K) == 0
    with pytest.raises(InvalidInput):
        select_nbv(st, [], K)


def test_top_view_sees_only_top_face():
    sc = lone_cube(point_noise=0.0, pixel_noise=0.0, segment_noise=0.0)
    T = Pose.look_at([0.5, 0.35, 1.0], [0.5, 0.35, 0.0], up=(0.0, 1.0, 0.0))
    fr = simulate_observation(sc, T)
    assert [d.label for d in fr.detections] == ["book"]
    assert len(fr.points) > 0
    assert np.allclose(fr.points[:, 4], 0.1)


def test_hidden_object_not_detected():
    tall = SimObject("box", "box", [0.5, 0.35, 0.3], 0.0, [0.1, 0.1, 0.3], 0.5)
    small = SimObject("cup", "cylinder", [0.75, 0.35, 0.04], 0.0, [0.03, 0.03, 0.04], 0.5)
    sc = SimScene(TABLE, [tall, small], seed=0)
    # grazing view from the far side of the tall box
    T = Pose.look_at([-1.0, 0.35, 0.15], [0.75, 0.35, 0.04])
    labels = [d.label for d in simulate_observation(sc, T).detections]
    assert labels == ["box"]
    alone = SimScene(TABLE, [small], seed=0)
    assert [d.label for d in simulate_observation(alone, T).detections] == ["cup"]


def test_observation_is_deterministic():
    sc = random_scene(3)
    T = init_views(sc)[0]
    a, b = simulate_observation(sc, T, 5), simulate_observation(sc, T, 5)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.segments, b.segments)
    assert [d.bbox.as_list() for d in a.detections] == [d.bbox.as_list() for d in b.detections]


def test_scene_round_trip():
    sc = random_scene(2)
    again = SimScene.from_dict(sc.to_dict())
    assert again.to_dict() == sc.to_dict()
    with pytest.raises(InvalidInput):
        SimScene.from_dict({"objects": []})


def test_transit_path():
    sc = random_scene(0)
    a, b = init_views(sc)[:2]
    path = transit_path(sc, a, b, 0.1)
    assert len(path) >= 5
    steps = np.diff(np.array([a.center] + [p.center for p in path] + [b.center]), axis=0)
    assert np.linalg.norm(steps, axis=1).max() < 0.15
    assert transit_path(sc, a, b, 0.0) == []


def test_config_validation():
    with pytest.raises(InvalidInput):
        ExploreConfig(entropy_scope="room")
    with pytest.raises(InvalidInput):
        ExploreConfig(track_gap=0)


def test_empty_scene_terminates():
    r = explore(SimScene(TABLE, [], seed=0), "nbv")
    assert r.steps == 0 and r.map_file.objects == []


def test_unknown_policy():
    with pytest.raises(InvalidInput):
        explore(lone_cube(), "greedy")


def test_lone_cube_stops_early():
    r = explore(lone_cube(), "nbv")
    assert r.steps < ExploreConfig().max_steps
    assert r.final["gt_mean_iou_3d"] > 0.3
    assert entropy_violations(r.trace) == []


def test_explore_is_deterministic():
    sc = random_scene(1, 3)
    cfg = ExploreConfig(max_steps=2)
    a, b = explore(sc, "random", cfg), explore(sc, "random", cfg)
    assert a.trace == b.trace


def test_entropy_violations_detects_increase():
    trace = [{"obj_id": 0, "step": 0, "H_bar": 0.5}, {"obj_id": 0, "step": 1, "H_bar": 0.6}]
    assert entropy_violations(trace) == [(0, 1)]
