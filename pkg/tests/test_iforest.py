import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objslam.errors import TooFewPoints
from objslam.iforest import (
    EULER_GAMMA,
    anomaly_score,
    anomaly_scores,
    average_path_length,
    build_forest,
    estimate_centroid_scale,
    filter_outliers,
)


def test_average_path_length_values():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == 1.0
    # c(256) = 2 H(255) - 2 * 255 / 256
    expected = 2 * (math.log(255) + EULER_GAMMA) - 2 * 255 / 256
    assert average_path_length(256) == pytest.approx(expected)


def test_forest_shape_and_height_limit():
    X = np.random.default_rng(0).normal(size=(500, 3))
    f = build_forest(X, n_trees=50, psi=256, seed=1)
    assert f.n_trees == 50
    assert f.height_limit == 8
    assert max(f.tree_depth(k) for k in range(50)) <= 8


def test_forest_is_seeded():
    X = np.random.default_rng(0).normal(size=(300, 3))
    a = build_forest(X, seed=3).serialize()
    b = build_forest(X, seed=3).serialize()
    c = build_forest(X, seed=4).serialize()
    assert a == b and a != c


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        build_forest(np.zeros((5, 3)))


def test_far_point_scores_high():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(0, 0.05, (300, 3)), [[5.0, 5.0, 5.0]]])
    f = build_forest(X, seed=0)
    s = anomaly_scores(f, X)
    assert s[-1] > 0.6 > np.median(s[:-1])
    assert anomaly_score(f, X[-1]) == pytest.approx(s[-1])


def test_duplicate_points_do_not_hang():
    X = np.ones((50, 3))
    f = build_forest(X, seed=0)
    assert np.all(np.isfinite(anomaly_scores(f, X)))


@settings(max_examples=20, deadline=None)
@given(st.integers(10, 200), st.integers(0, 10_000))
def test_scores_bounded(n, seed):
    X = np.random.default_rng(seed).uniform(-1, 1, (n, 3))
    s = anomaly_scores(build_forest(X, n_trees=20, seed=seed), X)
    assert np.all((s > 0) & (s <= 1))


def test_filter_keeps_minimum():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(100, 3))
    f = build_forest(X, seed=0)
    inl, mask = filter_outliers(X, f, threshold=0.0)
    assert len(inl) == 4 and mask.sum() == 4


def test_filter_tiny_cloud_passthrough():
    X = np.zeros((3, 3))
    inl, mask = filter_outliers(X, None)
    assert len(inl) == 3 and mask.all()


def test_centroid_scale():
    X = np.array([[0, 0, 0], [2, 4, 0], [1, 2, 0], [1, 2, 0]], float)
    t, s = estimate_centroid_scale(X, s_min=0.01)
    assert np.allclose(t, [1, 2, 0]) and np.allclose(s, [1, 2, 0.01])
    with pytest.raises(TooFewPoints):
        estimate_centroid_scale(X[:3])
