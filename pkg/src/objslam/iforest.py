"""Isolation forest on 3-D point clouds.

Trees are stored as complete binary heaps (children of node ``n`` are
``2n+1`` and ``2n+2``) and grown one level at a time for all trees at once,
so building a 100-tree forest costs a handful of numpy passes instead of one
Python call per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewPoints

EULER_GAMMA = 0.5772156649
SCORE_THRESHOLD = 0.6
MIN_INLIERS = 4
DIM_TRIES = 4  # first draw plus three resamples for zero-range dimensions


def harmonic(i):
    return np.log(i) + EULER_GAMMA


def average_path_length(n):
    """c(n): expected path length of an unsuccessful BST search over n items."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    out[n == 2] = 1.0
    big = n > 2
    nb = n[big]
    out[big] = 2.0 * harmonic(nb - 1.0) - 2.0 * (nb - 1.0) / nb
    return out if out.ndim else float(out)


@dataclass
class IsolationForest:
    split_dim: np.ndarray  # (trees, nodes), -1 marks an external node
    split_value: np.ndarray  # (trees, nodes)
    leaf_size: np.ndarray  # (trees, nodes)
    psi: int
    height_limit: int

    @property
    def n_trees(self) -> int:
        return self.split_dim.shape[0]

    def serialize(self) -> bytes:
        return b"".join(
            a.tobytes() for a in (self.split_dim, self.split_value, self.leaf_size)
        ) + f"{self.psi}/{self.height_limit}".encode()

    def tree_depth(self, k: int) -> int:
        internal = np.flatnonzero(self.split_dim[k] >= 0)
        if len(internal) == 0:
            return 0
        return int(np.floor(np.log2(internal.max() + 1))) + 1

    def path_lengths(self, X) -> np.ndarray:
        """h(x) per tree: depth reached plus c(leaf size); shape (trees, n)."""
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        T = self.n_trees
        node = np.zeros((T, len(X)), dtype=np.int64)
        rows = np.arange(T)[:, None]
        cols = np.arange(len(X))[None, :]
        for _ in range(self.height_limit):
            dim = self.split_dim[rows, node]
            internal = dim >= 0
            if not internal.any():
                break
            val = self.split_value[rows, node]
            x = X[cols, np.maximum(dim, 0)]
            child = np.where(x < val, 2 * node + 1, 2 * node + 2)
            node = np.where(internal, child, node)
        depth = np.floor(np.log2(node + 1))
        return depth + average_path_length(self.leaf_size[rows, node])


def build_forest(X, n_trees: int = 100, psi: int | None = None, seed: int = 0) -> IsolationForest:
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    n = len(X)
    if n < 10:
        raise TooFewPoints(f"need at least 10 points, got {n}")
    psi = min(256, n) if psi is None else int(psi)
    if not 2 <= psi <= n:
        raise ValueError(f"subsample size {psi} outside [2, {n}]")
    rng = np.random.default_rng(seed)
    limit = int(math.ceil(math.log2(psi)))
    n_nodes = 2 ** (limit + 1) - 1

    samples = np.stack([rng.choice(n, psi, replace=False) for _ in range(n_trees)])
    Xs = X[samples]  # (T, psi, 3)
    split_dim = np.full((n_trees, n_nodes), -1, dtype=np.int64)
    split_value = np.zeros((n_trees, n_nodes))
    leaf_size = np.zeros((n_trees, n_nodes), dtype=np.int64)

    node = np.zeros((n_trees, psi), dtype=np.int64)
    active = np.ones((n_trees, psi), dtype=bool)
    tree_of = np.broadcast_to(np.arange(n_trees)[:, None], node.shape)

    for depth in range(limit + 1):
        if not active.any():
            break
        t_idx = tree_of[active]
        n_idx = node[active]
        pts = Xs[active]
        key = t_idx * n_nodes + n_idx
        order = np.argsort(key, kind="stable")
        key_s = key[order]
        starts = np.flatnonzero(np.r_[True, key_s[1:] != key_s[:-1]])
        ukey = key_s[starts]
        counts = np.diff(np.r_[starts, len(key_s)])
        ut, un = np.divmod(ukey, n_nodes)

        if depth == limit:
            leaf_size[ut, un] = counts
            break

        pts_s = pts[order]
        lo = np.minimum.reduceat(pts_s, starts, axis=0)
        hi = np.maximum.reduceat(pts_s, starts, axis=0)
        span = hi - lo

        tries = rng.integers(0, 3, size=(len(ukey), DIM_TRIES))
        ok = np.take_along_axis(span, tries, axis=1) > 0
        has_dim = ok.any(axis=1)
        dim = tries[np.arange(len(ukey)), np.argmax(ok, axis=1)]
        u = rng.random(len(ukey))
        splits = counts > 1
        splits &= has_dim

        leaf = ~splits
        leaf_size[ut[leaf], un[leaf]] = counts[leaf]
        rows = np.arange(len(ukey))[splits]
        q = lo[rows, dim[rows]] + u[rows] * span[rows, dim[rows]]
        split_dim[ut[rows], un[rows]] = dim[rows]
        split_value[ut[rows], un[rows]] = q

        # route points of split nodes to children; points of leaves retire
        node_dim = split_dim[t_idx, n_idx]
        moving = node_dim >= 0
        xval = pts[np.arange(len(pts)), np.maximum(node_dim, 0)]
        go_left = xval < split_value[t_idx, n_idx]
        new_node = np.where(go_left, 2 * n_idx + 1, 2 * n_idx + 2)
        flat_active = np.flatnonzero(active.ravel())
        node.ravel()[flat_active[moving]] = new_node[moving]
        active.ravel()[flat_active[~moving]] = False

    return IsolationForest(split_dim, split_value, leaf_size, psi, limit)


def anomaly_scores(forest: IsolationForest, X) -> np.ndarray:
    """2 ** (-E[h(x)] / c(psi)) for each row of X."""
    eh = forest.path_lengths(X).mean(axis=0)
    return np.power(2.0, -eh / average_path_length(forest.psi))


def anomaly_score(forest: IsolationForest, x) -> float:
    return float(anomaly_scores(forest, np.asarray(x, dtype=float).reshape(1, 3))[0])


def filter_outliers(X, forest: IsolationForest, threshold: float = SCORE_THRESHOLD, min_keep: int = MIN_INLIERS):
    """Points scoring at most ``threshold``; never fewer than ``min_keep``.

    Returns ``(inliers, mask)``.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    if len(X) <= min_keep:
        return X.copy(), np.ones(len(X), dtype=bool)
    scores = anomaly_scores(forest, X)
    mask = scores <= threshold
    if mask.sum() < min_keep:
        mask = np.zeros(len(X), dtype=bool)
        mask[np.argsort(scores, kind="stable")[:min_keep]] = True
    return X[mask], mask


def estimate_centroid_scale(inliers, s_min: float = 0.01):
    """Mean and clamped half-range of the inlier cloud."""
    X = np.asarray(inliers, dtype=float).reshape(-1, 3)
    if len(X) < MIN_INLIERS:
        raise TooFewPoints(f"need at least {MIN_INLIERS} inliers, got {len(X)}")
    t = X.mean(axis=0)
    s = np.maximum((X.max(axis=0) - X.min(axis=0)) / 2, s_min)
    return t, s
