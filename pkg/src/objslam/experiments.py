"""Seeded experiment protocols behind the acceptance suite and scripts/."""

from __future__ import annotations

import math
import time

import numpy as np

from . import synth
from .association import rank_sum_test, single_t_test
from .exploration import ExploreConfig, entropy_violations, explore, random_scene
from .geometry import wrap_half_pi
from .iforest import build_forest, filter_outliers
from .metrics import yaw_error_deg
from .parameterization import init_orientation, refine_pose
from .topomap import TopoNode, apply_similarity, build_topo_map, match_maps

# ---------------------------------------------------------------- statistics


def calibration(alpha: float, trials: int = 10_000, n: int = 100, seed: int = 0) -> dict:
    """Acceptance rates of both tests on same-source samples.

    The rank-sum test compares two N(0, 1) samples of size ``n``; the t-test
    checks a sample of ``n`` against its true mean.
    """
    rng = np.random.default_rng([seed, int(alpha * 1e4)])
    rs = ts = 0
    for _ in range(trials):
        P, Q = rng.normal(size=n), rng.normal(size=n)
        rs += rank_sum_test(P, Q, alpha)
        ts += single_t_test(rng.normal(1.0, 0.5, n), 1.0, alpha)
    return {"alpha": alpha, "rank_sum": rs / trials, "single_t": ts / trials}


# ---------------------------------------------------------------- association


def association_table(protocol=synth.ASSOC_PROTOCOL, n_frames: int = 300, **assoc) -> list[dict]:
    """Final object counts of the ensemble and the IoU tracker on the room sequences."""
    rows = []
    for seed, n in protocol:
        frames, scene = synth.association_sequence(seed, n, n_frames)
        t0 = time.perf_counter()
        ens = synth.count_objects(frames, "ensemble", **assoc)
        t1 = time.perf_counter()
        rows.append({
            "seed": seed, "requested": n, "gt": synth.observed_gt(frames, scene), "ensemble": ens,
            "iou": synth.count_objects(frames, "iou"), "ensemble_s": t1 - t0,
        })
    return rows


# ---------------------------------------------------------------- iForest


def iforest_trial(seed: int, n_in: int = 400, frac: float = 0.2, spread: float = 5.0) -> dict:
    """Box cluster plus uniform outliers in a box ``spread`` times larger.

    Returns the outlier removal rate, the inlier loss and the centroid error
    after filtering relative to the unfiltered one.
    """
    rng = np.random.default_rng([seed, 17])
    s = rng.uniform(0.05, 0.3, 3)
    c = rng.uniform(-2, 2, 3)
    n_out = int(round(n_in * frac / (1 - frac)))
    X = np.vstack([c + rng.uniform(-1, 1, (n_in, 3)) * s, c + rng.uniform(-1, 1, (n_out, 3)) * s * spread])
    is_out = np.arange(len(X)) >= n_in
    _, keep = filter_outliers(X, build_forest(X, seed=seed))
    raw = np.linalg.norm(X.mean(axis=0) - c)
    filt = np.linalg.norm(X[keep].mean(axis=0) - c)
    return {
        "removal": float((~keep[is_out]).mean()),
        "inlier_loss": float((~keep[~is_out]).mean()),
        "centroid_ratio": float(filt / raw) if raw > 0 else 0.0,
    }


# ---------------------------------------------------------------- yaw


def yaw_trial(seed: int, noise_deg: float = 0.0) -> dict:
    """Yaw errors (degrees) of the sampled initialisation and of the refined pose."""
    yaw = float(np.random.default_rng([seed, 23]).uniform(-math.pi / 2, math.pi / 2))
    t, s, views = synth.yaw_views(seed, yaw, noise_deg)
    theta, _, _ = init_orientation(t, s, views)
    refined, _ = refine_pose(t, theta, s, views)
    return {"gt": yaw, "init_deg": yaw_error_deg(theta, yaw), "refined_deg": yaw_error_deg(refined, yaw)}


# ---------------------------------------------------------------- relocalization


def reloc_success(seed: int, k: int, M: int, noise: float = 0.0, tol: float = 0.01) -> bool:
    """Every shared object maps onto its prior position within ``tol`` (prior units)."""
    prior, moved, _, _ = synth.reloc_trial(seed, k, M, noise)
    res = match_maps(build_topo_map(moved), build_topo_map(prior), seed=seed)
    if not res.has_transform:
        return False
    # the first k query objects are the last k prior objects, in order
    back = res.apply(np.array([m.t for m in moved[:k]]))
    target = np.array([p.t for p in prior[M - k:]])
    return bool(np.linalg.norm(back - target, axis=1).max() <= tol)


def reloc_table(trials: int = 500, protocol=None) -> list[dict]:
    """Success rate per shared-object ratio; ``protocol`` maps percent to (shared, per-map)."""
    protocol = protocol or synth.RELOC_PROTOCOL
    rows = []
    for pct, (k, M) in protocol.items():
        t0 = time.perf_counter()
        ok = sum(reloc_success(seed, k, M) for seed in range(trials))
        rows.append({"percent": pct, "shared": k, "per_map": M, "success": 100.0 * ok / trials,
                     "seconds": time.perf_counter() - t0})
    return rows


def match_timing(pairs: int = 20, n: int = 20) -> dict:
    """Wall time of match_maps on 20-object map pairs (half shared)."""
    times = []
    for seed in range(pairs):
        prior, moved, _, _ = synth.reloc_trial(seed, n // 2, n)
        g1, g2 = build_topo_map(moved), build_topo_map(prior)
        t0 = time.perf_counter()
        match_maps(g1, g2, seed=seed)
        times.append(time.perf_counter() - t0)
    return {"mean_ms": 1e3 * float(np.mean(times)), "max_ms": 1e3 * float(np.max(times))}


def _moved(nodes, rho, yaw, t, rng=None, noise=0.0):
    out = []
    for n in nodes:
        p = apply_similarity(rho, yaw, t, n.t[None])[0]
        if noise:
            p = p + rng.normal(0, noise, 3)
        y = wrap_half_pi(n.yaw + yaw) if n.kind == "cube" else 0.0
        out.append(TopoNode(n.id + 100, n.label, p, y, n.s * rho, n.kind))
    return out


def transform_trial(seed: int, n: int = 20, noise: float = 0.01) -> dict:
    """Recovery errors on a noiseless copy and a copy with centroid noise (metres, radians)."""
    rng = np.random.default_rng([seed, 29])
    nodes = synth.reloc_scene(rng, n)
    rho, yaw = float(rng.uniform(0.5, 2.0)), float(rng.uniform(-math.pi, math.pi))
    t = rng.uniform(-5, 5, 3)
    g1 = build_topo_map(nodes)
    exact = match_maps(g1, build_topo_map(_moved(nodes, rho, yaw, t)), seed=seed)
    noisy = match_maps(g1, build_topo_map(_moved(nodes, rho, yaw, t, rng, noise)), seed=seed)

    def err(r):
        if not r.has_transform:
            return math.inf, math.inf, math.inf
        return abs(r.rho - rho), abs(math.remainder(r.yaw - yaw, 2 * math.pi)), float(np.linalg.norm(r.translation - t))

    e_rho, e_yaw, e_t = err(exact)
    return {"rho": e_rho, "yaw": e_yaw, "t": e_t, "noisy_t": err(noisy)[2]}


# ---------------------------------------------------------------- exploration


def exploration_table(seeds=range(7), policies=("nbv", "random"), cfg: ExploreConfig | None = None) -> list[dict]:
    """Final metrics of each policy on the seeded table scenes."""
    rows = []
    for seed in seeds:
        scene = random_scene(seed)
        for policy in policies:
            t0 = time.perf_counter()
            r = explore(scene, policy, cfg or ExploreConfig(seed=0))
            rows.append({
                "scene": seed, "policy": policy, "n_gt": len(scene.objects), "steps": r.steps,
                "n_est": r.final["n_est"], "iou_3d": r.final["gt_mean_iou_3d"], "cde_cm": r.final["mean_cde_cm"],
                "violations": len(entropy_violations(r.trace)), "seconds": time.perf_counter() - t0,
            })
    return rows
