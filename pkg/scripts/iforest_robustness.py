"""Outlier removal, inlier loss and centroid error of the isolation forest filter."""

import argparse

import numpy as np

from objslam.experiments import iforest_trial

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=100)
ap.add_argument("--spread", type=float, default=5.0)
args = ap.parse_args()
rows = [iforest_trial(s, spread=args.spread) for s in range(args.seeds)]
for k in ("removal", "inlier_loss", "centroid_ratio"):
    v = np.array([r[k] for r in rows])
    print(f"{k:>15}: mean {v.mean():.3f} min {v.min():.3f} max {v.max():.3f}")
