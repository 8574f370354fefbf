"""Acceptance rates of the rank-sum and t-tests on same-source samples."""

import argparse
import json

from objslam.experiments import calibration

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--trials", type=int, default=10_000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
for alpha in (0.01, 0.05):
    print(json.dumps(calibration(alpha, args.trials, seed=args.seed)))
