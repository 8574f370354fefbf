"""Yaw error of the sampled initialisation and the refined pose."""

import argparse

import numpy as np

from objslam.experiments import yaw_trial

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=50)
ap.add_argument("--noise-deg", type=float, nargs="*", default=[0.0, 1.0, 2.0])
args = ap.parse_args()
for noise in args.noise_deg:
    rows = [yaw_trial(s, noise) for s in range(args.seeds)]
    init = np.array([r["init_deg"] for r in rows])
    ref = np.array([r["refined_deg"] for r in rows])
    print(f"noise {noise:.1f} deg: init mean {init.mean():.2f} max {init.max():.2f}; "
          f"refined mean {ref.mean():.2f} max {ref.max():.2f}")
