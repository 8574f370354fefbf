"""NBV against random view selection on the seeded table scenes."""

import argparse

import numpy as np

from objslam.experiments import exploration_table

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--scenes", type=int, default=7)
args = ap.parse_args()
rows = exploration_table(range(args.scenes))
print(f"{'scene':>5} {'policy':>6} {'gt':>3} {'est':>4} {'steps':>5} {'iou3d':>6} {'cde_cm':>7} {'viol':>4} {'secs':>6}")
for r in rows:
    print(f"{r['scene']:>5} {r['policy']:>6} {r['n_gt']:>3} {r['n_est']:>4} {r['steps']:>5} "
          f"{r['iou_3d']:>6.3f} {r['cde_cm']:>7.2f} {r['violations']:>4} {r['seconds']:>6.1f}")
for p in ("nbv", "random"):
    sel = [r for r in rows if r["policy"] == p]
    print(f"{p}: mean 3D IoU {np.mean([r['iou_3d'] for r in sel]):.3f}, mean CDE {np.mean([r['cde_cm'] for r in sel]):.2f} cm")
