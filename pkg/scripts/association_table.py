"""Final object counts of the ensemble and the IoU-only tracker on the room sequences."""

import argparse

from objslam.experiments import association_table

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--frames", type=int, default=300)
args = ap.parse_args()
print(f"{'seed':>4} {'n':>3} {'gt':>4} {'ensemble':>9} {'iou':>5} {'secs':>6}")
for r in association_table(n_frames=args.frames):
    print(f"{r['seed']:>4} {r['requested']:>3} {r['gt']:>4} {r['ensemble']:>9} {r['iou']:>5} {r['ensemble_s']:>6.1f}")
