"""Relocalization success rate per shared-object ratio, plus match timing."""

import argparse

from objslam.experiments import match_timing, reloc_table

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--trials", type=int, default=500)
args = ap.parse_args()
print(f"{'shared%':>7} {'k':>3} {'M':>3} {'success%':>9} {'secs':>6}")
for r in reloc_table(args.trials):
    print(f"{r['percent']:>7} {r['shared']:>3} {r['per_map']:>3} {r['success']:>9.1f} {r['seconds']:>6.1f}")
t = match_timing()
print(f"match 20-object pair: mean {t['mean_ms']:.1f} ms, max {t['max_ms']:.1f} ms")
