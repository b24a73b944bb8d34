"""Risk ratio of SURE-tuned penalized convex fits over the best grid penalty.

Usage: python demos/convex_ratio.py [replications]
"""

import sys

from polydf import sure

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 5
for d in (2, 4):
    res = sure.ratio_experiment(sure.RatioConfig("convex", 100, d, 0.5, reps, seed=7, grid_size=16))
    s = res.summary()
    print(f"d={d} n=100: SURE ratio mean {s['sure_ratio']['mean']:.3f} "
          f"median {s['sure_ratio']['median']:.3f}; "
          f"unpenalized ratio mean {s['reference_ratio']['mean']:.3f}")
