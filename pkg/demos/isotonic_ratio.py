"""Risk ratio of SURE-tuned bounded isotonic fits over the oracle bound.

Usage: python demos/isotonic_ratio.py [replications]
"""

import sys

from polydf import sure

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 10
for d in (2, 5):
    for n in (100, 200):
        res = sure.ratio_experiment(sure.RatioConfig("isotonic", n, d, 1.0, reps, seed=7))
        s = res.summary()
        print(f"d={d} n={n}: SURE ratio mean {s['sure_ratio']['mean']:.3f} "
              f"median {s['sure_ratio']['median']:.3f}; "
              f"unbounded ratio mean {s['reference_ratio']['mean']:.3f}")
