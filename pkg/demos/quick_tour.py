"""Fit each problem class once and compare its divergence formula with finite differences."""

import numpy as np

from polydf import dof, problems
from polydf.problems import Dataset, ProblemSpec

rng = np.random.default_rng(0)
n = 30
x = np.sort(rng.uniform(0, 1, n))
X2 = rng.uniform(-1, 1, (n, 2))
Xr = rng.standard_normal((n, 6))
y_shape = (2 * x - 1) ** 2 + 0.2 * rng.standard_normal(n)
y_bowl = np.sum(X2**2, 1) + 0.2 * rng.standard_normal(n)
y_lin = Xr @ np.array([1.0, 1.0, 0.0, 0.0, -2.0, -2.0]) + rng.standard_normal(n)

specs = [
    ProblemSpec("univariate_isotonic", Dataset(x, x + 0.3 * rng.standard_normal(n))),
    ProblemSpec("bounded_isotonic_poset", Dataset(X2, y_bowl), 0.8),
    ProblemSpec("univariate_convex", Dataset(x, y_shape)),
    ProblemSpec("multivariate_convex", Dataset(X2, y_bowl)),
    ProblemSpec("penalized_convex", Dataset(X2, y_bowl), 0.5),
    ProblemSpec("linear_regression", Dataset(Xr, y_lin)),
    ProblemSpec("ridge", Dataset(Xr, y_lin), 2.0),
    ProblemSpec("lasso", Dataset(Xr, y_lin), 10.0),
    ProblemSpec("generalized_lasso", Dataset(Xr, y_lin), 5.0, D=problems.fused_penalty(6)),
]

print(f"{'kind':<24}{'formula':>10}{'finite diff':>13}{'KKT':>10}")
for spec in specs:
    fit = problems.fit(spec)
    rep = dof.divergence(spec, fit)
    fd = dof.finite_difference_divergence(lambda v: problems.fit(spec, v), spec.data.y)
    flag = " (near-degenerate)" if rep.near_degenerate else ""
    print(f"{spec.kind:<24}{rep.value:>10.4f}{fd.value:>13.4f}{fit.max_kkt_residual:>10.1e}{flag}")
