"""Builders turning regression problems into constraint systems.

Row conventions (0-based in memory):

* univariate convex: row ``i`` couples ``theta_i, theta_{i+1}, theta_{i+2}``.
* multivariate convex: one row per ordered pair ``(j, k)``, ``j != k``, in
  lexicographic order; ``xi`` stacks the subgradients ``xi_j`` (length
  ``d`` each) in node order.
* linear regression / ridge: rows ``X xi - theta <= 0`` then
  ``-X xi + theta <= 0``.
* generalized lasso: ``xi = (beta, gamma)``; rows ``X beta - theta <= 0``,
  ``-X beta + theta <= 0``, ``D beta - gamma <= 0``, ``-D beta - gamma <= 0``.

Every row carries a label ``kind:i[:j]`` that :func:`parse_label` turns back
into a tuple, so active-set dumps can be read without the builder.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import isotonic, qp
from .geometry import ConstraintSystem, LiftedSystem, Linear, Quadratic

KINDS = (
    "univariate_isotonic",
    "bounded_isotonic_poset",
    "univariate_convex",
    "multivariate_convex",
    "penalized_convex",
    "linear_regression",
    "ridge",
    "lasso",
    "generalized_lasso",
)
# kinds whose tuning parameter is swept by SURE
TUNED = {"bounded_isotonic_poset": "lam", "penalized_convex": "lam", "ridge": "lam",
         "lasso": "tau", "generalized_lasso": "tau"}


def make_label(kind: str, *idx) -> str:
    return ":".join([kind] + [str(int(i)) for i in idx])


def parse_label(label: str) -> tuple:
    parts = label.split(":")
    return (parts[0],) + tuple(int(p) for p in parts[1:])


@dataclass(frozen=True)
class Dataset:
    """Design points (or design matrix) ``X`` (n x d), response ``y`` and noise level."""

    X: np.ndarray
    y: np.ndarray
    sigma: Optional[float] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.y, dtype=float)
        if y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has shape {y.shape}")
        if y.size < 1:
            raise ValueError("empty dataset")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


def read_dataset(path, sigma=None) -> Dataset:
    """CSV with header ``x_1..x_d,y``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if "y" not in header:
        raise ValueError(f"{path}: header must contain a 'y' column")
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    data = np.array(rows, dtype=float)
    yi = header.index("y")
    X = data[:, xcols] if xcols else np.zeros((data.shape[0], 0))
    return Dataset(X, data[:, yi], sigma)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{k + 1}" for k in range(ds.d)] + ["y"])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def read_matrix(path) -> np.ndarray:
    """Numeric CSV, with or without a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------------------
# builders


def _check_sorted(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing (ties are not merged)")
    return x


def build_univariate_isotonic(x) -> isotonic.BoundedIsotonicSystem:
    x = _check_sorted(x)
    return isotonic.BoundedIsotonicSystem(isotonic.PartialOrder.chain(x.size))


def build_univariate_convex(x) -> ConstraintSystem:
    x = _check_sorted(x)
    n = x.size
    if n < 3:
        raise ValueError("univariate convex regression needs n >= 3")
    m = n - 2
    A = np.zeros((m, n))
    i = np.arange(m)
    A[i, i] = x[i + 1] - x[i + 2]
    A[i, i + 1] = x[i + 2] - x[i]
    A[i, i + 2] = x[i] - x[i + 1]
    return ConstraintSystem(A, np.zeros(m), [make_label("cvx", k) for k in range(m)])


def convex_pairs(n: int):
    """Ordered pairs ``(j, k)``, ``j != k``, in lexicographic order."""
    j, k = np.divmod(np.arange(n * n), n)
    keep = j != k
    return j[keep], k[keep]


def build_multivariate_convex(points) -> LiftedSystem:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 2:
        raise ValueError("multivariate convex regression needs n >= 2")
    if np.unique(X, axis=0).shape[0] != n:
        raise ValueError("design points must be distinct")
    j, k = convex_pairs(n)
    m = j.size
    r = np.arange(m)
    A = np.zeros((m, n * d))
    diff = X[k] - X[j]
    for a in range(d):
        A[r, j * d + a] = diff[:, a]
    B = np.zeros((m, n))
    B[r, j] = 1.0
    B[r, k] = -1.0
    labels = [make_label("pair", a, b) for a, b in zip(j, k)]
    xi_labels = [make_label("grad", a, c) for a in range(n) for c in range(d)]
    return LiftedSystem(A, B, np.zeros(m), None, labels, xi_labels)


def build_penalized_convex(points, lam) -> LiftedSystem:
    if not lam > 0:
        raise ValueError("penalized convex regression needs lam > 0")
    return build_multivariate_convex(points).with_perturbation(Quadratic(lam))


def _regression_rows(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    n = X.shape[0]
    A = np.vstack([X, -X])
    B = np.vstack([-np.eye(n), np.eye(n)])
    labels = [make_label("upper", i) for i in range(n)] + [make_label("lower", i) for i in range(n)]
    return A, B, labels


def build_linear_regression(X) -> LiftedSystem:
    A, B, labels = _regression_rows(X)
    xl = [make_label("beta", a) for a in range(A.shape[1])]
    return LiftedSystem(A, B, np.zeros(A.shape[0]), None, labels, xl)


def build_ridge(X, lam) -> LiftedSystem:
    if not lam > 0:
        raise ValueError("ridge needs lam > 0")
    return build_linear_regression(X).with_perturbation(Quadratic(lam))


def build_generalized_lasso(X, D, tau) -> LiftedSystem:
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[1] != X.shape[1]:
        raise ValueError(f"D must have {X.shape[1]} columns, got shape {D.shape}")
    if not tau >= 0:
        raise ValueError("tau must be nonnegative")
    n, d = X.shape
    l = D.shape[0]
    Ar, Br, labels = _regression_rows(X)
    A = np.zeros((2 * n + 2 * l, d + l))
    A[:2 * n, :d] = Ar
    A[2 * n:2 * n + l, :d] = D
    A[2 * n + l:, :d] = -D
    A[2 * n:, d:] = np.vstack([-np.eye(l), -np.eye(l)])
    B = np.vstack([Br, np.zeros((2 * l, n))])
    labels += [make_label("pen_upper", i) for i in range(l)]
    labels += [make_label("pen_lower", i) for i in range(l)]
    xl = [make_label("beta", a) for a in range(d)] + [make_label("gamma", i) for i in range(l)]
    pert = Linear(np.concatenate([np.zeros(d), np.full(l, float(tau))]))
    return LiftedSystem(A, B, np.zeros(A.shape[0]), pert, labels, xl)


def build_lasso(X, tau) -> LiftedSystem:
    X = np.asarray(X, dtype=float)
    return build_generalized_lasso(X, np.eye(X.shape[1]), tau)


def fused_penalty(d: int) -> np.ndarray:
    """First-difference matrix ``(d-1) x d`` of a chain."""
    D = np.zeros((d - 1, d))
    i = np.arange(d - 1)
    D[i, i] = -1.0
    D[i, i + 1] = 1.0
    return D


# ---------------------------------------------------------------------------
# problem specification


@dataclass(frozen=True)
class ProblemSpec:
    """A regression problem: kind, data, tuning parameter and extras.

    ``param`` is ``lam`` for bounded isotonic / penalized convex / ridge and
    ``tau`` for (generalized) lasso.  ``param = 0`` for penalized convex and
    ridge means the unpenalized estimator; ``inf`` for bounded isotonic
    means no bound.
    """

    kind: str
    data: Dataset
    param: Optional[float] = None
    D: Optional[np.ndarray] = None
    order: Optional[isotonic.PartialOrder] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in TUNED and self.param is None:
            raise ValueError(f"{self.kind} needs a tuning parameter")
        if self.param is not None:
            p = float(self.param)
            if not p >= 0:
                raise ValueError("tuning parameter must be nonnegative")
            if math.isinf(p) and self.kind != "bounded_isotonic_poset":
                raise ValueError("an infinite parameter is only meaningful for bounded isotonic")
            object.__setattr__(self, "param", p)
        if self.kind == "generalized_lasso":
            if self.D is None:
                raise ValueError("generalized_lasso needs a penalty matrix D")
            D = np.asarray(self.D, dtype=float)
            if D.ndim != 2 or D.shape[1] != self.data.d:
                raise ValueError(f"D must have {self.data.d} columns")
            object.__setattr__(self, "D", D)
        if self.kind in ("univariate_isotonic", "univariate_convex"):
            if self.data.d != 1:
                raise ValueError(f"{self.kind} needs one-dimensional x")
            _check_sorted(self.data.X[:, 0])

    @property
    def n(self) -> int:
        return self.data.n

    def with_param(self, value) -> "ProblemSpec":
        return replace(self, param=value, _cache=self._cache)

    def with_y(self, y) -> "ProblemSpec":
        ds = Dataset(self.data.X, y, self.data.sigma)
        return replace(self, data=ds, _cache=self._cache)

    def poset(self) -> isotonic.PartialOrder:
        if self.order is not None:
            return self.order
        if "order" not in self._cache:
            if self.kind == "univariate_isotonic":
                self._cache["order"] = isotonic.PartialOrder.chain(self.n)
            else:
                self._cache["order"] = isotonic.PartialOrder.from_points(self.data.X)
        return self._cache["order"]

    def _base(self):
        if "base" not in self._cache:
            X = self.data.X
            if self.kind in ("multivariate_convex", "penalized_convex"):
                base = build_multivariate_convex(X)
            elif self.kind in ("linear_regression", "ridge"):
                base = build_linear_regression(X)
            elif self.kind == "lasso":
                base = build_lasso(X, 0.0)
            elif self.kind == "generalized_lasso":
                base = build_generalized_lasso(X, self.D, 0.0)
            else:
                raise AssertionError(self.kind)
            self._cache["base"] = base
        return self._cache["base"]

    def system(self):
        """The constraint system for the current parameter."""
        k = self.kind
        if k == "univariate_isotonic":
            return isotonic.BoundedIsotonicSystem(self.poset())
        if k == "bounded_isotonic_poset":
            return isotonic.BoundedIsotonicSystem(self.poset(), self.param)
        if k == "univariate_convex":
            if "base" not in self._cache:
                self._cache["base"] = build_univariate_convex(self.data.X[:, 0])
            return self._cache["base"]
        base = self._base()
        if k in ("multivariate_convex", "linear_regression"):
            return base
        if k in ("penalized_convex", "ridge"):
            return base if self.param == 0 else base.with_perturbation(Quadratic(self.param))
        l = base.p - self.data.d
        d = np.concatenate([np.zeros(self.data.d), np.full(l, self.param)])
        return base.with_perturbation(Linear(d))


def fit(problem: ProblemSpec, y=None, cfg: Optional[qp.SolverConfig] = None,
        warm: Optional[qp.FitResult] = None, unbounded=None) -> qp.FitResult:
    """Fit ``problem`` at response ``y`` (default: the dataset's response).

    ``unbounded`` optionally passes a cached unbounded isotonic fit for the
    isotonic kinds.
    """
    y = problem.data.y if y is None else np.asarray(y, dtype=float)
    sys = problem.system()
    if isinstance(sys, isotonic.BoundedIsotonicSystem):
        return isotonic.fit_bounded(sys, y, cfg, unbounded=unbounded)
    if isinstance(sys, ConstraintSystem):
        return qp.project(sys, y, cfg, warm)
    return qp.solve_lifted(sys, y, cfg, warm)
