"""Inequality systems, active constraints and numerical rank.

Two kinds of constraint systems are used throughout the package:

* :class:`ConstraintSystem` -- a polyhedron ``{theta : A theta <= b}``.
* :class:`LiftedSystem` -- a polyhedron ``{(xi, theta) : A xi + B theta <= c}``
  in an enlarged space, together with an optional perturbation of the
  objective acting on the auxiliary block ``xi``.

Everything here is a pure function of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

DEFAULT_RANK_RTOL = 1e-12
DEFAULT_INDEPENDENCE_TOL = 1e-9
# An excluded row whose slack is below this multiple of the classification
# tolerance is reported as a near-degenerate classification.
DEGENERACY_BAND = 100.0


def _frozen(a, ndim, name):
    if (isinstance(a, np.ndarray) and a.dtype == np.float64 and a.ndim == ndim
            and not a.flags.writeable and a.base is None):
        return a  # already an immutable array we own; share it
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Linear:
    """Linear perturbation ``d^T xi`` of the partial projection objective."""

    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _frozen(self.d, 1, "d"))


@dataclass(frozen=True)
class Quadratic:
    """Quadratic perturbation ``(lam / 2) ||xi||^2``."""

    lam: float

    def __post_init__(self):
        lam = float(self.lam)
        if not lam > 0:
            raise ValueError(f"quadratic perturbation needs lam > 0, got {self.lam}")
        object.__setattr__(self, "lam", lam)


Perturbation = Union[None, Linear, Quadratic]


@dataclass(frozen=True)
class ConstraintSystem:
    """Polyhedron ``{theta in R^n : A theta <= b}``.

    An empty system (``m == 0``) stands for the whole space.  ``labels``
    optionally names each row (e.g. ``"3<=7"``) so that active-set dumps
    are readable.
    """

    A: np.ndarray
    b: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has length {b.shape[0]}")
        if A.shape[1] < 1:
            raise ValueError("a constraint system needs n >= 1 columns")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != A.shape[0]:
                raise ValueError("one label per row required")
            object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def slack(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n,):
            raise ValueError(f"point has shape {theta.shape}, expected ({self.n},)")
        return self.b - self.A @ theta

    def as_lifted(self) -> "LiftedSystem":
        """The same polyhedron viewed as a lifted system with ``p = 0``."""
        return LiftedSystem(np.zeros((self.m, 0)), self.A, self.b, None, self.labels)


@dataclass(frozen=True)
class LiftedSystem:
    """Lifted polyhedron ``{(xi, theta) : A xi + B theta <= c}`` plus perturbation.

    ``A`` is ``m x p`` (auxiliary block), ``B`` is ``m x n``.  The fitted
    object is always ``theta``; ``xi`` is auxiliary.
    """

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    perturbation: Perturbation = None
    labels: Optional[tuple] = None
    xi_labels: Optional[tuple] = field(default=None)

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        c = _frozen(self.c, 1, "c")
        if not (A.shape[0] == B.shape[0] == c.shape[0]):
            raise ValueError(
                f"row counts differ: A {A.shape[0]}, B {B.shape[0]}, c {c.shape[0]}")
        if B.shape[1] < 1:
            raise ValueError("a lifted system needs n >= 1 theta columns")
        pert = self.perturbation
        if pert is not None and not isinstance(pert, (Linear, Quadratic)):
            raise TypeError(f"unknown perturbation {pert!r}")
        if isinstance(pert, Linear) and pert.d.shape != (A.shape[1],):
            raise ValueError(f"linear perturbation has length {pert.d.shape[0]}, p = {A.shape[1]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != A.shape[0]:
                raise ValueError("one label per row required")
            object.__setattr__(self, "labels", labels)
        if self.xi_labels is not None:
            xl = tuple(str(s) for s in self.xi_labels)
            if len(xl) != A.shape[1]:
                raise ValueError("one xi label per auxiliary column required")
            object.__setattr__(self, "xi_labels", xl)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def G(self) -> np.ndarray:
        """Stacked row matrix ``[A, B]``."""
        return np.hstack([self.A, self.B])

    def with_perturbation(self, perturbation: Perturbation) -> "LiftedSystem":
        return LiftedSystem(self.A, self.B, self.c, perturbation, self.labels, self.xi_labels)

    def slack(self, xi, theta) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1)
        theta = np.asarray(theta, dtype=float)
        if xi.shape != (self.p,) or theta.shape != (self.n,):
            raise ValueError(
                f"point dimensions ({xi.shape[0]}, {theta.shape[0]}) do not match "
                f"(p, n) = ({self.p}, {self.n})")
        return self.c - self.A @ xi - self.B @ theta


@dataclass(frozen=True)
class ActiveSet:
    """Rows binding at a point, with classification diagnostics.

    ``near_degenerate`` is set when some excluded row has slack within
    ``DEGENERACY_BAND * tolerance_used``: the classification is then fragile
    and integer-valued divergence formulas should not be trusted blindly.
    """

    indices: tuple
    tolerance_used: float
    near_degenerate: bool = False
    min_excluded_slack: float = float("inf")

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("active indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int)


def default_active_tol(point) -> float:
    point = np.asarray(point, dtype=float)
    scale = float(np.max(np.abs(point))) if point.size else 0.0
    return 1e-7 * (1.0 + scale)


def active_set(sys, point, tol: Optional[float] = None) -> ActiveSet:
    """Indices of rows with ``|residual| <= tol`` at ``point``.

    For a :class:`LiftedSystem`, ``point`` is either the pair ``(xi, theta)``
    or the concatenated vector of length ``p + n``.
    """
    if isinstance(sys, LiftedSystem):
        if isinstance(point, tuple) and len(point) == 2:
            xi, theta = point
            xi = np.asarray(xi, dtype=float).reshape(-1)
            theta = np.asarray(theta, dtype=float)
        else:
            v = np.asarray(point, dtype=float)
            if v.shape != (sys.p + sys.n,):
                raise ValueError(f"point has shape {v.shape}, expected ({sys.p + sys.n},)")
            xi, theta = v[:sys.p], v[sys.p:]
        resid = sys.slack(xi, theta)
        full = np.concatenate([xi, theta])
    elif isinstance(sys, ConstraintSystem):
        resid = sys.slack(point)
        full = np.asarray(point, dtype=float)
    else:
        raise TypeError(f"not a constraint system: {type(sys).__name__}")
    if tol is None:
        tol = default_active_tol(full)
    if not tol > 0:
        raise ValueError("tol must be positive")
    absr = np.abs(resid)
    mask = absr <= tol
    excluded = absr[~mask]
    min_ex = float(excluded.min()) if excluded.size else float("inf")
    return ActiveSet(tuple(np.flatnonzero(mask)), float(tol),
                     near_degenerate=bool(min_ex <= DEGENERACY_BAND * tol),
                     min_excluded_slack=min_ex)


@dataclass(frozen=True)
class RankInfo:
    rank: int
    cutoff: float
    smallest_retained: float
    # True when the smallest retained singular value sits within 10x of the cutoff.
    tie: bool


def rank_info(M, rel_tol: float = DEFAULT_RANK_RTOL) -> RankInfo:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return RankInfo(0, 0.0, float("inf"), False)
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return RankInfo(0, 0.0, float("inf"), False)
    cutoff = rel_tol * max(M.shape) * smax
    kept = s[s > cutoff]
    smallest = float(kept[-1]) if kept.size else float("inf")
    return RankInfo(int(kept.size), float(cutoff), smallest, bool(smallest <= 10.0 * cutoff))


def numerical_rank(M, rel_tol: float = DEFAULT_RANK_RTOL) -> int:
    """Number of singular values above ``rel_tol * max(M.shape) * sigma_max``."""
    return rank_info(M, rel_tol).rank


def maximal_independent_rows(A_J, B_J=None, tol: float = DEFAULT_INDEPENDENCE_TOL,
                             order: Optional[Sequence[int]] = None) -> list:
    """Greedy maximal linearly independent subset of the rows of ``[A_J, B_J]``.

    Rows are scanned in ascending order (or in ``order`` if given) and kept
    when their component orthogonal to the span of the rows kept so far has
    norm above ``tol`` times the row norm.  Work is blocked so that the
    projection against the current basis is a matrix product.

    Returns the kept row positions (indices into ``A_J``) in scan order.
    """
    A_J = np.asarray(A_J, dtype=float)
    if B_J is None:
        M = A_J
    else:
        B_J = np.asarray(B_J, dtype=float)
        if A_J.shape[0] != B_J.shape[0]:
            raise ValueError("A_J and B_J must have the same number of rows")
        M = np.hstack([A_J.reshape(A_J.shape[0], -1), B_J])
    k, dim = M.shape
    if k == 0 or dim == 0:
        return []
    idx = np.arange(k) if order is None else np.asarray(order, dtype=int)
    basis = np.empty((min(k, dim), dim))
    r = 0
    kept = []
    block = 64
    for start in range(0, idx.size, block):
        if r == dim:
            break
        rows = idx[start:start + block]
        V = M[rows]
        norms = np.linalg.norm(V, axis=1)
        r0 = r
        if r0:
            Qb = basis[:r0]
            V = V - (V @ Qb.T) @ Qb
            V = V - (V @ Qb.T) @ Qb
        for j, row in enumerate(rows):
            if norms[j] == 0.0:
                continue
            v = V[j]
            if r > r0:
                # directions accepted earlier in this block
                Qn = basis[r0:r]
                v = v - (Qn @ v) @ Qn
                v = v - (Qn @ v) @ Qn
            nv = np.linalg.norm(v)
            if nv > tol * norms[j]:
                basis[r] = v / nv
                r += 1
                kept.append(int(row))
                if r == dim:
                    break
    return kept
