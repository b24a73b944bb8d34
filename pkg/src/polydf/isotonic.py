"""Isotonic regression on partial orders, with an optional range bound.

The bounded fit uses the thresholding characterisation: take the unbounded
isotonic fit, with distinct levels ``theta_1 < ... < theta_r`` on groups of
sizes ``k_s``, find the root ``L`` of the piecewise-linear function
``H(L, lam)`` and clamp every level into ``[L, L + lam]``.  The divergence
of the bounded fit is the number of connected components of the graph of
binding constraints.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Optional

import numpy as np

from . import qp
from .geometry import ConstraintSystem, active_set

GROUP_RTOL = 1e-10


# ---------------------------------------------------------------------------
# partial orders


@dataclass(frozen=True)
class PartialOrder:
    """Directed acyclic graph on ``range(n)``; edge ``(i, j)`` means ``theta_i <= theta_j``."""

    n: int
    edges: tuple

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError("a partial order needs at least one node")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n = {n}")
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        ts = TopologicalSorter({k: () for k in range(n)})
        for i, j in edges:
            ts.add(j, i)
        try:
            ts.prepare()
        except CycleError as exc:
            raise ValueError(f"edges contain a cycle: {exc.args[1]}") from None
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", edges)

    @property
    def max_nodes(self) -> list:
        """Nodes without successors."""
        has_succ = np.zeros(self.n, dtype=bool)
        for i, _ in self.edges:
            has_succ[i] = True
        return np.flatnonzero(~has_succ).tolist()

    @property
    def min_nodes(self) -> list:
        """Nodes without predecessors."""
        has_pred = np.zeros(self.n, dtype=bool)
        for _, j in self.edges:
            has_pred[j] = True
        return np.flatnonzero(~has_pred).tolist()

    def chain_order(self) -> Optional[np.ndarray]:
        """Node sequence if the order is a single chain, else None."""
        n = self.n
        if len(self.edges) != n - 1:
            return None
        nxt = -np.ones(n, dtype=int)
        indeg = np.zeros(n, dtype=int)
        for i, j in self.edges:
            if nxt[i] >= 0:
                return None
            nxt[i] = j
            indeg[j] += 1
        if np.any(indeg > 1):
            return None
        start = np.flatnonzero(indeg == 0)
        if start.size != 1:
            return None
        seq = [int(start[0])]
        while nxt[seq[-1]] >= 0:
            seq.append(int(nxt[seq[-1]]))
        return np.array(seq) if len(seq) == n else None

    def incidence(self) -> np.ndarray:
        """Edge-by-node matrix with +1 at the tail and -1 at the head of each edge."""
        M = np.zeros((len(self.edges), self.n))
        for r, (i, j) in enumerate(self.edges):
            M[r, i] = 1.0
            M[r, j] = -1.0
        return M

    def constraint_system(self) -> ConstraintSystem:
        return ConstraintSystem(self.incidence(), np.zeros(len(self.edges)),
                                [f"{i}<={j}" for i, j in self.edges])

    # generators

    @classmethod
    def chain(cls, n: int) -> "PartialOrder":
        return cls(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def lattice(cls, shape) -> "PartialOrder":
        """Product order on a grid, nodes in row-major order, covering edges only."""
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape))
        idx = np.arange(n).reshape(shape)
        edges = []
        for ax in range(len(shape)):
            lo = np.take(idx, np.arange(shape[ax] - 1), axis=ax).ravel()
            hi = np.take(idx, np.arange(1, shape[ax]), axis=ax).ravel()
            edges.extend(zip(lo.tolist(), hi.tolist()))
        return cls(n, sorted(edges))

    @classmethod
    def from_points(cls, X, reduce: bool = True) -> "PartialOrder":
        """Componentwise order on design points ``X`` (n x d).

        With ``reduce`` only covering pairs are kept.  The feasible set, the
        fit and the component counts are the same for the full order and its
        transitive reduction; the reduction just has fewer rows.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        R = np.all(X[:, None, :] <= X[None, :, :], axis=2)
        np.fill_diagonal(R, False)
        if np.any(R & R.T):
            raise ValueError("design points must be distinct")
        if reduce and n > 2:
            Rf = R.astype(np.float32)
            R = R & ~((Rf @ Rf) > 0)
        i, j = np.nonzero(R)
        return cls(n, list(zip(i.tolist(), j.tolist())))

    @classmethod
    def random_dag(cls, n: int, p: float, rng) -> "PartialOrder":
        """Random DAG: a random topological order with each forward pair kept w.p. ``p``."""
        perm = rng.permutation(n)
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < p
        edges = [(int(perm[a]), int(perm[b])) for a, b in zip(iu[keep], ju[keep])]
        return cls(n, edges)


def read_edges(path, n: int) -> PartialOrder:
    """Read an edge-list CSV with header ``i,j`` (0-based node indices)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"i", "j"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header with columns i,j")
        edges = [(int(row["i"]), int(row["j"])) for row in reader]
    return PartialOrder(n, edges)


def write_edges(order: PartialOrder, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j"])
        w.writerows(order.edges)


# ---------------------------------------------------------------------------
# bounded system


@dataclass(frozen=True)
class BoundedIsotonicSystem:
    """Isotonic constraints plus ``theta_i <= theta_j + lam`` for ``i`` maximal, ``j`` minimal.

    Rows are the order edges first, then the bound edges in lexicographic
    order.  Pairs with ``i == j`` (isolated nodes) give the vacuous row
    ``0 <= lam`` and are left out.  ``lam = inf`` means no bound edges.
    """

    order: PartialOrder
    lam: float = math.inf
    augmented_edges: tuple = field(init=False)

    def __post_init__(self):
        lam = float(self.lam)
        if not lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        object.__setattr__(self, "lam", lam)
        if math.isinf(lam):
            aug = ()
        else:
            aug = tuple((i, j) for i in self.order.max_nodes for j in self.order.min_nodes
                        if i != j)
        object.__setattr__(self, "augmented_edges", aug)

    @property
    def n(self) -> int:
        return self.order.n

    @property
    def all_edges(self) -> tuple:
        return self.order.edges + self.augmented_edges

    def with_lam(self, lam) -> "BoundedIsotonicSystem":
        return BoundedIsotonicSystem(self.order, lam)

    def constraint_system(self) -> ConstraintSystem:
        edges = self.all_edges
        A = np.zeros((len(edges), self.n))
        for r, (i, j) in enumerate(edges):
            A[r, i] = 1.0
            A[r, j] = -1.0
        ne = len(self.order.edges)
        b = np.zeros(len(edges))
        b[ne:] = self.lam
        labels = [f"{i}<={j}" for i, j in self.order.edges]
        labels += [f"{i}<={j}+lam" for i, j in self.augmented_edges]
        return ConstraintSystem(A, b, labels)


@dataclass(frozen=True)
class GroupStructure:
    """Level sets of an isotonic fit: ``groups[s]`` holds the nodes at level ``levels[s]``."""

    groups: tuple
    levels: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        levels = np.asarray(self.levels, dtype=float)
        sizes = np.asarray(self.sizes, dtype=int)
        if not (len(groups) == levels.size == sizes.size):
            raise ValueError("groups, levels and sizes must have equal length")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(len(flat))):
            raise ValueError("groups must partition 0..n-1")
        if any(len(g) != k for g, k in zip(groups, sizes)):
            raise ValueError("sizes do not match groups")
        levels.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "sizes", sizes)

    @property
    def r(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @classmethod
    def from_fit(cls, theta, rtol: float = GROUP_RTOL) -> "GroupStructure":
        """Merge fitted values that agree within ``rtol * (1 + max|theta|)``."""
        theta = np.asarray(theta, dtype=float)
        tol = rtol * (1.0 + np.max(np.abs(theta)))
        order = np.argsort(theta, kind="stable")
        vals = theta[order]
        cuts = np.flatnonzero(np.diff(vals) > tol) + 1
        groups = np.split(order, cuts)
        levels = np.array([theta[g].mean() for g in groups])
        return cls(tuple(sorted(g.tolist()) for g in groups), levels,
                   np.array([g.size for g in groups]))

    def expand(self, levels) -> np.ndarray:
        out = np.empty(self.n)
        for g, v in zip(self.groups, levels):
            out[list(g)] = v
        return out


# ---------------------------------------------------------------------------
# fitting


def pava(y, w=None) -> np.ndarray:
    """Pool-adjacent-violators fit of a nondecreasing sequence."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, cnt = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        cnt.append(1)
        while len(vals) > 1 and vals[-2] >= vals[-1]:
            v2, w2, c2 = vals.pop(), wts.pop(), cnt.pop()
            wsum = wts[-1] + w2
            vals[-1] = (wts[-1] * vals[-1] + w2 * v2) / wsum
            wts[-1] = wsum
            cnt[-1] += c2
    return np.repeat(vals, cnt)


def fit_isotonic(order: PartialOrder, y, cfg: Optional[qp.SolverConfig] = None):
    """Unbounded isotonic fit and its level-set structure.

    Chains are fitted by pool-adjacent-violators and checked against the
    KKT conditions of the projection; other orders go through
    :func:`qp.project`.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (order.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({order.n},)")
    sys = order.constraint_system()
    seq = order.chain_order()
    fit = None
    if seq is not None:
        theta = np.empty(order.n)
        theta[seq] = pava(y[seq])
        fit = qp.certify(sys, y, theta, cfg=cfg)
        if fit.status != "optimal":
            warnings.warn("PAVA fit failed KKT certification; using the QP solver",
                          RuntimeWarning, stacklevel=2)
            fit = None
    if fit is None:
        fit = qp.project(sys, y, cfg)
    return fit, GroupStructure.from_fit(fit.theta_hat)


def h_function(gs: GroupStructure, L: float, lam: float) -> float:
    """``sum k_s (L - level_s)_+ + sum k_s (L + lam - level_s)_-``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    lv, k = gs.levels, gs.sizes
    return float(np.sum(k * np.maximum(L - lv, 0.0)) + np.sum(k * np.minimum(L + lam - lv, 0.0)))


def root_L(gs: GroupStructure, lam: float) -> float:
    """Exact root of ``H(., lam)`` for ``0 <= lam <= level range``.

    ``H`` is piecewise linear with kinks at ``level_s`` and ``level_s - lam``,
    so the root is found by locating the sign change among the sorted kinks
    and solving the linear piece.
    """
    lv = gs.levels
    span = float(lv[-1] - lv[0])
    if lam < 0 or lam > span * (1 + 1e-12) + 1e-300:
        raise ValueError(f"lam = {lam} outside [0, {span}]; use the unbounded fit")
    if gs.r == 1:
        return float(lv[0])
    knots = np.unique(np.concatenate([lv, lv - lam]))
    H = np.array([h_function(gs, b, lam) for b in knots])
    hit = np.flatnonzero(H >= 0)
    a = int(hit[0])
    if H[a] == 0 or a == 0:
        return float(knots[a])
    x0, x1, h0, h1 = knots[a - 1], knots[a], H[a - 1], H[a]
    return float(x0 - h0 * (x1 - x0) / (h1 - h0))


def threshold(gs: GroupStructure, lam: float) -> np.ndarray:
    """Clamp the group levels into ``[L, L + lam]`` and expand to nodes."""
    L = root_L(gs, lam)
    return gs.expand(np.clip(gs.levels, L, L + lam))


def fit_bounded(sys: BoundedIsotonicSystem, y, cfg: Optional[qp.SolverConfig] = None,
                unbounded=None) -> qp.FitResult:
    """Bounded isotonic fit by thresholding the unbounded fit.

    ``unbounded`` may pass a precomputed ``(FitResult, GroupStructure)`` from
    :func:`fit_isotonic` to reuse it along a grid of bounds.  The thresholded
    point is certified against the KKT conditions of the bounded problem;
    if that fails the bounded projection is solved directly.
    """
    y = np.asarray(y, dtype=float)
    if unbounded is None:
        unbounded = fit_isotonic(sys.order, y, cfg)
    ufit, gs = unbounded
    cs = sys.constraint_system()
    span = float(gs.levels[-1] - gs.levels[0])
    if math.isinf(sys.lam) or gs.r == 1 or sys.lam >= span:
        theta = ufit.theta_hat
    else:
        theta = threshold(gs, sys.lam)
    fit = qp.certify(cs, y, theta, cfg=cfg)
    if fit.status != "optimal":
        warnings.warn("thresholded fit failed KKT certification; solving the projection",
                      RuntimeWarning, stacklevel=2)
        fit = qp.project(cs, y, cfg)
    return fit


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.count = n

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb
            self.count -= 1


def divergence_components(sys: BoundedIsotonicSystem, fit: qp.FitResult,
                          tol: Optional[float] = None) -> int:
    """Number of connected components of the graph of binding edges."""
    if tol is None:
        active = fit.active.indices
    else:
        active = active_set(sys.constraint_system(), fit.theta_hat, tol).indices
    edges = sys.all_edges
    uf = UnionFind(sys.n)
    for r in active:
        i, j = edges[r]
        uf.union(i, j)
    return uf.count
