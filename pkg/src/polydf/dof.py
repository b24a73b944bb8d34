"""Divergence formulas and the oracles used to check them.

Formulas (``J`` = active rows, ``I`` = maximal independent subset of ``J``):

* plain projection: ``n - rank(A_J)``
* linearly perturbed partial projection: ``n - |I| + rank(A_I)``
* quadratically perturbed: ``n - tr(B_I' (B_I B_I' + A_I A_I' / lam)^{-1} B_I)``
* bounded isotonic: number of connected components of the binding graph

Oracles: central finite differences of the fit map, and the Monte-Carlo
covariance definition of degrees of freedom with a jackknife standard error.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import isotonic, problems, qp
from .geometry import (ConstraintSystem, LiftedSystem, Quadratic, maximal_independent_rows,
                       rank_info)

METHODS = ("rank_formula", "components", "lifted_rank_formula", "trace_formula",
           "closed_form", "finite_difference", "monte_carlo")
COEF_RTOL = 1e-6


@dataclass(frozen=True)
class DivergenceReport:
    value: float
    method: str
    near_degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


class UnstableDivergence(RuntimeError):
    """The active set kept changing across finite-difference probes."""


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Philox-4x64-10 generator keyed by ``(seed, rep)`` with a zero counter."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(rep) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def pmap(fn, items, workers: int = 1):
    """Ordered map, optionally on a thread pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# formulas


def _rows(fit: qp.FitResult):
    return np.array(fit.active.indices, dtype=int)


def divergence_polyhedral(sys: ConstraintSystem, fit: qp.FitResult) -> DivergenceReport:
    J = _rows(fit)
    if J.size == 0:
        return DivergenceReport(float(sys.n), "rank_formula", fit.active.near_degenerate,
                                {"active": 0, "rank": 0})
    info = rank_info(sys.A[J])
    return DivergenceReport(float(sys.n - info.rank), "rank_formula",
                            fit.active.near_degenerate or info.tie,
                            {"active": int(J.size), "rank": info.rank, "rank_tie": info.tie})


def _independent(sys: LiftedSystem, fit: qp.FitResult):
    J = _rows(fit)
    if J.size == 0:
        return J
    keep = maximal_independent_rows(sys.A[J], sys.B[J])
    return np.sort(J[keep])


def divergence_lifted_linear(sys, fit: qp.FitResult) -> DivergenceReport:
    if isinstance(sys, ConstraintSystem):
        sys = sys.as_lifted()
    if isinstance(sys.perturbation, Quadratic):
        raise ValueError("quadratic perturbation: use divergence_lifted_quadratic")
    I = _independent(sys, fit)
    rank_A = rank_info(sys.A[I]) if I.size and sys.p else None
    rA = rank_A.rank if rank_A is not None else 0
    value = sys.n - I.size + rA
    if value < 0:
        raise AssertionError(f"negative divergence {value}: active-set selection is inconsistent")
    tie = bool(rank_A.tie) if rank_A is not None else False
    return DivergenceReport(float(value), "lifted_rank_formula",
                            fit.active.near_degenerate or tie,
                            {"active": len(fit.active), "independent": int(I.size),
                             "rank_A_I": rA})


def divergence_lifted_quadratic(sys: LiftedSystem, fit: qp.FitResult) -> DivergenceReport:
    pert = sys.perturbation
    if not isinstance(pert, Quadratic):
        raise ValueError("divergence_lifted_quadratic needs a quadratic perturbation")
    I = _independent(sys, fit)
    if I.size == 0:
        return DivergenceReport(float(sys.n), "trace_formula", fit.active.near_degenerate,
                                {"independent": 0})
    A_I, B_I = sys.A[I], sys.B[I]
    K = B_I @ B_I.T + (A_I @ A_I.T) / pert.lam
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "Gram matrix of the independent active rows is not positive definite") from exc
    W = sla.solve_triangular(L, B_I, lower=True)
    tr = float(np.sum(W * W))
    return DivergenceReport(sys.n - tr, "trace_formula", fit.active.near_degenerate,
                            {"independent": int(I.size), "trace": tr})


def closed_form_ridge(X, lam) -> float:
    """``tr(X (lam I + X'X)^{-1} X')`` via singular values."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    s2 = s * s
    return float(np.sum(s2 / (s2 + lam)))


def coef_tol(beta) -> float:
    beta = np.asarray(beta, dtype=float)
    return COEF_RTOL * (1.0 + (float(np.max(np.abs(beta))) if beta.size else 0.0))


def lasso_df(X, beta, tol=None) -> int:
    """``rank(X_S)`` over the support ``S`` of ``beta``."""
    X = np.asarray(X, dtype=float)
    tol = coef_tol(beta) if tol is None else tol
    S = np.abs(beta) > tol
    return rank_info(X[:, S]).rank if S.any() else 0


def generalized_lasso_df(X, D, beta, tol=None) -> int:
    """``dim(X ker D_0)`` with ``D_0`` the rows of ``D`` where ``D beta = 0``."""
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    tol = coef_tol(beta) if tol is None else tol
    D0 = D[np.abs(D @ beta) <= tol]
    if D0.shape[0] == 0:
        return rank_info(X).rank
    N = sla.null_space(D0)
    if N.shape[1] == 0:
        return 0
    return rank_info(X @ N).rank


def divergence(problem: problems.ProblemSpec, fit: qp.FitResult) -> DivergenceReport:
    """Divergence of ``problem``'s estimator at ``fit`` by the matching formula."""
    sys = problem.system()
    if isinstance(sys, isotonic.BoundedIsotonicSystem):
        value = isotonic.divergence_components(sys, fit)
        return DivergenceReport(float(value), "components", fit.active.near_degenerate,
                                {"active": len(fit.active)})
    if isinstance(sys, ConstraintSystem):
        return divergence_polyhedral(sys, fit)
    if isinstance(sys.perturbation, Quadratic):
        return divergence_lifted_quadratic(sys, fit)
    return divergence_lifted_linear(sys, fit)


# ---------------------------------------------------------------------------
# oracles


def finite_difference_divergence(fit_fn: Callable, y, h: Optional[float] = None,
                                 max_retries: int = 5, seed: int = 0,
                                 check_active: bool = True) -> DivergenceReport:
    """Central-difference divergence ``sum_i d theta_i / d y_i``.

    ``fit_fn`` maps ``y`` to a :class:`qp.FitResult` (or to ``theta``).
    When the active set differs between the base point and any probe the
    map is not locally affine there; ``y`` is then jittered by
    ``N(0, (1e-6)^2)`` noise, the step is divided by ten (so that the probes
    stay on one side of a kink the jitter only just escaped) and the
    computation repeated, at most ``max_retries`` times.
    """
    y0 = np.asarray(y, dtype=float)
    n = y0.size
    step = 1e-5 * (1.0 + np.max(np.abs(y0))) if h is None else float(h)
    if not step > 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)

    def run(v):
        out = fit_fn(v)
        if isinstance(out, qp.FitResult):
            return out.theta_hat, out.active.indices
        return np.asarray(out, dtype=float), None

    yy = y0
    h0 = step
    for attempt in range(max_retries + 1):
        step = h0 / 10**attempt
        _, base_act = run(yy)
        total = 0.0
        stable = True
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            tp, ap = run(yy + e)
            tm, am = run(yy - e)
            if check_active and base_act is not None and (ap != base_act or am != base_act):
                stable = False
                break
            total += (tp[i] - tm[i]) / (2 * step)
        if stable:
            return DivergenceReport(total, "finite_difference", False,
                                    {"h": step, "retries": attempt})
        yy = y0 + rng.normal(0.0, 1e-6, size=n)
    raise UnstableDivergence(f"active set changed across probes after {max_retries} retries")


@dataclass(frozen=True)
class MonteCarloDF:
    """Covariance-based DF per grid point with jackknife standard errors.

    ``formula_mean`` / ``formula_se`` summarise the per-replication formula
    divergences when the fit map reports them.
    """

    value: np.ndarray
    se: np.ndarray
    formula_mean: Optional[np.ndarray] = None
    formula_se: Optional[np.ndarray] = None
    replications: int = 0


def _cov_df(Y, T, sigma):
    """DF estimate and jackknife SE from ``Y`` (R x n) and fits ``T`` (R x n)."""
    R = Y.shape[0]
    Sy, St, Sty = Y.sum(0), T.sum(0), (Y * T).sum(0)
    cov = (Sty - St * Sy / R) / (R - 1)
    df = float(cov.sum() / sigma**2)
    if R < 3:
        return df, float("nan")
    # leave-one-out covariances, vectorised over replications
    Sy_l = Sy[None, :] - Y
    St_l = St[None, :] - T
    Sty_l = Sty[None, :] - Y * T
    cov_l = (Sty_l - St_l * Sy_l / (R - 1)) / (R - 2)
    df_l = cov_l.sum(1) / sigma**2
    se = math.sqrt((R - 1) / R * float(np.sum((df_l - df_l.mean()) ** 2)))
    return df, se


def monte_carlo_df(truth, sigma: float, fit_fn: Callable, replications: int, seed: int,
                   workers: int = 1):
    """``(1/sigma^2) sum_i cov(theta_hat_i, y_i)`` over ``replications`` draws.

    Returns ``(df, standard_error)``.
    """
    res = monte_carlo_df_curve(truth, sigma, lambda y: (np.asarray(_theta(fit_fn(y)))[None, :], None),
                               replications, seed, workers)
    return float(res.value[0]), float(res.se[0])


def _theta(out):
    return out.theta_hat if isinstance(out, qp.FitResult) else out


def monte_carlo_df_curve(truth, sigma: float, fit_grid: Callable, replications: int,
                         seed: int, workers: int = 1) -> MonteCarloDF:
    """Covariance DF along a tuning grid with common random numbers.

    ``fit_grid(y)`` returns ``(thetas, divergences)``: fits for every grid
    value (G x n) and optionally the formula divergences (G,).  Replication
    ``r`` uses :func:`replication_rng` ``(seed, r)``.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    truth = np.asarray(truth, dtype=float)

    def one(r):
        y = truth + sigma * replication_rng(seed, r).standard_normal(truth.size)
        thetas, divs = fit_grid(y)
        return y, np.asarray(thetas, dtype=float), divs

    out = pmap(one, range(replications), workers)
    Y = np.stack([o[0] for o in out])
    T = np.stack([o[1] for o in out])          # R x G x n
    G = T.shape[1]
    vals, ses = np.empty(G), np.empty(G)
    for g in range(G):
        vals[g], ses[g] = _cov_df(Y, T[:, g, :], sigma)
    fmean = fse = None
    if out[0][2] is not None:
        Dm = np.array([o[2] for o in out], dtype=float)
        fmean = Dm.mean(0)
        fse = Dm.std(0, ddof=1) / math.sqrt(replications)
    return MonteCarloDF(vals, ses, fmean, fse, replications)
