"""Stein's unbiased risk estimate and tuning-parameter selection.

``U(lam) = ||y - theta_lam||^2 + 2 sigma^2 D(lam) - n sigma^2`` is an
unbiased estimate of the loss ``L(lam) = ||theta_lam - theta*||^2``.
:func:`tune` minimises it over a grid; the experiment drivers compare the
loss at the selected parameter with the oracle choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dof, isotonic, problems, qp

# replication index reserved for the fixed design of the convex experiment
DESIGN_STREAM = 2**64 - 1


def sure_value(y, theta_hat, divergence, sigma) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    r = y - np.asarray(theta_hat, dtype=float)
    return float(r @ r + 2 * sigma**2 * divergence - y.size * sigma**2)


@dataclass
class SureCurve:
    grid: np.ndarray
    rss: np.ndarray
    divergence: np.ndarray
    U: np.ndarray
    sigma: float
    n: int
    loss: Optional[np.ndarray] = None
    near_degenerate: Optional[np.ndarray] = None
    kkt: Optional[np.ndarray] = None
    status: list = field(default_factory=list)

    @property
    def lambda_hat(self) -> float:
        # grid is sorted, argmin returns the first (smallest) minimiser
        return float(self.grid[int(np.argmin(self.U))])

    @property
    def lambda_star(self) -> Optional[float]:
        if self.loss is None:
            return None
        return float(self.grid[int(np.argmin(self.loss))])

    def loss_at(self, lam) -> float:
        return float(self.loss[int(np.flatnonzero(self.grid == lam)[0])])

    def records(self):
        for k, lam in enumerate(self.grid):
            yield {
                "lambda": float(lam),
                "rss": float(self.rss[k]),
                "D": float(self.divergence[k]),
                "U_n": float(self.U[k]),
                "L_n": None if self.loss is None else float(self.loss[k]),
                "near_degenerate": None if self.near_degenerate is None
                else bool(self.near_degenerate[k]),
            }


class TuneError(RuntimeError):
    def __init__(self, message, partial: Optional[SureCurve] = None):
        super().__init__(message)
        self.partial = partial


def _curve(grid, rows, sigma, n, truth):
    k = len(rows)
    g = np.asarray(grid[:k], dtype=float)
    rss = np.array([r[0] for r in rows])
    D = np.array([r[1] for r in rows])
    U = rss + 2 * sigma**2 * D - n * sigma**2
    loss = np.array([r[2] for r in rows]) if truth is not None else None
    return SureCurve(g, rss, D, U, sigma, n, loss,
                     np.array([r[3] for r in rows], dtype=bool),
                     np.array([r[4] for r in rows]), [r[5] for r in rows])


def tune(problem: problems.ProblemSpec, grid, sigma: float, cfg: Optional[qp.SolverConfig] = None,
         truth=None, y=None, keep_fits: bool = False):
    """SURE over ``grid`` (sorted ascending); returns a :class:`SureCurve`.

    Each fit is warm-started from the previous one.  ``truth`` adds the
    loss column.  With ``keep_fits`` the fits are returned as well.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = problem.data.y if y is None else np.asarray(y, dtype=float)
    n = y.size
    truth = None if truth is None else np.asarray(truth, dtype=float)
    unbounded = None
    if problem.kind in ("univariate_isotonic", "bounded_isotonic_poset"):
        unbounded = isotonic.fit_isotonic(problem.poset(), y, cfg)
    rows, fits = [], []
    warm = None
    for lam in grid:
        spec = problem.with_param(lam) if problem.kind in problems.TUNED else problem
        try:
            fit = problems.fit(spec, y, cfg, warm=warm, unbounded=unbounded)
        except qp.SolverError as exc:
            partial = _curve(grid, rows, sigma, n, truth) if rows else None
            raise TuneError(f"solver failed at lambda={lam}: {exc}", partial) from exc
        if fit.status != "optimal":
            partial = _curve(grid, rows, sigma, n, truth) if rows else None
            raise TuneError(f"solver status {fit.status} at lambda={lam}", partial)
        rep = dof.divergence(spec, fit)
        r = y - fit.theta_hat
        loss = float(np.sum((fit.theta_hat - truth) ** 2)) if truth is not None else None
        rows.append((float(r @ r), rep.value, loss, rep.near_degenerate,
                     fit.max_kkt_residual, fit.status))
        if keep_fits:
            fits.append(fit)
        warm = fit
    curve = _curve(grid, rows, sigma, n, truth)
    return (curve, fits) if keep_fits else curve


def default_grid(problem: problems.ProblemSpec, num: int = 30, y=None) -> np.ndarray:
    """Log-spaced grid scaled to the data.

    Bounded isotonic: fractions of the range of the unbounded fit, ending
    at that range.  Ridge / penalized convex: zero followed by a log grid.
    Lasso kinds: fractions of the smallest penalty giving the null fit.
    """
    y = problem.data.y if y is None else np.asarray(y, dtype=float)
    k = problem.kind
    if k == "bounded_isotonic_poset":
        fit, _ = isotonic.fit_isotonic(problem.poset(), y)
        span = float(np.ptp(fit.theta_hat))
        if span == 0:
            return np.array([0.0])
        return span * np.logspace(-2, 0, num)
    if k == "ridge":
        s = np.linalg.svd(problem.data.X, compute_uv=False)
        top = float(s[0] ** 2) if s.size else 1.0
        return np.concatenate([[0.0], top * np.logspace(-4, 1, num - 1)])
    if k == "penalized_convex":
        return np.concatenate([[0.0], np.logspace(-4, 1, num - 1)])
    if k in ("lasso", "generalized_lasso"):
        X = problem.data.X
        if k == "lasso":
            tmax = float(np.max(np.abs(X.T @ y)))
        else:
            tmax = float(np.max(np.abs(X.T @ y))) * 2.0
        return tmax * np.concatenate([[0.0], np.logspace(-3, 0, num - 1)])
    return np.array([0.0])


# ---------------------------------------------------------------------------
# simulation studies


def quadratic_truth(X) -> np.ndarray:
    return np.sum(np.asarray(X) ** 2, axis=1)


@dataclass(frozen=True)
class RatioConfig:
    """Ratio experiment.

    ``kind`` is ``"isotonic"`` (design ``U[0,1]^d`` redrawn per replication,
    grid ``range * logspace(-2, 0, grid_size)`` of the unbounded fit) or
    ``"convex"`` (design ``U[-1,1]^d`` fixed across replications, grid
    ``{0} U logspace(lo, hi, grid_size - 1)``).  The truth is ``||x||^2``.
    """

    kind: str
    n: int
    d: int
    sigma: float
    replications: int
    seed: int
    grid_size: int = 30
    convex_log_range: tuple = (-4.0, 1.0)
    workers: int = 1
    method: str = "active_set"

    def __post_init__(self):
        if self.kind not in ("isotonic", "convex"):
            raise ValueError("kind must be 'isotonic' or 'convex'")
        if self.replications < 1 or self.n < 2 or self.d < 1:
            raise ValueError("need replications >= 1, n >= 2, d >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass
class RatioResult:
    config: RatioConfig
    sure_ratio: np.ndarray
    reference_ratio: np.ndarray
    lambda_hat: np.ndarray
    lambda_star: np.ndarray
    max_kkt: np.ndarray
    curves: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        def agg(v):
            q = np.quantile(v, [0.05, 0.25, 0.5, 0.75, 0.95])
            return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                    "q05": float(q[0]), "q25": float(q[1]), "median": float(q[2]),
                    "q75": float(q[3]), "q95": float(q[4])}
        return {"kind": self.config.kind, "n": self.config.n, "d": self.config.d,
                "replications": self.config.replications,
                "sure_ratio": agg(self.sure_ratio), "reference_ratio": agg(self.reference_ratio),
                "max_kkt": float(self.max_kkt.max())}

    def rows(self):
        for r in range(self.sure_ratio.size):
            yield {"replication": r, "kind": self.config.kind, "n": self.config.n,
                   "d": self.config.d, "sure_ratio": float(self.sure_ratio[r]),
                   "reference_ratio": float(self.reference_ratio[r]),
                   "lambda_hat": float(self.lambda_hat[r]),
                   "lambda_star": float(self.lambda_star[r])}


def ratio_experiment(config: RatioConfig, keep_curves: bool = False) -> RatioResult:
    """Per replication: ``L(lam_hat) / L(lam*)`` and the reference ratio.

    The reference is the unbounded fit (isotonic; the last grid point) or
    the unpenalized fit (convex; ``lam = 0``).  Both lie on the grid, so
    both ratios are at least one.
    """
    cfg = qp.SolverConfig(method=config.method)
    c = config
    if c.kind == "convex":
        drng = dof.replication_rng(c.seed, DESIGN_STREAM)
        X_fixed = drng.uniform(-1.0, 1.0, size=(c.n, c.d))
        base = problems.ProblemSpec("penalized_convex", problems.Dataset(
            X_fixed, np.zeros(c.n)), 0.0)
        base.system()  # build the constraint rows once
        grid = np.concatenate([[0.0], np.logspace(*c.convex_log_range, c.grid_size - 1)])

    def one(r):
        rng = dof.replication_rng(c.seed, r)
        if c.kind == "isotonic":
            X = rng.uniform(0.0, 1.0, size=(c.n, c.d))
            truth = quadratic_truth(X)
            y = truth + c.sigma * rng.standard_normal(c.n)
            spec = problems.ProblemSpec("bounded_isotonic_poset",
                                        problems.Dataset(X, y), math.inf)
            g = default_grid(spec, c.grid_size)
            curve = tune(spec, g, c.sigma, cfg, truth=truth)
            ref = curve.loss[-1]
        else:
            truth = quadratic_truth(X_fixed)
            y = truth + c.sigma * rng.standard_normal(c.n)
            curve = tune(base, grid, c.sigma, cfg, truth=truth, y=y)
            ref = curve.loss[0]
        best = curve.loss.min()
        return (curve.loss_at(curve.lambda_hat) / best, ref / best,
                curve.lambda_hat, curve.lambda_star, float(curve.kkt.max()), curve)

    out = dof.pmap(one, range(c.replications), c.workers)
    res = RatioResult(c, np.array([o[0] for o in out]), np.array([o[1] for o in out]),
                      np.array([o[2] for o in out]), np.array([o[3] for o in out]),
                      np.array([o[4] for o in out]))
    if keep_curves:
        res.curves = [o[5] for o in out]
    return res


@dataclass
class DFCompare:
    grid: np.ndarray
    formula_df: np.ndarray
    formula_se: np.ndarray
    mc_df: np.ndarray
    mc_se: np.ndarray
    max_kkt: float

    def rows(self):
        for k, lam in enumerate(self.grid):
            yield {"lambda": float(lam), "formula_df": float(self.formula_df[k]),
                   "formula_se": float(self.formula_se[k]), "mc_df": float(self.mc_df[k]),
                   "mc_se": float(self.mc_se[k])}


def isotonic_design(n, d, seed):
    """Fixed design ``U[0,1]^d`` from the design stream and its truth ``||x||^2``."""
    X = dof.replication_rng(seed, DESIGN_STREAM).uniform(0.0, 1.0, size=(n, d))
    return X, quadratic_truth(X)


def df_compare(n: int, d: int, sigma: float, grid, replications: int, seed: int,
               workers: int = 1) -> DFCompare:
    """Mean component-count divergence against the covariance DF along ``grid``.

    The design is fixed; responses use common random numbers across the grid.
    """
    X, truth = isotonic_design(n, d, seed)
    order = isotonic.PartialOrder.from_points(X)
    grid = np.asarray(grid, dtype=float)
    systems = [isotonic.BoundedIsotonicSystem(order, lam) for lam in grid]
    kkt = []

    def fit_grid(y):
        u = isotonic.fit_isotonic(order, y)
        th, dv = [], []
        for S in systems:
            f = isotonic.fit_bounded(S, y, unbounded=u)
            kkt.append(f.max_kkt_residual)
            th.append(f.theta_hat)
            dv.append(isotonic.divergence_components(S, f))
        return np.array(th), np.array(dv, dtype=float)

    mc = dof.monte_carlo_df_curve(truth, sigma, fit_grid, replications, seed, workers)
    return DFCompare(grid, mc.formula_mean, mc.formula_se, mc.value, mc.se, float(max(kkt)))


@dataclass
class Unbiasedness:
    grid: np.ndarray
    mean_U: np.ndarray
    mean_L: np.ndarray
    se_U: np.ndarray
    se_L: np.ndarray
    max_kkt: float

    @property
    def combined_se(self) -> np.ndarray:
        return np.sqrt(self.se_U**2 + self.se_L**2)


def unbiasedness_experiment(n: int, d: int, sigma: float, grid, replications: int,
                            seed: int, workers: int = 1) -> Unbiasedness:
    """Mean SURE against mean loss for bounded isotonic on a fixed design."""
    X, truth = isotonic_design(n, d, seed)
    spec = problems.ProblemSpec("bounded_isotonic_poset", problems.Dataset(X, truth), math.inf)
    spec.poset()
    grid = np.asarray(grid, dtype=float)

    def one(r):
        y = truth + sigma * dof.replication_rng(seed, r).standard_normal(n)
        curve = tune(spec, grid, sigma, truth=truth, y=y)
        return curve.U, curve.loss, float(curve.kkt.max())

    out = dof.pmap(one, range(replications), workers)
    U = np.array([o[0] for o in out])
    L = np.array([o[1] for o in out])
    R = replications
    return Unbiasedness(grid, U.mean(0), L.mean(0), U.std(0, ddof=1) / math.sqrt(R),
                        L.std(0, ddof=1) / math.sqrt(R), max(o[2] for o in out))
