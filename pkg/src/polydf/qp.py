"""Projection and (perturbed) partial projection onto polyhedra.

All three problem classes are instances of one convex QP in ``x = (xi, theta)``::

    minimize    1/2 ||theta - y||^2 + (rho/2) ||xi||^2 + d^T xi
    subject to  A xi + B theta <= c

with ``rho = 0`` (plain or linearly perturbed) or ``rho = lam > 0``
(quadratically perturbed).  The Hessian is diagonal, which the solver uses.

The default method runs an operator-splitting (ADMM) loop to moderate
accuracy, guesses the active set from the primal slacks and dual
estimates, and then *polishes*: it solves the equality-constrained problem
on that set exactly (null-space method) and verifies the KKT conditions of
the original problem.  A failed verification triggers a few active-set
repair rounds and, failing that, more splitting iterations at a tighter
tolerance.  Integer-valued divergence formulas depend on getting the
active set exactly right, which first-order iterates alone do not deliver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog, nnls

from .geometry import (ActiveSet, ConstraintSystem, Linear, LiftedSystem, Quadratic,
                       active_set, maximal_independent_rows)

logger = logging.getLogger(__name__)

METHODS = ("operator_splitting_with_polish", "active_set")
STATUSES = ("optimal", "max_iter", "infeasible", "unbounded")

# ADMM tolerance stages; each failed polish moves to the next one.
_STAGES = (1e-4, 1e-6, 1e-8, 1e-10)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50_000
    primal_tol: float = 1e-9
    dual_tol: float = 1e-9
    method: str = "operator_splitting_with_polish"
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    # regularisation of the xi block when the objective is flat there
    xi_regularization: float = 1e-10
    max_polish_rounds: int = 8
    # splitting iterations per tolerance stage before the exact fallback
    splitting_iterations: int = 2000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.primal_tol > 0 and self.dual_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass(frozen=True)
class FitResult:
    """Solution of a projection problem.

    ``duals`` has one nonnegative entry per constraint row.  ``kkt`` holds
    the residuals of the original (unregularised) KKT system at the
    returned point: ``stationarity``, ``primal``, ``dual`` and
    ``complementarity``, all in infinity norm.
    """

    theta_hat: np.ndarray
    xi_hat: Optional[np.ndarray]
    duals: np.ndarray
    active: ActiveSet
    objective: float
    status: str
    iterations: int = 0
    kkt: dict = field(default_factory=dict)
    method: str = ""

    @property
    def x(self) -> np.ndarray:
        if self.xi_hat is None:
            return self.theta_hat
        return np.concatenate([self.xi_hat, self.theta_hat])

    @property
    def max_kkt_residual(self) -> float:
        return max(self.kkt.values()) if self.kkt else float("nan")


class SolverError(RuntimeError):
    def __init__(self, message, result: Optional[FitResult] = None):
        super().__init__(message)
        self.result = result


class InfeasibleError(SolverError):
    pass


class UnboundedError(SolverError):
    pass


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class _QP:
    pvec: np.ndarray      # diagonal Hessian
    q: np.ndarray
    G: np.ndarray         # dense m x N
    c: np.ndarray
    p: int                # xi length
    flat: np.ndarray      # mask of coordinates with zero curvature

    def __post_init__(self):
        # per-row primal tolerance multiplier: slack is compared in row-norm units
        self.rowscale = np.maximum(1.0, np.linalg.norm(self.G, axis=1)) if self.G.size \
            else np.ones(self.c.size)

    @property
    def N(self):
        return self.pvec.size

    def objective(self, x):
        return float(0.5 * x @ (self.pvec * x) + self.q @ x)


def _assemble(sys: LiftedSystem, y) -> _QP:
    y = np.asarray(y, dtype=float)
    if y.shape != (sys.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({sys.n},)")
    pert = sys.perturbation
    rho = pert.lam if isinstance(pert, Quadratic) else 0.0
    d = pert.d if isinstance(pert, Linear) else np.zeros(sys.p)
    pvec = np.concatenate([np.full(sys.p, rho), np.ones(sys.n)])
    q = np.concatenate([d, -y])
    return _QP(pvec, q, sys.G, np.asarray(sys.c, dtype=float), sys.p, pvec == 0.0)


def _kkt(qp: _QP, x, mu) -> dict:
    grad = qp.pvec * x + qp.q
    slack = qp.c - qp.G @ x
    return {
        "stationarity": float(np.max(np.abs(grad + qp.G.T @ mu))) if x.size else 0.0,
        "primal": float(max(0.0, -slack.min())) if slack.size else 0.0,
        "dual": float(max(0.0, -mu.min())) if mu.size else 0.0,
        "complementarity": float(np.max(np.abs(mu * slack))) if mu.size else 0.0,
    }


def _tolerances(qp: _QP, cfg: SolverConfig):
    scale = 1.0 + (float(np.max(np.abs(qp.q))) if qp.q.size else 0.0)
    return cfg.primal_tol * scale, cfg.dual_tol * scale


# ---------------------------------------------------------------------------
# equality-constrained subproblem


def _eqp(qp: _QP, rows, order_hint=None, x_ref=None, reg=1e-10):
    """Minimise the objective subject to ``G[rows] x = c[rows]``.

    Along directions where the restricted objective is flat the minimiser
    is not unique; there the component of ``x_ref`` (the current iterate)
    is kept, which is what keeps inactive rows feasible.

    Returns ``(x, mu_rows, independent)`` with ``mu_rows`` the multipliers
    of the maximal independent subset ``independent`` (indices into G), or
    ``None`` when the subproblem is infeasible or unbounded.
    """
    rows = np.asarray(rows, dtype=int)
    N = qp.N
    if rows.size:
        if order_hint is not None:
            order = np.argsort(-order_hint[rows], kind="stable")
        else:
            order = None
        keep = maximal_independent_rows(qp.G[rows], None, order=order)
        I = np.sort(rows[keep])
    else:
        I = rows
    k = I.size
    if k:
        GI = qp.G[I]
        Q, R = sla.qr(GI.T, mode="full")
        R1 = R[:k]
        Q1, Q2 = Q[:, :k], Q[:, k:]
        xp = Q1 @ sla.solve_triangular(R1, qp.c[I], trans="T")
    else:
        Q1 = np.zeros((N, 0))
        Q2 = np.eye(N)
        xp = np.zeros(N)
        R1 = np.zeros((0, 0))
    if Q2.shape[1]:
        H = Q2.T @ (qp.pvec[:, None] * Q2)
        g = Q2.T @ (qp.pvec * xp + qp.q)
        w = None
        if not qp.flat.any():
            try:
                w = -sla.cho_solve(sla.cho_factor(H), g)
            except np.linalg.LinAlgError:
                w = None
        if w is None:
            evals, V = np.linalg.eigh(H)
            gv = V.T @ g
            big = evals > reg * max(1.0, float(evals.max(initial=0.0)))
            # a gradient component along a flat direction means no minimiser
            if np.any(np.abs(gv[~big]) > 1e-8 * (1.0 + np.abs(g).max())):
                return None
            w = -(V[:, big] @ (gv[big] / evals[big]))
            if x_ref is not None and not big.all():
                Vf = V[:, ~big]
                w = w + Vf @ (Vf.T @ (Q2.T @ (x_ref - xp)))
        x = xp + Q2 @ w
    else:
        x = xp
    if k:
        if np.max(np.abs(qp.G[rows] @ x - qp.c[rows])) > 1e-7 * (1.0 + np.abs(x).max()):
            return None  # dependent rows with inconsistent right-hand sides
        grad = qp.pvec * x + qp.q
        mu_I = sla.solve_triangular(R1, Q1.T @ (-grad))
    else:
        mu_I = np.zeros(0)
    return x, mu_I, I


def _recover_duals(qp: _QP, x, rows, dtol):
    """Nonnegative multipliers on ``rows`` with ``G_rows' mu = -grad``; None if none fit.

    This is a nonnegative least-squares problem, i.e. the dual of projecting
    ``-grad`` onto ``{z : G_rows z <= 0}``, solved with the dual active-set
    routine.
    """
    rows = np.asarray(rows, dtype=int)
    grad = qp.pvec * x + qp.q
    if rows.size == 0:
        return None
    sub = _QP(np.ones(qp.N), grad, qp.G[rows], np.zeros(rows.size), 0,
              np.zeros(qp.N, dtype=bool))
    try:
        _, mu, _, conv = _dual_active_set(sub, None, max_outer=20 * rows.size + 100)
    except InfeasibleError:
        return None
    if conv and np.max(np.abs(grad + qp.G[rows].T @ mu)) <= dtol:
        return mu
    return None


def _polish(qp: _QP, x0, dual_hint, cfg: SolverConfig, J0=None, rounds=None):
    """Active-set polish with verification and repair.

    Returns ``(x, mu_full, rounds_used)`` on a certified KKT point, else None.
    """
    ptol, dtol = _tolerances(qp, cfg)
    m = qp.c.size
    if J0 is None:
        slack = qp.c - qp.G @ x0
        J = set(np.flatnonzero(slack < np.maximum(dual_hint, 0.0)).tolist())
    else:
        J = set(int(i) for i in J0)
    hint = np.array(dual_hint, dtype=float, copy=True)
    x_ref = np.asarray(x0, dtype=float)
    seen = set()
    recoveries = 2
    rounds = cfg.max_polish_rounds if rounds is None else rounds
    for r in range(rounds):
        key = frozenset(J)
        repeat = key in seen
        seen.add(key)
        sol = _eqp(qp, sorted(J), order_hint=hint, x_ref=x_ref)
        if sol is None:
            # drop the rows with the weakest dual evidence and retry
            if not J:
                return None
            Jl = sorted(J, key=lambda i: hint[i])
            for i in Jl[:max(1, len(Jl) // 10)]:
                J.discard(i)
            continue
        x, mu_I, I = sol
        slack = qp.c - qp.G @ x
        violated = np.flatnonzero(slack < -ptol * qp.rowscale)
        if violated.size:
            if repeat:
                J.add(int(violated[np.argmin(slack[violated])]))
            else:
                J.update(violated.tolist())
            x_ref = x
            continue
        if mu_I.size == 0 or mu_I.min() >= -dtol:
            mu = np.zeros(m)
            mu[I] = np.maximum(mu_I, 0.0)
            return x, mu, r + 1
        # with dependent active rows another basis may carry nonnegative multipliers
        Jarr = np.array(sorted(J), dtype=int)
        mu_J = None
        if recoveries and Jarr.size > I.size:
            recoveries -= 1
            mu_J = _recover_duals(qp, x, Jarr, dtol)
        if mu_J is not None:
            mu = np.zeros(m)
            mu[Jarr] = mu_J
            return x, mu, r + 1
        # otherwise release the row that pulls hardest in the wrong direction
        hint[I] = mu_I
        x_ref = x
        J.discard(int(I[np.argmin(mu_I)]))
    return None


# ---------------------------------------------------------------------------
# operator splitting


class _Splitting:
    """OSQP-style ADMM for ``min 1/2 x'Px + q'x  s.t.  Gx <= c`` (rows scaled)."""

    def __init__(self, qp: _QP, cfg: SolverConfig, x0=None, y0=None):
        self.qp = qp
        self.cfg = cfg
        norms = np.linalg.norm(qp.G, axis=1)
        self.live = norms > 0
        self.scale = np.zeros_like(norms)
        self.scale[self.live] = 1.0 / norms[self.live]
        Gs = qp.G[self.live] * self.scale[self.live, None]
        self.Gs = sp.csr_matrix(Gs)
        self.GsT = self.Gs.T.tocsr()
        self.cs = qp.c[self.live] * self.scale[self.live]
        self.GtG = (self.GsT @ self.Gs).toarray()
        self.P = qp.pvec + np.where(qp.flat, cfg.xi_regularization, 0.0)
        self.rho = cfg.rho
        self._factor()
        N = qp.N
        self.x = np.zeros(N) if x0 is None else np.array(x0, dtype=float)
        self.z = np.minimum(self.Gs @ self.x, self.cs)
        if y0 is None:
            self.y = np.zeros(self.cs.size)
        else:
            self.y = np.asarray(y0, dtype=float)[self.live] / self.scale[self.live]
        self.iterations = 0
        self.infeasible = False
        self.unbounded = False

    def _factor(self):
        K = self.rho * self.GtG
        K[np.diag_indices_from(K)] += self.P + self.cfg.sigma
        self.chol = sla.cho_factor(K)

    def duals_unscaled(self):
        mu = np.zeros(self.qp.c.size)
        mu[self.live] = self.y * self.scale[self.live]
        return mu

    def run(self, eps, budget):
        qp, cfg = self.qp, self.cfg
        sigma, alpha = cfg.sigma, cfg.alpha
        x, z, y = self.x, self.z, self.y
        Gs, GsT, cs, P = self.Gs, self.GsT, self.cs, self.P
        check = 10
        converged = False
        y_prev, x_prev = y.copy(), x.copy()
        for it in range(1, budget + 1):
            rhs = sigma * x - qp.q + GsT @ (self.rho * z - y)
            xt = sla.cho_solve(self.chol, rhs)
            zt = Gs @ xt
            x_new = alpha * xt + (1 - alpha) * x
            zr = alpha * zt + (1 - alpha) * z
            z_new = np.minimum(zr + y / self.rho, cs)
            y = y + self.rho * (zr - z_new)
            x, z = x_new, z_new
            if it % check:
                continue
            Gx = Gs @ x
            Px = P * x
            Gty = GsT @ y
            r_prim = float(np.max(np.abs(Gx - z))) if z.size else 0.0
            r_dual = float(np.max(np.abs(Px + qp.q + Gty)))
            e_prim = eps + eps * max(np.max(np.abs(Gx), initial=0.0), np.max(np.abs(z), initial=0.0))
            e_dual = eps + eps * max(np.max(np.abs(Px)), np.max(np.abs(Gty), initial=0.0),
                                     np.max(np.abs(qp.q)))
            if r_prim <= e_prim and r_dual <= e_dual:
                converged = True
                break
            if self._certificates(x, y, x_prev, y_prev, eps):
                break
            x_prev, y_prev = x.copy(), y.copy()
            if it % 50 == 0:
                num = r_prim / max(e_prim - eps, 1e-30) if e_prim > eps else r_prim
                den = r_dual / max(e_dual - eps, 1e-30) if e_dual > eps else r_dual
                if den > 0 and num > 0:
                    new_rho = float(np.clip(self.rho * np.sqrt(num / den), 1e-6, 1e6))
                    if new_rho > 5 * self.rho or new_rho < self.rho / 5:
                        self.rho = new_rho
                        self._factor()
        self.x, self.z, self.y = x, z, y
        self.iterations += it
        return converged

    def _certificates(self, x, y, x_prev, y_prev, eps):
        dy = y - y_prev
        ndy = np.max(np.abs(dy), initial=0.0)
        if ndy > 0:
            if (np.max(np.abs(self.GsT @ dy)) <= eps * ndy
                    and self.cs @ np.maximum(dy, 0.0) < -eps * ndy):
                self.infeasible = True
                return True
        dx = x - x_prev
        ndx = np.max(np.abs(dx))
        if ndx > 0 and self.cs.size:
            if (np.max(np.abs(self.P * dx)) <= eps * ndx
                    and self.qp.q @ dx < -eps * ndx
                    and np.max(self.Gs @ dx) <= eps * ndx):
                self.unbounded = True
                return True
        return False


# ---------------------------------------------------------------------------
# exact dual active-set method


def _dual_active_set(qp: _QP, cfg: SolverConfig, mu0=None, flat_reg=1e-6,
                     max_outer=None):
    """Lawson-Hanson style active-set method on the dual.

    With ``s = P^{-1/2}`` (flat coordinates get curvature ``flat_reg``) the
    dual of the QP is ``min_{mu >= 0} 1/2 ||M mu + g||^2 + c'mu`` with
    ``M = (G diag(s))'`` and ``g = s q``; the primal point is
    ``x = -s (M mu + g)``.  The passive set is kept linearly independent
    through an updated QR factorisation of ``M_P``; a dependent entering
    column is handled by a pivot that moves along the dual null direction
    until a passive variable leaves.

    Returns ``(x, mu, iterations, converged)`` or raises
    :class:`InfeasibleError` when the dual is unbounded.
    """
    m, N = qp.c.size, qp.N
    pv = np.where(qp.flat, flat_reg, qp.pvec)
    sc = 1.0 / np.sqrt(pv)
    Ms = qp.G * sc                     # rows are the dual columns
    Msp = sp.csr_matrix(Ms)
    MspT = Msp.T.tocsr()
    cnorm = np.linalg.norm(Ms, axis=1)
    live = cnorm > 0
    g = sc * qp.q
    c = qp.c
    gscale = 1.0 + float(np.max(np.abs(g))) + float(np.max(np.abs(c), initial=0.0))
    tol = 1e-12 * gscale
    max_outer = max_outer or max(10 * m, 1000)

    mu = np.zeros(m)
    Pidx: list = []
    Qf = np.zeros((N, 0))
    Rf = np.zeros((0, 0))

    def insert(j):
        nonlocal Qf, Rf
        k = len(Pidx)
        if k == 0:
            Qf, Rf = sla.qr(Ms[j][:, None], mode="full")
        else:
            Qf, Rf = sla.qr_insert(Qf, Rf, Ms[j], k, which="col")
        Pidx.append(j)

    def delete(pos):
        nonlocal Qf, Rf
        Qf, Rf = sla.qr_delete(Qf, Rf, pos, which="col")
        Pidx.pop(pos)

    def passive_solve():
        k = len(Pidx)
        R1 = Rf[:k, :k]
        rhs = -(Qf[:, :k].T @ g) - sla.solve_triangular(R1, c[Pidx], trans="T", check_finite=False)
        return sla.solve_triangular(R1, rhs, check_finite=False)

    def inner():
        # restore optimality on the passive set while keeping mu >= 0
        nonlocal mu
        for _ in range(len(Pidx) + 5):
            if not Pidx:
                return
            z = passive_solve()
            if z.min() > 0:
                mu[Pidx] = z
                return
            cur = mu[Pidx]
            bad = np.flatnonzero(z <= 0)
            ratios = cur[bad] / (cur[bad] - z[bad])
            alpha = ratios.min()
            mu[Pidx] = cur + alpha * (z - cur)
            mu[Pidx[bad[np.argmin(ratios)]]] = 0.0
            for pos in range(len(Pidx) - 1, -1, -1):
                if mu[Pidx[pos]] <= 0.0:
                    mu[Pidx[pos]] = 0.0
                    delete(pos)

    if mu0 is not None:
        mu0 = np.maximum(np.asarray(mu0, dtype=float), 0.0)
        cand = np.flatnonzero((mu0 > 0) & live)
        if cand.size:
            order = np.argsort(-mu0[cand], kind="stable")
            keep = maximal_independent_rows(Ms[cand], order=order, tol=1e-8)
            for j in sorted(cand[keep].tolist()):
                insert(j)
                mu[j] = mu0[j]
            inner()

    in_p = np.zeros(m, dtype=bool)
    blocked = np.zeros(m, dtype=bool)
    it = 0
    for it in range(1, max_outer + 1):
        in_p[:] = False
        in_p[Pidx] = True
        r = MspT @ mu + g if m else g
        w = -(Msp @ r) - c
        score = np.full(m, -np.inf)
        ok = live & ~in_p & ~blocked
        score[ok] = w[ok] / cnorm[ok]
        j = int(np.argmax(score)) if m else -1
        if m == 0 or score[j] <= tol:
            converged = True
            break
        k = len(Pidx)
        v = Ms[j]
        if k:
            u = Qf[:, :k].T @ v
            resid = np.linalg.norm(v - Qf[:, :k] @ u)
        else:
            u = np.zeros(0)
            resid = np.linalg.norm(v)
        if resid <= 1e-10 * cnorm[j]:
            # dependent column: pivot along the dual null direction
            a = sla.solve_triangular(Rf[:k, :k], u, check_finite=False)
            pos_a = a > 1e-12 * np.abs(a).max(initial=1.0)
            if not pos_a.any():
                raise InfeasibleError("dual unbounded: constraint system is infeasible")
            cur = mu[Pidx]
            ratios = np.full(k, np.inf)
            ratios[pos_a] = cur[pos_a] / a[pos_a]
            leave = int(np.argmin(ratios))
            t = ratios[leave]
            mu[Pidx] = cur - t * a
            mu[j] = t
            mu[Pidx[leave]] = 0.0
            delete(leave)
            insert(j)
            inner()
            blocked[:] = False
            continue
        insert(j)
        z = passive_solve()
        if z[-1] <= 0:
            # numerically unproductive entering column
            delete(len(Pidx) - 1)
            blocked[j] = True
            continue
        inner()
        blocked[:] = False
    else:
        converged = False
    r = MspT @ mu + g if m else g
    x = -sc * r
    return x, mu, it, converged


# ---------------------------------------------------------------------------
# drivers


def _feasible(G, c) -> bool:
    if c.size == 0:
        return True
    res = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=c, bounds=[(None, None)] * G.shape[1],
                  method="highs")
    return res.status == 0


def _finish(sys, qp: _QP, x, mu, status, iterations, method) -> FitResult:
    p = qp.p
    theta = x[p:].copy()
    xi = x[:p].copy() if isinstance(sys, LiftedSystem) else None
    act = active_set(sys, (xi, theta) if xi is not None else theta)
    res = FitResult(theta, xi, mu, act, qp.objective(x), status, iterations,
                    _kkt(qp, x, mu), method)
    for arr in (res.theta_hat, res.duals) + ((res.xi_hat,) if xi is not None else ()):
        arr.setflags(write=False)
    return res


def _primal_ok(qp: _QP, x, ptol) -> bool:
    slack = qp.c - qp.G @ x
    return bool(np.all(slack >= -ptol * qp.rowscale))


def _exact(qp: _QP, cfg: SolverConfig, mu0):
    """Dual active-set solve, polished when some coordinates are flat."""
    ptol, _ = _tolerances(qp, cfg)
    last = None
    regs = (1e-6, 1e-9) if qp.flat.any() else (None,)
    for reg in regs:
        x, mu, it, conv = _dual_active_set(qp, cfg, mu0=mu0, flat_reg=reg or 1.0,
                                           max_outer=cfg.max_iterations)
        last = (x, mu, it)
        if reg is None:
            if conv and _primal_ok(qp, x, ptol):
                return x, mu, it, True
            continue
        slack = qp.c - qp.G @ x
        J0 = np.flatnonzero((mu > 0) | (np.abs(slack) <= 1e-9 * (1.0 + np.abs(x).max())))
        out = _polish(qp, x, mu, cfg, J0=J0)
        if out is not None:
            return out[0], out[1], it + out[2], True
        mu0 = mu
    return last + (False,)


def _solve(sys, qp: _QP, cfg: SolverConfig, warm: Optional[FitResult]):
    m, N = qp.c.size, qp.N
    if m == 0:
        if np.any(qp.q[qp.flat] != 0):
            raise UnboundedError("objective is unbounded: linear term on free variables")
        x = np.zeros(N)
        x[~qp.flat] = -qp.q[~qp.flat] / qp.pvec[~qp.flat]
        return _finish(sys, qp, x, np.zeros(0), "optimal", 0, cfg.method)

    x0 = y0 = None
    if warm is not None and warm.x.size == N and warm.duals.size == m:
        x0, y0 = warm.x, np.asarray(warm.duals)
        out = _polish(qp, x0, y0, cfg, J0=warm.active.indices, rounds=2)
        if out is not None:
            x, mu, r = out
            return _finish(sys, qp, x, mu, "optimal", r, cfg.method)

    used = 0
    mu0 = y0
    if cfg.method == "operator_splitting_with_polish":
        admm = _Splitting(qp, cfg, x0, y0)
        budget = min(cfg.splitting_iterations, cfg.max_iterations)
        for eps in _STAGES:
            admm.run(eps, budget)
            used = admm.iterations
            if admm.infeasible or admm.unbounded:
                break
            out = _polish(qp, admm.x, admm.duals_unscaled(), cfg)
            if out is not None:
                x, mu, r = out
                return _finish(sys, qp, x, mu, "optimal", used + r, cfg.method)
            if used >= min(budget * 2, cfg.max_iterations):
                break
        if admm.unbounded:
            res = _finish(sys, qp, admm.x, np.maximum(admm.duals_unscaled(), 0), "unbounded",
                          used, cfg.method)
            raise UnboundedError("objective is unbounded below", res)
        mu0 = np.maximum(admm.duals_unscaled(), 0.0)

    try:
        x, mu, it, ok = _exact(qp, cfg, mu0)
    except InfeasibleError:
        if not _feasible(qp.G, qp.c):
            raise
        x, mu, it, ok = _exact(qp, cfg, None)
    used += it
    if ok:
        return _finish(sys, qp, x, mu, "optimal", used, cfg.method)
    if not _feasible(qp.G, qp.c):
        res = _finish(sys, qp, x, mu, "infeasible", used, cfg.method)
        raise InfeasibleError("constraint system is infeasible", res)
    logger.warning("solver stopped without a certified solution after %d iterations", used)
    return _finish(sys, qp, x, mu, "max_iter", used, cfg.method)


def project(sys: ConstraintSystem, y, cfg: Optional[SolverConfig] = None,
            warm: Optional[FitResult] = None) -> FitResult:
    """Euclidean projection of ``y`` onto ``{theta : A theta <= b}``."""
    cfg = cfg or SolverConfig()
    if not isinstance(sys, ConstraintSystem):
        raise TypeError("project expects a ConstraintSystem")
    lifted = sys.as_lifted()
    qp = _assemble(lifted, y)
    return _solve(sys, qp, cfg, warm)


def solve_lifted(sys: LiftedSystem, y, cfg: Optional[SolverConfig] = None,
                 warm: Optional[FitResult] = None) -> FitResult:
    """Partial projection of ``y`` onto a lifted polyhedron.

    Raises :class:`UnboundedError` for a linear perturbation that fails the
    boundedness test of :func:`check_bounded`.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(sys, LiftedSystem):
        raise TypeError("solve_lifted expects a LiftedSystem")
    if isinstance(sys.perturbation, Linear):
        ok, _ = check_bounded(sys)
        if not ok:
            raise UnboundedError("linear perturbation: -d is not in the cone spanned by A^T")
    qp = _assemble(sys, y)
    return _solve(sys, qp, cfg, warm)


def check_bounded(sys: LiftedSystem, tol: float = 1e-9):
    """Whether ``-d = A^T lam`` has a solution ``lam >= 0``.

    Returns ``(bounded, lam)`` where ``lam`` is the nonnegative least-squares
    certificate (``None`` when not bounded).
    """
    pert = sys.perturbation
    if not isinstance(pert, Linear):
        raise ValueError("check_bounded needs a linear perturbation")
    d = pert.d
    if not np.any(d):
        return True, np.zeros(sys.m)
    if sys.m == 0:
        return False, None
    lam, resid = nnls(sys.A.T, -d, maxiter=50 * max(sys.A.shape))
    if resid <= tol * (1.0 + np.linalg.norm(d)):
        return True, lam
    return False, None


def certify(sys, y, theta, xi=None, cfg: Optional[SolverConfig] = None,
            status_if_ok: str = "optimal") -> FitResult:
    """Build a :class:`FitResult` for a candidate point computed elsewhere.

    Multipliers are recovered on the active rows (first by an exact solve on
    a maximal independent subset, then by a nonnegative dual solve), so the returned KKT
    residuals certify -- or refute -- optimality of ``theta``.  The status is
    ``"max_iter"`` when the point cannot be certified.
    """
    cfg = cfg or SolverConfig()
    lifted = sys.as_lifted() if isinstance(sys, ConstraintSystem) else sys
    qp = _assemble(lifted, y)
    xi_v = np.zeros(0) if xi is None else np.asarray(xi, dtype=float).reshape(-1)
    x = np.concatenate([xi_v, np.asarray(theta, dtype=float)])
    ptol, dtol = _tolerances(qp, cfg)
    act = active_set(sys, (xi_v, theta) if isinstance(sys, LiftedSystem) else theta)
    J = act.as_array()
    grad = qp.pvec * x + qp.q
    mu = np.zeros(qp.c.size)
    ok = False
    if J.size:
        keep = maximal_independent_rows(qp.G[J])
        I = J[keep]
        sol, *_ = np.linalg.lstsq(qp.G[I].T, -grad, rcond=None)
        if sol.min(initial=0.0) >= -dtol and np.max(np.abs(grad + qp.G[I].T @ sol)) <= dtol:
            mu[I] = np.maximum(sol, 0.0)
            ok = True
        else:
            mu_J = _recover_duals(qp, x, J, dtol)
            if mu_J is not None:
                mu[J] = mu_J
                ok = True
    else:
        ok = bool(np.max(np.abs(grad)) <= dtol)
    kkt = _kkt(qp, x, mu)
    ok = ok and _primal_ok(qp, x, ptol)
    res = FitResult(np.array(theta, dtype=float), None if xi is None else np.array(xi, float),
                    mu, act, qp.objective(x), status_if_ok if ok else "max_iter", 0, kkt,
                    "certify")
    return res
