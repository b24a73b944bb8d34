import numpy as np
import pytest

from polydf import dof, isotonic, problems, qp
from polydf.dof import (closed_form_ridge, divergence, divergence_lifted_linear,
                        divergence_lifted_quadratic, divergence_polyhedral,
                        finite_difference_divergence, monte_carlo_df)
from polydf.geometry import ActiveSet
from polydf.problems import Dataset, ProblemSpec

from oracles import central_differences, svd_rank


def chain_fit(y):
    sys = isotonic.PartialOrder.chain(len(y)).constraint_system()
    return sys, qp.project(sys, y)


class TestPolyhedral:
    def test_interior_point(self):
        sys, fit = chain_fit(np.array([0.0, 1.0, 2.0]))
        assert divergence_polyhedral(sys, fit).value == 3

    @pytest.mark.parametrize("seed", range(5))
    def test_isotonic_counts_distinct_values(self, seed):
        y = np.random.default_rng(seed).standard_normal(20)
        sys, fit = chain_fit(y)
        distinct = np.unique(np.round(fit.theta_hat, 10)).size
        assert divergence_polyhedral(sys, fit).value == distinct

    @pytest.mark.parametrize("seed", range(5))
    def test_univariate_convex_slope_changes(self, seed):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0, 1, 25))
        y = (x - 0.5) ** 2 + 0.05 * rng.standard_normal(25)
        sys = problems.build_univariate_convex(x)
        fit = qp.project(sys, y)
        slopes = np.diff(fit.theta_hat) / np.diff(x)
        changes = int(np.sum(np.abs(np.diff(slopes)) > 1e-6 * (1 + np.abs(slopes).max())))
        assert divergence_polyhedral(sys, fit).value == changes + 2

    def test_components_identity(self):
        rng = np.random.default_rng(7)
        order = isotonic.PartialOrder.from_points(rng.uniform(0, 1, (30, 2)))
        for lam in (0.3, 1.0, np.inf):
            sys = isotonic.BoundedIsotonicSystem(order, lam)
            fit = isotonic.fit_bounded(sys, rng.standard_normal(30))
            poly = divergence_polyhedral(sys.constraint_system(), fit).value
            assert poly == isotonic.divergence_components(sys, fit)

    def test_lifted_reduces_to_polyhedral(self):
        rng = np.random.default_rng(2)
        sys = isotonic.PartialOrder.lattice((3, 3)).constraint_system()
        fit = qp.project(sys, rng.standard_normal(9))
        assert divergence_lifted_linear(sys, fit).value == divergence_polyhedral(sys, fit).value


class TestLiftedLinear:
    @pytest.mark.parametrize("rank", [1, 2, 4])
    def test_linear_regression_rank(self, rank):
        rng = np.random.default_rng(rank)
        X = rng.standard_normal((10, rank)) @ rng.standard_normal((rank, 4))
        spec = ProblemSpec("linear_regression", Dataset(X, rng.standard_normal(10)))
        fit = problems.fit(spec)
        assert divergence(spec, fit).value == svd_rank(X) == rank

    @pytest.mark.parametrize("seed", range(5))
    def test_lasso_support_rank(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((10, 5))
        y = X @ np.array([3.0, 0.0, -2.0, 0.0, 0.0]) + rng.standard_normal(10)
        spec = ProblemSpec("lasso", Dataset(X, y), 2.0)
        fit = problems.fit(spec)
        beta = fit.xi_hat[:5]
        S = np.abs(beta) > 1e-6 * (1 + np.abs(beta).max())
        assert divergence(spec, fit).value == svd_rank(X[:, S])
        assert dof.lasso_df(X, beta) == svd_rank(X[:, S])

    @pytest.mark.parametrize("seed", range(5))
    def test_generalized_lasso_kernel_dimension(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((8, 6))
        D = problems.fused_penalty(6)
        y = X @ np.repeat([1.0, -1.0, 2.0], 2) + 0.3 * rng.standard_normal(8)
        spec = ProblemSpec("generalized_lasso", Dataset(X, y), 1.0, D=D)
        fit = problems.fit(spec)
        beta = fit.xi_hat[:6]
        D0 = D[np.abs(D @ beta) <= 1e-6 * (1 + np.abs(beta).max())]
        # dim(X ker D0) = rank([X; D0]) - rank(D0)
        expected = svd_rank(np.vstack([X, D0])) - svd_rank(D0)
        assert divergence(spec, fit).value == expected
        assert dof.generalized_lasso_df(X, D, beta) == expected

    def test_rejects_quadratic(self):
        sys = problems.build_ridge(np.eye(2), 1.0)
        fit = qp.solve_lifted(sys, np.ones(2))
        with pytest.raises(ValueError):
            divergence_lifted_linear(sys, fit)


class TestQuadratic:
    def test_ridge_identity_design(self):
        n = 6
        sys = problems.build_ridge(np.eye(n), 1.0)
        fit = qp.solve_lifted(sys, np.random.default_rng(0).standard_normal(n))
        assert divergence_lifted_quadratic(sys, fit).value == pytest.approx(n / 2, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_ridge_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((8, 3))
        sys = problems.build_ridge(X, 0.7)
        fit = qp.solve_lifted(sys, rng.standard_normal(8))
        val = divergence_lifted_quadratic(sys, fit).value
        assert val == pytest.approx(closed_form_ridge(X, 0.7), abs=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_penalized_convex_matches_differences(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, (6, 2))
        y = np.sum(X**2, 1) + 0.3 * rng.standard_normal(6)
        spec = ProblemSpec("penalized_convex", Dataset(X, y), 0.5)
        fit = problems.fit(spec)
        rep = divergence(spec, fit)
        fd = finite_difference_divergence(lambda v: problems.fit(spec, v), y)
        assert rep.value == pytest.approx(fd.value, abs=1e-3)

    def test_rejects_linear(self):
        sys = problems.build_lasso(np.eye(2), 1.0)
        with pytest.raises(ValueError):
            divergence_lifted_quadratic(sys, qp.solve_lifted(sys, np.ones(2)))


class TestClosedFormRidge:
    def test_identity(self):
        assert closed_form_ridge(np.eye(5), 1.0) == pytest.approx(2.5)

    def test_zero_design(self):
        assert closed_form_ridge(np.zeros((4, 3)), 1.0) == 0.0

    def test_matches_explicit_trace(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((9, 4))
        lam = 0.3
        H = X @ np.linalg.solve(lam * np.eye(4) + X.T @ X, X.T)
        assert closed_form_ridge(X, lam) == pytest.approx(np.trace(H), abs=1e-12)

    def test_decreasing_in_lambda(self):
        X = np.random.default_rng(1).standard_normal((10, 4))
        vals = [closed_form_ridge(X, lam) for lam in np.logspace(-3, 3, 30)]
        assert np.all(np.diff(vals) < 0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            closed_form_ridge(np.eye(2), 0.0)


class TestFiniteDifference:
    def test_affine_map(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((5, 5))
        c = rng.standard_normal(5)
        rep = finite_difference_divergence(lambda v: M @ v + c, rng.standard_normal(5))
        assert rep.value == pytest.approx(np.trace(M), abs=1e-7)

    def test_isotonic_distinct_values(self):
        y = np.random.default_rng(3).standard_normal(15)
        sys, fit = chain_fit(y)
        rep = finite_difference_divergence(lambda v: qp.project(sys, v), y)
        assert round(rep.value) == divergence_polyhedral(sys, fit).value

    def test_ridge(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((7, 3))
        sys = problems.build_ridge(X, 0.4)
        rep = finite_difference_divergence(lambda v: qp.solve_lifted(sys, v),
                                           rng.standard_normal(7))
        assert rep.value == pytest.approx(closed_form_ridge(X, 0.4), abs=1e-6)

    def test_agrees_with_plain_central_differences(self):
        y = np.random.default_rng(5).standard_normal(10)
        sys, _ = chain_fit(y)
        rep = finite_difference_divergence(lambda v: qp.project(sys, v), y)
        plain = central_differences(lambda v: qp.project(sys, v).theta_hat, y)
        assert rep.value == pytest.approx(plain, abs=1e-5)

    def test_jitter_escapes_kink(self):
        # y on the kink of the projection onto {theta_1 <= theta_2}
        sys = isotonic.PartialOrder.chain(2).constraint_system()
        rep = finite_difference_divergence(lambda v: qp.project(sys, v), np.array([1.0, 1.0]))
        assert rep.diagnostics["retries"] >= 1
        assert round(rep.value) in (1, 2)

    def test_unstable_raises(self):
        calls = {"k": 0}

        def flaky(v):
            calls["k"] += 1
            act = (0,) if calls["k"] % 2 else ()
            return qp.FitResult(v.copy(), None, np.zeros(1), ActiveSet(act, 1e-8), 0.0,
                                "optimal", 0, {}, "test")

        with pytest.raises(dof.UnstableDivergence):
            finite_difference_divergence(flaky, np.zeros(2), max_retries=2)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_difference_divergence(lambda v: v, np.zeros(2), h=0.0)


class TestMonteCarlo:
    def test_identity_estimator(self):
        n = 10
        df, se = monte_carlo_df(np.zeros(n), 1.0, lambda y: y, 400, seed=1)
        assert abs(df - n) <= 3 * se

    def test_constant_estimator(self):
        df, se = monte_carlo_df(np.ones(5), 2.0, lambda y: np.zeros(5), 50, seed=1)
        assert df == 0.0 and se == 0.0

    def test_reproducible(self):
        fn = lambda y: np.maximum(y, 0)
        a = monte_carlo_df(np.zeros(6), 1.0, fn, 30, seed=4)
        b = monte_carlo_df(np.zeros(6), 1.0, fn, 30, seed=4, workers=3)
        assert a == b

    def test_jackknife_matches_loop(self):
        rng = np.random.default_rng(0)
        Y = rng.standard_normal((12, 4))
        T = 0.5 * Y + rng.standard_normal((12, 4))
        df, se = dof._cov_df(Y, T, 1.0)

        def est(Yk, Tk):
            return sum(np.cov(Yk[:, i], Tk[:, i], ddof=1)[0, 1] for i in range(4))

        assert df == pytest.approx(est(Y, T))
        loo = np.array([est(np.delete(Y, r, 0), np.delete(T, r, 0)) for r in range(12)])
        ref = np.sqrt(11 / 12 * np.sum((loo - loo.mean()) ** 2))
        assert se == pytest.approx(ref)

    def test_curve_reports_formula(self):
        truth = np.zeros(4)

        def fit_grid(y):
            return np.stack([y, 0.5 * y]), np.array([4.0, 2.0])

        res = dof.monte_carlo_df_curve(truth, 1.0, fit_grid, 200, seed=0)
        np.testing.assert_allclose(res.formula_mean, [4.0, 2.0])
        assert res.value[1] == pytest.approx(res.value[0] / 2)

    def test_requires_two_replications(self):
        with pytest.raises(ValueError):
            monte_carlo_df(np.zeros(2), 1.0, lambda y: y, 1, seed=0)


class TestRng:
    def test_streams_are_keyed(self):
        a = dof.replication_rng(5, 0).standard_normal(3)
        b = dof.replication_rng(5, 0).standard_normal(3)
        c = dof.replication_rng(5, 1).standard_normal(3)
        d = dof.replication_rng(6, 0).standard_normal(3)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c) and not np.allclose(a, d)

    def test_philox_key_layout(self):
        ref = np.random.Generator(np.random.Philox(key=np.array([7, 3], dtype=np.uint64)))
        np.testing.assert_array_equal(dof.replication_rng(7, 3).random(4), ref.random(4))


def test_report_bounds_across_classes():
    rng = np.random.default_rng(12)
    X = rng.uniform(-1, 1, (8, 2))
    y = rng.standard_normal(8)
    specs = [
        ProblemSpec("bounded_isotonic_poset", Dataset(X, y), 0.5),
        ProblemSpec("multivariate_convex", Dataset(X, y)),
        ProblemSpec("penalized_convex", Dataset(X, y), 0.2),
        ProblemSpec("ridge", Dataset(X, y), 0.2),
        ProblemSpec("lasso", Dataset(X, y), 0.5),
    ]
    for spec in specs:
        v = divergence(spec, problems.fit(spec)).value
        assert 0 <= v <= spec.n
