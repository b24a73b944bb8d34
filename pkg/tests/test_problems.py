import math

import numpy as np
import pytest

from polydf import isotonic, problems, qp
from polydf.geometry import Linear, Quadratic
from polydf.problems import Dataset, ProblemSpec

from oracles import cvx_lifted, lasso_cd


class TestUnivariateConvex:
    def test_second_difference_row(self):
        sys = problems.build_univariate_convex([0.0, 1.0, 2.0])
        np.testing.assert_array_equal(sys.A, [[-1.0, 2.0, -1.0]])
        np.testing.assert_array_equal(sys.b, [0.0])

    def test_affine_is_tight(self):
        x = np.sort(np.random.default_rng(0).uniform(0, 5, 10))
        sys = problems.build_univariate_convex(x)
        np.testing.assert_allclose(sys.slack(1.5 - 0.7 * x), 0.0, atol=1e-12)

    def test_concave_kink_violates(self):
        sys = problems.build_univariate_convex([0.0, 1.0, 2.0])
        assert sys.slack([0.0, 1.0, 0.0])[0] == -2.0

    def test_ties_rejected(self):
        with pytest.raises(ValueError):
            problems.build_univariate_convex([0.0, 1.0, 1.0])


class TestMultivariateConvex:
    def test_two_point_rows(self):
        sys = problems.build_multivariate_convex(np.array([[0.0], [1.0]]))
        # row (0, 1): xi_0 <= theta_1 - theta_0 ; row (1, 0): -xi_1 <= theta_0 - theta_1
        np.testing.assert_array_equal(sys.A, [[1.0, 0.0], [0.0, -1.0]])
        np.testing.assert_array_equal(sys.B, [[1.0, -1.0], [-1.0, 1.0]])
        assert sys.labels == ("pair:0:1", "pair:1:0")

    def test_linear_function_all_tight(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((6, 3))
        g = rng.standard_normal(3)
        sys = problems.build_multivariate_convex(X)
        xi = np.tile(g, 6)
        np.testing.assert_allclose(sys.slack(xi, X @ g + 0.3), 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_convex_quadratic_is_feasible(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 15, 3
        X = rng.standard_normal((n, d))
        M = rng.standard_normal((d, d))
        Q = M @ M.T
        sys = problems.build_multivariate_convex(X)
        theta = np.einsum("ij,jk,ik->i", X, Q, X)
        xi = (2 * X @ Q).reshape(-1)
        assert sys.m == n * (n - 1)
        assert np.all(sys.slack(xi, theta) >= -1e-10)

    def test_penalized_is_delegation(self):
        X = np.random.default_rng(2).standard_normal((5, 2))
        a = problems.build_multivariate_convex(X)
        b = problems.build_penalized_convex(X, 0.4)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.B, b.B)
        assert b.perturbation == Quadratic(0.4)

    def test_duplicate_points_rejected(self):
        with pytest.raises(ValueError):
            problems.build_multivariate_convex(np.zeros((3, 2)))


class TestRegression:
    def test_identity_design_forces_xi_equal_theta(self):
        sys = problems.build_linear_regression(np.eye(3))
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(sys.slack(v, v), 0.0)
        assert np.any(sys.slack(v, v + [0.0, 0.1, 0.0]) < 0)

    def test_fitted_pair_tight(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((3, 2))
        beta = rng.standard_normal(2)
        sys = problems.build_linear_regression(X)
        np.testing.assert_allclose(sys.slack(beta, X @ beta), 0.0, atol=1e-14)

    def test_ridge_perturbation(self):
        assert problems.build_ridge(np.eye(2), 0.3).perturbation == Quadratic(0.3)
        with pytest.raises(ValueError):
            problems.build_ridge(np.eye(2), 0.0)

    def test_lasso_tau_zero_is_least_squares(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((12, 4))
        y = rng.standard_normal(12)
        fit = qp.solve_lifted(problems.build_lasso(X, 0.0), y)
        ls = X @ np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(fit.theta_hat, ls, atol=1e-8)

    def test_lasso_soft_threshold_example(self):
        fit = qp.solve_lifted(problems.build_lasso(np.eye(3), 1.0), np.array([3.0, 0.5, -2.0]))
        np.testing.assert_allclose(fit.theta_hat, [2.0, 0.0, -1.0], atol=1e-9)

    @pytest.mark.parametrize("tau", [0.0, 0.5, 5.0])
    def test_generalized_lasso_bounded(self, tau):
        rng = np.random.default_rng(5)
        sys = problems.build_generalized_lasso(rng.standard_normal((6, 4)),
                                               problems.fused_penalty(4), tau)
        assert qp.check_bounded(sys)[0]

    @pytest.mark.parametrize("seed", range(8))
    def test_lasso_matches_coordinate_descent(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((15, 5))
        y = X @ np.array([2.0, 0.0, -1.0, 0.0, 0.5]) + 0.5 * rng.standard_normal(15)
        tau = rng.uniform(0.5, 5.0)
        fit = qp.solve_lifted(problems.build_lasso(X, tau), y)
        np.testing.assert_allclose(fit.theta_hat, X @ lasso_cd(X, y, tau), atol=1e-6)

    def test_lasso_matches_sklearn(self):
        from sklearn.linear_model import Lasso
        rng = np.random.default_rng(9)
        X = rng.standard_normal((20, 4))
        y = X @ np.array([1.0, -2.0, 0.0, 0.0]) + rng.standard_normal(20)
        tau = 3.0
        est = Lasso(alpha=tau / 20, fit_intercept=False, tol=1e-12, max_iter=100000).fit(X, y)
        fit = qp.solve_lifted(problems.build_lasso(X, tau), y)
        np.testing.assert_allclose(fit.theta_hat, X @ est.coef_, atol=1e-6)

    def test_fused_penalty(self):
        np.testing.assert_array_equal(problems.fused_penalty(3), [[-1, 1, 0], [0, -1, 1]])


class TestLabels:
    def test_round_trip(self):
        assert problems.parse_label(problems.make_label("pair", 3, 7)) == ("pair", 3, 7)

    @pytest.mark.parametrize("builder", ["convex", "regression", "genlasso", "univariate"])
    def test_every_row_labelled(self, builder):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((5, 2))
        sys = {
            "convex": lambda: problems.build_multivariate_convex(X),
            "regression": lambda: problems.build_linear_regression(X),
            "genlasso": lambda: problems.build_generalized_lasso(X, problems.fused_penalty(2), 1.0),
            "univariate": lambda: problems.build_univariate_convex(np.arange(5.0)),
        }[builder]()
        assert len(sys.labels) == sys.m == len(set(sys.labels))
        for lab in sys.labels:
            assert problems.make_label(*problems.parse_label(lab)) == lab


class TestDataset:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal((7, 3)), rng.standard_normal(7))
        problems.write_dataset(ds, tmp_path / "d.csv")
        back = problems.read_dataset(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        assert (tmp_path / "d.csv").read_bytes().count(b"\r") == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(4))

    def test_read_matrix_with_and_without_header(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2\n3,4\n")
        (tmp_path / "b.csv").write_text("c1,c2\n1,2\n3,4\n")
        np.testing.assert_array_equal(problems.read_matrix(tmp_path / "a.csv"),
                                      problems.read_matrix(tmp_path / "b.csv"))


class TestProblemSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ProblemSpec("spline", Dataset(np.zeros((2, 1)), np.zeros(2)))

    def test_needs_param(self):
        with pytest.raises(ValueError):
            ProblemSpec("ridge", Dataset(np.eye(2), np.zeros(2)))

    def test_infinite_param_only_for_isotonic(self):
        with pytest.raises(ValueError):
            ProblemSpec("ridge", Dataset(np.eye(2), np.zeros(2)), math.inf)

    def test_system_dispatch(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, (6, 2))
        ds = Dataset(X, rng.standard_normal(6))
        assert isinstance(ProblemSpec("bounded_isotonic_poset", ds, 0.5).system(),
                          isotonic.BoundedIsotonicSystem)
        pen = ProblemSpec("penalized_convex", ds, 0.5)
        assert pen.system().perturbation == Quadratic(0.5)
        assert pen.with_param(0.0).system().perturbation is None
        lasso = ProblemSpec("lasso", ds, 2.0).system()
        assert isinstance(lasso.perturbation, Linear)
        np.testing.assert_array_equal(lasso.perturbation.d, [0, 0, 2.0, 2.0])

    def test_cache_shared_across_params(self):
        ds = Dataset(np.random.default_rng(0).uniform(size=(6, 2)), np.zeros(6))
        spec = ProblemSpec("penalized_convex", ds, 0.5)
        a = spec.system()
        b = spec.with_param(2.0).system()
        assert a.A is b.A

    def test_fit_matches_interior_point(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (8, 2))
        y = np.sum(X**2, 1) + 0.2 * rng.standard_normal(8)
        spec = ProblemSpec("penalized_convex", Dataset(X, y), 0.7)
        fit = problems.fit(spec)
        sys = spec.system()
        np.testing.assert_allclose(fit.theta_hat, cvx_lifted(sys.A, sys.B, sys.c, y, lam=0.7),
                                   atol=1e-6)

    def test_univariate_kinds_need_sorted_x(self):
        with pytest.raises(ValueError):
            ProblemSpec("univariate_convex", Dataset(np.array([0.0, 2.0, 1.0]), np.zeros(3)))

    def test_explicit_order(self):
        order = isotonic.PartialOrder(3, [(2, 1), (1, 0)])
        spec = ProblemSpec("bounded_isotonic_poset", Dataset(np.zeros((3, 1)),
                                                             np.array([1.0, 2.0, 3.0])),
                           math.inf, order=order)
        np.testing.assert_allclose(problems.fit(spec).theta_hat, [2.0, 2.0, 2.0])
