import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from polydf import isotonic
from polydf.geometry import (ActiveSet, ConstraintSystem, LiftedSystem, Linear, Quadratic,
                             active_set, maximal_independent_rows, numerical_rank, rank_info)

from oracles import svd_rank


def chain_system(n):
    return isotonic.PartialOrder.chain(n).constraint_system()


class TestSystems:
    def test_shapes_and_slack(self):
        sys = ConstraintSystem([[1.0, -1.0]], [0.5])
        assert (sys.m, sys.n) == (1, 2)
        np.testing.assert_allclose(sys.slack([1.0, 1.0]), [0.5])

    def test_rejects_mismatched_rows(self):
        with pytest.raises(ValueError):
            ConstraintSystem(np.eye(2), np.zeros(3))

    def test_arrays_are_frozen(self):
        sys = ConstraintSystem(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            sys.A[0, 0] = 5.0

    def test_lifted_view_has_no_xi(self):
        sys = ConstraintSystem(np.eye(2), np.ones(2), ["a", "b"])
        lifted = sys.as_lifted()
        assert lifted.p == 0 and lifted.n == 2 and lifted.labels == ("a", "b")

    def test_lifted_slack(self):
        sys = LiftedSystem([[1.0]], [[1.0, -1.0]], [2.0])
        np.testing.assert_allclose(sys.slack([0.5], [1.0, 0.0]), [0.5])

    def test_perturbations_validate(self):
        with pytest.raises(ValueError):
            Quadratic(0.0)
        with pytest.raises(ValueError):
            Linear(np.zeros((2, 2)))


class TestActiveSet:
    def test_monotone_cone_example(self):
        # theta = (1, 1, 2): only theta_1 <= theta_2 binds
        act = active_set(chain_system(3), np.array([1.0, 1.0, 2.0]), tol=1e-8)
        assert act.indices == (0,)

    def test_interior_point_is_empty(self):
        act = active_set(chain_system(4), np.array([0.0, 1.0, 2.0, 3.0]), tol=1e-8)
        assert act.indices == () and not act.near_degenerate

    def test_bounded_toy_example(self):
        # groups {1,2},{3,4},{5} on a chain with theta_5 = theta_1 + lam
        lam = 1.0
        sys = isotonic.BoundedIsotonicSystem(isotonic.PartialOrder.chain(5), lam)
        theta = np.array([0.0, 0.0, 0.4, 0.4, 1.0])
        act = active_set(sys.constraint_system(), theta, tol=1e-8)
        assert act.indices == (0, 2, 4)

    def test_lifted_point_forms_agree(self):
        sys = LiftedSystem([[1.0], [-1.0]], [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
        a = active_set(sys, ([0.5], [0.5, 0.5]))
        b = active_set(sys, np.array([0.5, 0.5, 0.5]))
        assert a.indices == b.indices == (0, 1)

    def test_near_degenerate_flag(self):
        act = active_set(chain_system(3), np.array([0.0, 1e-7, 1.0]), tol=1e-8)
        assert act.indices == () and act.near_degenerate

    def test_default_tolerance_scales(self):
        act = active_set(chain_system(2), np.array([1e3, 1e3 + 1e-5]))
        assert act.indices == (0,)
        assert act.tolerance_used == pytest.approx(1e-7 * (1 + 1e3 + 1e-5))

    def test_indices_must_increase(self):
        with pytest.raises(ValueError):
            ActiveSet((2, 1), 1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_classification_is_exact(self, n, seed):
        rng = np.random.default_rng(seed)
        sys = ConstraintSystem(rng.standard_normal((3 * n, n)), rng.standard_normal(3 * n))
        x = rng.standard_normal(n)
        # make a few rows tight
        b = np.array(sys.b)
        tight = rng.choice(sys.m, size=n // 2, replace=False)
        b[tight] = sys.A[tight] @ x
        sys = ConstraintSystem(sys.A, b)
        tol = 1e-8
        act = active_set(sys, x, tol)
        r = np.abs(sys.slack(x))
        assert np.all(r[act.as_array()] <= tol)
        assert np.all(np.delete(r, act.as_array()) > tol)


class TestRank:
    def test_identity_and_zero(self):
        assert numerical_rank(np.eye(4)) == 4
        assert numerical_rank(np.zeros((3, 5))) == 0

    def test_connected_incidence(self):
        # 5 nodes, 5 edges, connected (a cycle): rank n - 1
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]
        M = np.zeros((5, 5))
        for r, (i, j) in enumerate(edges):
            M[r, i], M[r, j] = 1.0, -1.0
        assert numerical_rank(M) == 4

    def test_tie_flag(self):
        M = np.diag([1.0, 3e-12])
        info = rank_info(M)
        assert info.rank == 1 or info.tie

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            numerical_rank(np.array([[np.nan]]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 8), st.integers(0, 2**32 - 1))
    def test_invariant_under_permutation_and_rotation(self, m, n, k, seed):
        rng = np.random.default_rng(seed)
        k = min(k, m, n)
        M = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
        r = numerical_rank(M)
        assert r == svd_rank(M) == k
        P = rng.permutation(m)
        Q = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
        assert numerical_rank(M[P] @ Q) == r


class TestIndependentRows:
    def test_empty(self):
        assert maximal_independent_rows(np.zeros((0, 3))) == []

    def test_small_example(self):
        A = np.array([[1.0], [0.0], [1.0]])
        B = np.array([[0.0], [1.0], [1.0]])
        assert maximal_independent_rows(A, B) == [0, 1]

    def test_duplicated_rows(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((20, 8))
        M[[3, 9, 15]] = M[[0, 1, 2]]
        I = maximal_independent_rows(M[:, :5], M[:, 5:])
        assert len(I) == svd_rank(M) == 8

    def test_greedy_in_ascending_order(self):
        M = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 1.0]])
        assert maximal_independent_rows(M) == [0, 2]

    def test_custom_scan_order(self):
        M = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 1.0]])
        assert maximal_independent_rows(M, order=[1, 0, 2]) == [1, 2]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 150), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_size_equals_rank(self, m, n, k, seed):
        rng = np.random.default_rng(seed)
        k = min(k, n)
        M = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
        I = maximal_independent_rows(M)
        assert len(I) == svd_rank(M)
        assert svd_rank(M[I]) == len(I)
