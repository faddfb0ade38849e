import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgsmooth.errors import NotPositiveDefinite, RankDeficient, SolverFailure
from fgsmooth.numeric import (
    Precision,
    chol_solve,
    cholesky,
    condition_number,
    lu_solve,
    qr_solve,
    sqrt_information_solve,
    whiten,
)

from oracles import spd

SOLVE_KERNELS = [qr_solve, sqrt_information_solve]


class TestPrecision:
    @pytest.mark.parametrize("name, dtype", [("single", np.float32), ("double", np.float64)])
    def test_parse_names(self, name, dtype):
        assert Precision.parse(name).dtype == np.dtype(dtype)
        assert Precision.parse(name.upper()).dtype == np.dtype(dtype)

    @pytest.mark.parametrize("dtype, expected", [(np.float32, Precision.SINGLE), (np.float64, Precision.DOUBLE)])
    def test_parse_dtype(self, dtype, expected):
        assert Precision.parse(dtype) is expected
        assert Precision.parse(np.dtype(dtype)) is expected

    def test_eps(self):
        assert Precision.SINGLE.eps == np.finfo(np.float32).eps
        assert Precision.DOUBLE.eps == np.finfo(np.float64).eps

    def test_unknown(self):
        with pytest.raises(ValueError):
            Precision.parse("half")


class TestLeastSquares:
    @pytest.mark.parametrize("kernel", SOLVE_KERNELS)
    def test_overdetermined_example(self, kernel):
        A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        b = np.array([1.0, 2.0, 4.0])
        # normal equations [[2,1],[1,2]] x = [5, 6]
        np.testing.assert_allclose(kernel(A, b), [4 / 3, 7 / 3], rtol=1e-12)

    @pytest.mark.parametrize("kernel", SOLVE_KERNELS)
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_lstsq(self, kernel, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((12, 5))
        b = rng.standard_normal(12)
        ref = np.linalg.lstsq(A, b, rcond=None)[0]
        np.testing.assert_allclose(kernel(A, b), ref, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("kernel", SOLVE_KERNELS)
    def test_keeps_single_precision(self, kernel):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((6, 3)).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)
        assert kernel(A, b).dtype == np.float32

    @pytest.mark.parametrize("kernel", SOLVE_KERNELS)
    def test_rank_deficient(self, kernel):
        A = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        with pytest.raises(RankDeficient):
            kernel(A, np.ones(3))

    @pytest.mark.parametrize("kernel", SOLVE_KERNELS)
    def test_underdetermined(self, kernel):
        with pytest.raises(RankDeficient):
            kernel(np.ones((1, 2)), np.ones(1))

    def test_qr_residual_orthogonal(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((20, 6))
        b = rng.standard_normal(20)
        x = qr_solve(A, b)
        assert np.linalg.norm(A.T @ (A @ x - b)) <= 1e-12 * np.linalg.norm(A.T @ b)


class TestCholesky:
    def test_factor(self):
        S = np.array([[4.0, 2.0], [2.0, 3.0]])
        L = cholesky(S)
        np.testing.assert_allclose(L @ L.T, S)
        assert np.allclose(L, np.tril(L))

    @pytest.mark.parametrize("S", [np.diag([1.0, 0.0]), np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[np.nan]])])
    def test_not_positive_definite(self, S):
        with pytest.raises(NotPositiveDefinite):
            cholesky(S)
        with pytest.raises(NotPositiveDefinite):
            chol_solve(S, np.ones(S.shape[0]))

    def test_chol_solve_matrix_rhs(self):
        rng = np.random.default_rng(1)
        S = spd(rng, 4, cond=50)
        B = rng.standard_normal((4, 3))
        np.testing.assert_allclose(S @ chol_solve(S, B), B, atol=1e-12)

    def test_whiten(self):
        rng = np.random.default_rng(2)
        S = spd(rng, 3, cond=10)
        M = rng.standard_normal((3, 4))
        r = rng.standard_normal(3)
        W, w = whiten(S, M, r)
        # |W x - w|^2 equals the Mahalanobis norm of M x - r
        x = rng.standard_normal(4)
        e = M @ x - r
        assert np.isclose(np.sum((W @ x - w) ** 2), e @ np.linalg.solve(S, e))

    def test_lu_singular(self):
        with pytest.raises(SolverFailure):
            lu_solve(np.zeros((2, 2)), np.ones(2))


class TestConditionNumber:
    def test_diagonal(self):
        assert condition_number(np.diag([10.0, 1.0, 0.1])) == pytest.approx(100.0)

    def test_rank_deficient_is_inf(self):
        assert condition_number(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])) == np.inf

    def test_evaluated_in_double(self):
        A = np.diag([1.0, 1e-6]).astype(np.float32)
        assert condition_number(A) == pytest.approx(1e6, rel=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=5))
    def test_matches_singular_value_ratio(self, sv):
        rng = np.random.default_rng(len(sv))
        U, _ = np.linalg.qr(rng.standard_normal((len(sv) + 2, len(sv))))
        V, _ = np.linalg.qr(rng.standard_normal((len(sv), len(sv))))
        A = U @ np.diag(sv) @ V.T
        assert condition_number(A) == pytest.approx(max(sv) / min(sv), rel=1e-8)


class TestSpecExamples:
    def test_qr_identity(self):
        np.testing.assert_allclose(qr_solve(np.eye(2), [3.0, 4.0]), [3.0, 4.0])

    def test_qr_mean_of_two(self):
        np.testing.assert_allclose(qr_solve(np.ones((2, 1)), [0.0, 2.0]), [1.0])

    def test_qr_matches_explicit_normal_equations(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        ref = np.linalg.solve(A.T @ A, A.T @ b)
        np.testing.assert_allclose(qr_solve(A, b), ref, rtol=1e-10)

    def test_chol_identity_and_diagonal(self):
        b = np.array([1.0, -2.0])
        np.testing.assert_array_equal(chol_solve(np.eye(2), b), b)
        np.testing.assert_allclose(chol_solve(np.diag([4.0, 9.0]), [8.0, 27.0]), [2.0, 3.0])

    def test_chol_matches_inverse(self):
        rng = np.random.default_rng(8)
        S = spd(rng, 5, cond=100)
        B = rng.standard_normal((5, 2))
        ref = np.linalg.inv(S) @ B
        assert np.linalg.norm(chol_solve(S, B) - ref) <= 1e-10 * np.linalg.norm(ref)

    @pytest.mark.parametrize("dtype, tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
    def test_cholesky_reconstructs(self, dtype, tol):
        S = spd(np.random.default_rng(9), 4, cond=10).astype(dtype)
        L = cholesky(S)
        assert L.dtype == dtype
        assert np.linalg.norm(L @ L.T - S) <= tol * np.linalg.norm(S)

    @pytest.mark.parametrize("dtype, tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
    def test_qr_and_cholesky_agree_on_spd_system(self, dtype, tol):
        rng = np.random.default_rng(10)
        S = spd(rng, 4, cond=10).astype(dtype)
        b = rng.standard_normal(4).astype(dtype)
        x1, x2 = qr_solve(S, b), chol_solve(S, b)
        assert np.linalg.norm(x1 - x2) <= tol * np.linalg.norm(x2)

    def test_condition_identity(self):
        assert condition_number(np.eye(3)) == pytest.approx(1.0)

    def test_condition_orthogonal_invariance(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((5, 3))
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        assert condition_number(Q @ A) == pytest.approx(condition_number(A), rel=1e-8)

    def test_condition_of_toy_matches_extended_precision_svd(self):
        import mpmath

        from fgsmooth.experiments import ToyConfig, make_toy
        from fgsmooth.solvers.sqrt import whitened_system

        p, _ = make_toy(ToyConfig(dt=1e-3))
        A, _ = whitened_system(p)
        with mpmath.workdps(40):
            s = mpmath.svd_r(mpmath.matrix(A.tolist()), compute_uv=False)
            ref = float(max(s) / min(s))
        assert condition_number(A) == pytest.approx(ref, rel=1e-6)

    @staticmethod
    def _graded(kappa):
        rng = np.random.default_rng(12)
        U, _ = np.linalg.qr(rng.standard_normal((8, 4)))
        V, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        A = U @ np.diag(np.geomspace(1.0, 1.0 / kappa, 4)) @ V.T
        x = np.ones(4)
        return A, A @ x, x

    def test_native_single_rejects_kappa_1e8(self):
        A, b, x = self._graded(1e8)
        np.testing.assert_allclose(qr_solve(A, b), x, rtol=1e-6)
        with pytest.raises(RankDeficient):
            qr_solve(A.astype(np.float32), b.astype(np.float32))

    def test_native_single_diverges_from_rounded_double(self):
        A, b, x = self._graded(1e5)
        rounded = qr_solve(A, b).astype(np.float32)
        native = qr_solve(A.astype(np.float32), b.astype(np.float32))
        assert native.dtype == np.float32
        err_rounded = np.linalg.norm(rounded.astype(np.float64) - x)
        err_native = np.linalg.norm(native.astype(np.float64) - x)
        assert err_native > 1e3 * err_rounded
