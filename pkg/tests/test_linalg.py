import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nn.errors import ConvergenceError, ShapeError
from nn.linalg import as_matrix, effective_rank, frozen, gaussian_matrix, matmul, relative_error, svd


def assert_valid_svd(m, result, tol=1e-10):
    k = min(m.shape)
    assert result.u.shape == (m.shape[0], k)
    assert result.s.shape == (k,)
    assert result.vt.shape == (k, m.shape[1])
    assert np.all(result.s >= 0)
    assert np.all(np.diff(result.s) <= 0)
    assert relative_error(result.reconstruct(), m) < tol
    assert np.max(np.abs(result.u.T @ result.u - np.eye(k))) < tol
    assert np.max(np.abs(result.vt @ result.vt.T - np.eye(k))) < tol


class TestMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_matrix([[1.0, np.nan]])

    def test_rejects_vectors(self):
        with pytest.raises(ShapeError):
            as_matrix([1.0, 2.0])

    def test_frozen_is_read_only_copy(self):
        m = np.ones((2, 2))
        f = frozen(m)
        m[0, 0] = 5.0
        assert f[0, 0] == 1.0
        with pytest.raises(ValueError):
            f[0, 0] = 2.0


class TestMatmul:
    def test_associative(self, rng):
        for _ in range(50):
            m, k, n, p = rng.integers(1, 20, size=4)
            a, b, c = rng.standard_normal((m, k)), rng.standard_normal((k, n)), rng.standard_normal((n, p))
            assert relative_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-10

    def test_identity(self, rng):
        m = rng.standard_normal((3, 3))
        assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_arithmetic(self):
        assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])

    def test_triple_loop_oracle(self, rng):
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
        expected = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        assert_allclose(matmul(a, b), expected, atol=1e-12)

    def test_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match="2x3 by 2x3"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestGaussianMatrix:
    def test_zero_std(self):
        assert_array_equal(gaussian_matrix(3, 4, 0.0, 7), np.zeros((3, 4)))

    def test_deterministic(self):
        assert_array_equal(gaussian_matrix(5, 6, 0.5, 99), gaussian_matrix(5, 6, 0.5, 99))

    def test_seeds_differ(self):
        assert not np.array_equal(gaussian_matrix(5, 6, 1.0, 1), gaussian_matrix(5, 6, 1.0, 2))

    def test_moments(self):
        m = gaussian_matrix(1000, 1000, 1.0, 2024)
        assert abs(m.mean()) < 0.01
        assert abs(m.std() - 1.0) < 0.01

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            gaussian_matrix(2, 2, -1.0, 0)


class TestSvd:
    def test_identity(self):
        assert_allclose(svd(np.eye(4)).s, np.ones(4), atol=1e-14)

    def test_diagonal(self):
        assert_allclose(svd(np.diag([1.0, 3.0])).s, [3.0, 1.0], atol=1e-14)

    def test_tall_against_gram_eigenvalues(self, rng):
        m = rng.standard_normal((5, 3))
        result = svd(m)
        assert_valid_svd(m, result)
        eig = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(m.T @ m))[::-1], 0, None))
        assert_allclose(result.s, eig, atol=1e-8)

    def test_wide(self, rng):
        m = rng.standard_normal((3, 7))
        assert_valid_svd(m, svd(m))

    def test_rank_deficient(self, rng):
        m = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
        result = svd(m)
        assert_valid_svd(m, result)
        assert effective_rank(result.s) == 2

    def test_zero_matrix(self):
        result = svd(np.zeros((4, 3)))
        assert_array_equal(result.s, np.zeros(3))
        assert np.max(np.abs(result.u.T @ result.u - np.eye(3))) < 1e-12

    def test_single_column(self):
        result = svd(np.array([[3.0], [4.0]]))
        assert_allclose(result.s, [5.0])

    def test_sweep_cap_raises(self, rng):
        with pytest.raises(ConvergenceError):
            svd(rng.standard_normal((8, 8)), max_sweeps=1)

    def test_random_batch(self, rng):
        for _ in range(50):
            rows, cols = rng.integers(1, 33, size=2)
            m = rng.standard_normal((rows, cols))
            assert_valid_svd(m, svd(m))

    @pytest.mark.slow
    def test_thousand_random_matrices(self, rng):
        for _ in range(1000):
            rows, cols = rng.integers(1, 65, size=2)
            m = rng.standard_normal((rows, cols))
            assert_valid_svd(m, svd(m))


class TestEffectiveRank:
    def test_drops_tiny_values(self):
        assert effective_rank([3.0, 1.0, 1e-15], 1e-8) == 2

    def test_all_zero(self):
        assert effective_rank([0.0, 0.0, 0.0]) == 0

    def test_rank_of_product(self, rng):
        s = svd(rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))).s
        assert effective_rank(s, 1e-8) == 2

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            effective_rank([1.0, 2.0])
