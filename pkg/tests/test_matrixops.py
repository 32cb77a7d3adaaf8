import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swanopt.matrixops import (
    as_matrix,
    frobenius_norm,
    make_spd,
    matmul,
    random_matrix,
    sample_stiefel,
    schatten1_norm,
    sym_eig,
    to_wide,
)


def brute_matmul(a, b):
    """Triple-loop product, the independent oracle for matmul."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def brute_det(a):
    """Cofactor-expansion determinant for small matrices."""
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1) ** j * a[0, j] * brute_det(minor)
    return total


class TestMatmul:
    def test_identity(self):
        a = random_matrix(2, 3, 0)
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_diagonal_product(self):
        got = matmul(np.diag([2.0, 3.0]), np.diag([4.0, 5.0]))
        assert np.array_equal(got, np.diag([8.0, 15.0]))

    def test_against_triple_loop(self):
        a = random_matrix(3, 4, 11)
        b = random_matrix(4, 2, 12)
        assert np.allclose(matmul(a, b), brute_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_reported(self):
        with pytest.raises(ValueError, match="3x4.*2x2"):
            matmul(random_matrix(3, 4, 0), random_matrix(2, 2, 1))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_associativity(self, seed):
        a = random_matrix(4, 3, seed)
        b = random_matrix(3, 5, seed + 1)
        c = random_matrix(5, 2, seed + 2)
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-9 * max(np.linalg.norm(left), 1.0)


class TestSymEig:
    def test_diagonal(self):
        dec = sym_eig(np.diag([3.0, 1.0]))
        assert np.allclose(dec.eigenvalues, [3.0, 1.0])
        assert np.allclose(np.abs(dec.eigenvectors), np.eye(2), atol=1e-12)

    def test_identity(self):
        dec = sym_eig(np.eye(5))
        assert np.allclose(dec.eigenvalues, 1.0)

    def test_diagonalizes(self):
        a = random_matrix(8, 8, 3)
        a = a + a.T
        dec = sym_eig(a)
        d = dec.eigenvectors.T @ a @ dec.eigenvectors
        off = d - np.diag(np.diag(d))
        assert np.max(np.abs(off)) <= 1e-9

    def test_orthogonal_and_reconstructs(self):
        a = random_matrix(10, 10, 4)
        a = a + a.T
        dec = sym_eig(a)
        q = dec.eigenvectors
        assert np.linalg.norm(q @ q.T - np.eye(10)) <= 1e-10
        recon = q @ np.diag(dec.eigenvalues) @ q.T
        assert np.linalg.norm(recon - a) <= 1e-8 * np.linalg.norm(a)

    def test_descending_order(self):
        dec = sym_eig(make_spd(7, 100.0, 0))
        assert np.all(np.diff(dec.eigenvalues) <= 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_trace_and_determinant(self, seed):
        a = random_matrix(5, 5, seed)
        a = a + a.T
        dec = sym_eig(a)
        assert np.isclose(dec.eigenvalues.sum(), np.trace(a), rtol=1e-9, atol=1e-12)
        det = brute_det(a)
        assert np.isclose(np.prod(dec.eigenvalues), det, rtol=1e-8, atol=1e-10)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            sym_eig(random_matrix(3, 4, 0))


class TestNorms:
    def test_schatten_diagonal(self):
        assert np.isclose(schatten1_norm(np.diag([2.0, -3.0])), 5.0)

    def test_schatten_orthogonal(self):
        q = sample_stiefel(6, 6, 2)
        assert np.isclose(schatten1_norm(q), 6.0, atol=1e-10)

    def test_schatten_against_svd_oracle(self):
        # second, independent SVD route (LAPACK bidiagonalization)
        a = random_matrix(5, 5, 9)
        oracle = np.linalg.svd(a, compute_uv=False).sum()
        assert np.isclose(schatten1_norm(a), oracle, rtol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_norm_ordering(self, seed):
        a = random_matrix(4, 6, seed)
        assert schatten1_norm(a) >= frobenius_norm(a) - 1e-12

    def test_frobenius(self):
        assert frobenius_norm(np.zeros((3, 2))) == 0.0
        assert np.isclose(frobenius_norm(np.eye(3)), np.sqrt(3.0))
        assert np.isclose(frobenius_norm(np.array([[3.0, 4.0]])), 5.0)


class TestSampling:
    def test_stiefel_1x1(self):
        w = sample_stiefel(1, 1, 123)
        assert w.shape == (1, 1) and np.isclose(abs(w[0, 0]), 1.0)

    def test_stiefel_square(self):
        w = sample_stiefel(4, 4, 7)
        assert np.linalg.norm(w @ w.T - np.eye(4)) <= 1e-10

    def test_stiefel_wide_gram(self):
        w = sample_stiefel(3, 8, 1)
        assert np.linalg.norm(w @ w.T - np.eye(3)) <= 1e-10

    def test_stiefel_rejects_tall(self):
        with pytest.raises(ValueError, match="rows <= cols"):
            sample_stiefel(5, 3, 0)

    def test_stiefel_deterministic(self):
        assert np.array_equal(sample_stiefel(3, 5, 42), sample_stiefel(3, 5, 42))

    def test_make_spd_identity_like(self):
        h = make_spd(6, 1.0, 5)
        vals = np.linalg.eigvalsh(h)
        assert vals[-1] / vals[0] <= 1.0 + 1e-6

    def test_make_spd_condition_number(self):
        h = make_spd(50, 1e4, 3)
        dec = sym_eig(h)
        kappa = dec.eigenvalues[0] / dec.eigenvalues[-1]
        assert 1e4 * (1 - 1e-6) <= kappa <= 1e4 * (1 + 1e-6)

    def test_make_spd_positive_definite(self):
        h = make_spd(4, 10.0, 11)
        assert np.all(np.linalg.eigvalsh(h) > 0)

    def test_make_spd_rejects_bad_kappa(self):
        with pytest.raises(ValueError, match="condition_number"):
            make_spd(4, 0.5, 0)


class TestValidation:
    def test_rejects_nan(self):
        bad = np.ones((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            as_matrix(bad)

    def test_rejects_1d(self):
        with pytest.raises(ValueError, match="2-D"):
            as_matrix(np.ones(3))

    def test_to_wide(self):
        a = random_matrix(5, 2, 0)
        wide, flipped = to_wide(a)
        assert flipped and wide.shape == (2, 5)
        same, flat = to_wide(wide)
        assert not flat and same.shape == (2, 5)
