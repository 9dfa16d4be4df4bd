import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geig.errors import InvalidArgumentError, NotPositiveDefiniteError
from geig.sparse import (
    DenseSymMatrix,
    SparseOperator,
    cg,
    check_symmetric,
    dense_sym_geig,
    direct_solve,
    dump_coordinate,
    galerkin_triple,
    jacobi_eigh,
    load_coordinate,
    spmv,
)

from _oracles import dense_matvec, random_spd


class TestSparseOperator:
    def test_structure_validation(self):
        with pytest.raises(InvalidArgumentError):
            SparseOperator(2, 2, [0, 1], [0], [1.0])  # offsets too short
        with pytest.raises(InvalidArgumentError):
            SparseOperator(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])  # unsorted row
        with pytest.raises(InvalidArgumentError):
            SparseOperator(1, 1, [0, 1], [3], [1.0])  # column out of range

    def test_roundtrip_dense(self):
        rng = np.random.default_rng(0)
        d = rng.standard_normal((5, 7))
        d[np.abs(d) < 0.7] = 0.0
        op = SparseOperator.from_dense(d)
        np.testing.assert_array_equal(op.to_dense(), d)

    def test_symmetric_flag_check(self):
        a = random_spd(6, np.random.default_rng(1))
        op = SparseOperator.from_dense(a, symmetric=True)
        assert check_symmetric(op)
        b = a.copy()
        b[0, 1] += 1.0
        assert not check_symmetric(SparseOperator.from_dense(b))


class TestSpmv:
    def test_identity(self):
        A = SparseOperator.identity(3)
        np.testing.assert_array_equal(spmv(A, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_diagonal(self):
        A = SparseOperator.from_diagonal([2.0, 3.0])
        np.testing.assert_array_equal(spmv(A, [1.0, 1.0]), [2.0, 3.0])

    def test_matches_dense_rowwise(self):
        rng = np.random.default_rng(7)
        dense = random_spd(10, rng)
        A = SparseOperator.from_dense(dense, symmetric=True)
        x = rng.standard_normal(10)
        expected = dense_matvec(dense, x)
        got = spmv(A, x)
        assert np.linalg.norm(got - expected) <= 1e-13 * np.linalg.norm(expected)

    def test_dimension_mismatch(self):
        A = SparseOperator.identity(3)
        with pytest.raises(InvalidArgumentError):
            spmv(A, np.ones(4))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31))
    def test_linearity(self, n, seed):
        rng = np.random.default_rng(seed)
        dense = rng.standard_normal((n, n))
        dense[np.abs(dense) < 0.4] = 0.0
        A = SparseOperator.from_dense(dense)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = rng.standard_normal(2)
        lhs = spmv(A, a * x + b * y)
        rhs = a * spmv(A, x) + b * spmv(A, y)
        scale = max(np.linalg.norm(lhs), 1.0)
        assert np.linalg.norm(lhs - rhs) <= 1e-13 * scale


class TestGalerkinTriple:
    def test_identity_restriction(self):
        rng = np.random.default_rng(3)
        A = SparseOperator.from_dense(random_spd(6, rng), symmetric=True)
        out = galerkin_triple(SparseOperator.identity(6), A)
        np.testing.assert_allclose(out.to_dense(), A.to_dense(), rtol=0, atol=1e-15)

    def test_single_row_sums_diagonal(self):
        R = SparseOperator.from_dense(np.array([[1.0, 1.0]]))
        A = SparseOperator.from_diagonal([2.0, 3.0])
        out = galerkin_triple(R, A)
        assert out.shape == (1, 1)
        assert out.to_dense()[0, 0] == pytest.approx(5.0, abs=0)

    def test_matches_dense_triple_product(self):
        rng = np.random.default_rng(11)
        Rd = rng.standard_normal((4, 8))
        Rd[np.abs(Rd) < 0.8] = 0.0
        Ad = random_spd(8, rng)
        out = galerkin_triple(SparseOperator.from_dense(Rd),
                              SparseOperator.from_dense(Ad, symmetric=True))
        expected = Rd @ Ad @ Rd.T
        err = np.linalg.norm(out.to_dense() - expected) / np.linalg.norm(expected)
        assert err <= 1e-12

    def test_output_symmetric_to_machine_precision(self):
        rng = np.random.default_rng(12)
        Rd = rng.standard_normal((5, 9))
        A = SparseOperator.from_dense(random_spd(9, rng), symmetric=True)
        out = galerkin_triple(SparseOperator.from_dense(Rd), A)
        d = out.to_dense()
        np.testing.assert_array_equal(d, d.T)

    def test_dimension_mismatch(self):
        R = SparseOperator.from_dense(np.ones((2, 3)))
        A = SparseOperator.identity(4)
        with pytest.raises(InvalidArgumentError):
            galerkin_triple(R, A)


class TestDenseSymGeig:
    def test_diagonal_case(self):
        res = dense_sym_geig(np.diag([2.0, 6.0]), np.eye(2))
        np.testing.assert_allclose(res.lambdas, [2.0, 6.0], atol=1e-13)
        np.testing.assert_allclose(np.abs(res.vectors), np.eye(2), atol=1e-12)

    def test_scalar_ratio(self):
        res = dense_sym_geig(np.array([[4.0]]), np.array([[2.0]]))
        assert res.lambdas[0] == pytest.approx(2.0, rel=1e-14)

    def test_residual_oracle_random_pair(self):
        rng = np.random.default_rng(5)
        K = random_spd(6, rng)
        M = random_spd(6, rng)
        res = dense_sym_geig(K, M)
        knorm = np.linalg.norm(K, 2)
        for lam, x in res:
            assert np.linalg.norm(K @ x - lam * (M @ x)) <= 1e-10 * knorm

    def test_m_orthonormal_and_energy_normalized(self):
        rng = np.random.default_rng(6)
        K, M = random_spd(5, rng), random_spd(5, rng)
        res = dense_sym_geig(K, M)
        gram = res.vectors.T @ M @ res.vectors
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-11)
        for j in range(5):
            xe = res.vectors_energy[:, j]
            assert xe @ K @ xe == pytest.approx(1.0, abs=1e-11)

    def test_not_spd_mass(self):
        with pytest.raises(NotPositiveDefiniteError):
            dense_sym_geig(np.eye(2), np.diag([1.0, -1.0]))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31))
    def test_congruence_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        K, M = random_spd(n, rng), random_spd(n, rng)
        P = rng.standard_normal((n, n)) + n * np.eye(n)
        res1 = dense_sym_geig(K, M)
        res2 = dense_sym_geig(0.5 * (P.T @ K @ P + (P.T @ K @ P).T),
                              0.5 * (P.T @ M @ P + (P.T @ M @ P).T))
        np.testing.assert_allclose(res1.lambdas, res2.lambdas, rtol=1e-10)

    def test_jacobi_against_closed_form_tridiagonal(self):
        from _oracles import tridiag_laplacian_spectrum

        n = 9
        T = np.diag(2.0 * np.ones(n)) + np.diag(-np.ones(n - 1), 1) + np.diag(-np.ones(n - 1), -1)
        lams, vecs = jacobi_eigh(T)
        np.testing.assert_allclose(lams, tridiag_laplacian_spectrum(n), rtol=1e-13)
        np.testing.assert_allclose(vecs @ np.diag(lams) @ vecs.T, T, atol=1e-12)


class TestDirectSolve:
    def test_identity(self):
        b = np.array([3.0, -1.0, 2.0])
        np.testing.assert_allclose(direct_solve(SparseOperator.identity(3), b), b)

    def test_diagonal(self):
        A = SparseOperator.from_diagonal([2.0, 4.0])
        np.testing.assert_allclose(direct_solve(A, np.array([2.0, 4.0])), [1.0, 1.0])

    def test_residual_random_spd(self):
        rng = np.random.default_rng(9)
        dense = random_spd(20, rng)
        A = SparseOperator.from_dense(dense, symmetric=True)
        b = rng.standard_normal(20)
        x = direct_solve(A, b)
        assert np.linalg.norm(dense @ x - b) <= 1e-12 * np.linalg.norm(b)

    def test_not_spd(self):
        A = SparseOperator.from_diagonal([1.0, -1.0])
        with pytest.raises(NotPositiveDefiniteError):
            direct_solve(A, np.ones(2))


class TestCg:
    def test_matches_direct(self):
        rng = np.random.default_rng(13)
        dense = random_spd(30, rng)
        A = SparseOperator.from_dense(dense, symmetric=True)
        b = rng.standard_normal(30)
        x = cg(lambda v: spmv(A, v), b, tol=1e-13)
        assert np.linalg.norm(dense @ x - b) <= 1e-12 * np.linalg.norm(b)

    def test_zero_rhs(self):
        np.testing.assert_array_equal(cg(lambda v: v, np.zeros(4)), np.zeros(4))


class TestDenseSymMatrix:
    def test_exact_symmetry_enforced(self):
        a = np.array([[1.0, 2.0], [2.0 + 1e-17, 3.0]])
        m = DenseSymMatrix(a)
        np.testing.assert_array_equal(m.entries, m.entries.T)

    def test_rejects_nonsquare(self):
        with pytest.raises(InvalidArgumentError):
            DenseSymMatrix(np.ones((2, 3)))


class TestCoordinateFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(21)
        d = rng.standard_normal((4, 6))
        d[np.abs(d) < 0.6] = 0.0
        op = SparseOperator.from_dense(d)
        path = tmp_path / "m.txt"
        dump_coordinate(op, path)
        back = load_coordinate(path, shape=(4, 6))
        np.testing.assert_array_equal(back.to_dense(), d)
