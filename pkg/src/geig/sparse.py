"""Sparse symmetric storage plus the dense solvers the hierarchy rests on.

Everything downstream (transform, multigrid, eigensolvers) moves matrices
through this module: CSR matrix-vector products, Galerkin triple products
R A R^T, small dense symmetric generalized eigensolves, a direct solver for
coarsest-level systems, and a plain conjugate-gradient loop.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels
from .errors import InvalidArgumentError, NonConvergenceError, NotPositiveDefiniteError

_SYM_RTOL = 1e-12

# Operands denser than this are multiplied through dense BLAS inside
# galerkin_triple; exact-mode level matrices fill in completely and
# sparse-sparse products on them are far slower than GEMM.
_DENSE_FILL_THRESHOLD = 0.2
_DENSE_SIZE_LIMIT = 5000


class SparseOperator:
    """Immutable CSR matrix with sorted column indices.

    Parameters
    ----------
    nrows, ncols : int
        Matrix shape.
    row_offsets : array of int64, length nrows + 1, nondecreasing.
    col_indices : array of int64, strictly increasing within each row.
    values : array of float64.
    symmetric : bool
        Declares that the matrix is (numerically) symmetric.  Checked on
        demand by :func:`check_symmetric`, not at construction.
    """

    __slots__ = ("nrows", "ncols", "row_offsets", "col_indices", "values",
                 "symmetric", "_csr", "_csr_t", "_diag")

    def __init__(self, nrows, ncols, row_offsets, col_indices, values,
                 symmetric=False, _validate=True):
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.symmetric = bool(symmetric)
        self._csr = None
        self._csr_t = None
        self._diag = None
        if _validate:
            self._validate_structure()

    def _validate_structure(self):
        ro = self.row_offsets
        if ro.shape != (self.nrows + 1,):
            raise InvalidArgumentError(
                f"row_offsets has length {ro.shape[0]}, expected nrows+1={self.nrows + 1}")
        if ro[0] != 0 or ro[-1] != len(self.col_indices):
            raise InvalidArgumentError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ro) < 0):
            raise InvalidArgumentError("row_offsets must be nondecreasing")
        if len(self.col_indices) != len(self.values):
            raise InvalidArgumentError("col_indices and values length mismatch")
        if len(self.col_indices) and (
                self.col_indices.min() < 0 or self.col_indices.max() >= self.ncols):
            raise InvalidArgumentError("column index out of range")
        # strictly increasing columns inside each row
        if len(self.col_indices) > 1:
            interior = np.diff(self.col_indices) <= 0
            row_starts = np.zeros(len(self.col_indices), dtype=bool)
            starts = ro[1:-1]
            row_starts[starts[starts < len(self.col_indices)]] = True
            if np.any(interior & ~row_starts[1:]):
                raise InvalidArgumentError("col_indices must be strictly increasing per row")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_scipy(cls, mat, symmetric=False):
        csr = scipy.sparse.csr_matrix(mat)
        csr.sort_indices()
        csr.sum_duplicates()
        op = cls(csr.shape[0], csr.shape[1],
                 csr.indptr.astype(np.int64), csr.indices.astype(np.int64),
                 csr.data.astype(np.float64), symmetric=symmetric, _validate=False)
        return op

    @classmethod
    def from_dense(cls, arr, symmetric=False, keep_zeros=False):
        arr = np.asarray(arr, dtype=np.float64)
        if keep_zeros:
            nrows, ncols = arr.shape
            ro = np.arange(nrows + 1, dtype=np.int64) * ncols
            ci = np.tile(np.arange(ncols, dtype=np.int64), nrows)
            return cls(nrows, ncols, ro, ci, arr.ravel().copy(),
                       symmetric=symmetric, _validate=False)
        return cls.from_scipy(scipy.sparse.csr_matrix(arr), symmetric=symmetric)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, symmetric=False):
        coo = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape)
        return cls.from_scipy(coo, symmetric=symmetric)

    @classmethod
    def identity(cls, n):
        ro = np.arange(n + 1, dtype=np.int64)
        ci = np.arange(n, dtype=np.int64)
        return cls(n, n, ro, ci, np.ones(n), symmetric=True, _validate=False)

    @classmethod
    def from_diagonal(cls, d):
        d = np.asarray(d, dtype=np.float64)
        n = len(d)
        ro = np.arange(n + 1, dtype=np.int64)
        ci = np.arange(n, dtype=np.int64)
        return cls(n, n, ro, ci, d.copy(), symmetric=True, _validate=False)

    # -- views -------------------------------------------------------------

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return len(self.values)

    def to_scipy(self):
        if self._csr is None:
            self._csr = scipy.sparse.csr_matrix(
                (self.values, self.col_indices, self.row_offsets),
                shape=(self.nrows, self.ncols))
        return self._csr

    def to_dense(self):
        return self.to_scipy().toarray()

    def transpose(self):
        if self._csr_t is None:
            self._csr_t = SparseOperator.from_scipy(self.to_scipy().T.tocsr(),
                                                    symmetric=self.symmetric)
        return self._csr_t

    def diagonal(self):
        if self._diag is None:
            self._diag = self.to_scipy().diagonal().astype(np.float64)
        return self._diag

    def row(self, i):
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def fill_fraction(self):
        denom = max(1, self.nrows * self.ncols)
        return self.nnz / denom

    def __repr__(self):
        return (f"SparseOperator({self.nrows}x{self.ncols}, nnz={self.nnz}, "
                f"symmetric={self.symmetric})")

    def matvec(self, x, out=None):
        return spmv(self, x, out=out)

    def rmatvec(self, x, out=None):
        """y = A^T x, through the cached transpose."""
        return spmv(self.transpose(), x, out=out)


def spmv(A, x, out=None):
    """Sparse matrix-vector product y = A x.

    Raises
    ------
    InvalidArgumentError
        If len(x) != A.ncols.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.ncols,):
        raise InvalidArgumentError(
            f"spmv: x has shape {x.shape}, operator has {A.ncols} columns")
    if out is None:
        out = np.empty(A.nrows)
    _kernels.csr_matvec(A.row_offsets, A.col_indices, A.values,
                        np.ascontiguousarray(x), out)
    return out


def check_symmetric(A, rtol=_SYM_RTOL):
    """True when max |A - A^T| <= rtol * max |A|."""
    if A.nrows != A.ncols:
        return False
    d = A.to_scipy() - A.to_scipy().T
    if d.nnz == 0:
        return True
    scale = np.abs(A.values).max() if A.nnz else 0.0
    return np.abs(d.data).max() <= rtol * max(scale, 1e-300)


def galerkin_triple(R, A):
    """Galerkin triple product R A R^T with the exact product pattern.

    No entries are dropped.  The result carries the symmetric flag; for
    symmetric A it is symmetrized exactly (half-sum with its transpose,
    which only rearranges roundoff).
    """
    if R.ncols != A.nrows or A.nrows != A.ncols:
        raise InvalidArgumentError(
            f"galerkin_triple: R is {R.shape}, A is {A.shape}")
    m = R.nrows
    dense_ok = m <= _DENSE_SIZE_LIMIT and A.nrows <= _DENSE_SIZE_LIMIT
    if dense_ok and (R.fill_fraction() > _DENSE_FILL_THRESHOLD
                     or A.fill_fraction() > _DENSE_FILL_THRESHOLD):
        Rd = R.to_dense()
        P = Rd @ (A.to_scipy() @ Rd.T)
        P = 0.5 * (P + P.T)
        return SparseOperator.from_dense(P, symmetric=True, keep_zeros=True)
    prod = (R.to_scipy() @ A.to_scipy()) @ R.to_scipy().T
    prod = 0.5 * (prod + prod.T)
    return SparseOperator.from_scipy(prod.tocsr(), symmetric=True)


class DenseSymMatrix:
    """Dense symmetric matrix; construction enforces exact entry symmetry."""

    __slots__ = ("n", "entries")

    def __init__(self, entries):
        arr = np.array(entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidArgumentError("DenseSymMatrix requires a square array")
        # (a + a^T)/2 is bitwise symmetric because IEEE addition commutes
        self.entries = 0.5 * (arr + arr.T)
        self.n = arr.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.entries.astype(dtype)
        return self.entries


def _as_dense_sym(mat):
    if isinstance(mat, DenseSymMatrix):
        return mat.entries
    if isinstance(mat, SparseOperator):
        return DenseSymMatrix(mat.to_dense()).entries
    return DenseSymMatrix(np.asarray(mat, dtype=np.float64)).entries


def jacobi_eigh(a, tol=1e-14, max_sweeps=60):
    """Eigendecomposition of a dense symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm falls below ``tol`` times
    the initial Frobenius norm.  Returns (eigenvalues ascending, eigenvector
    columns); each eigenvector's largest-magnitude component is made
    positive so the output is deterministic.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.ravel().copy(), v
    norm0 = np.linalg.norm(a)
    if norm0 == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        offmat = a.copy()
        np.fill_diagonal(offmat, 0.0)
        off = np.linalg.norm(offmat)
        if off <= tol * norm0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    lams = np.diag(a).copy()
    order = np.argsort(lams, kind="stable")
    lams = lams[order]
    v = v[:, order]
    # deterministic signs
    for j in range(n):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return lams, v


class DenseEigResult:
    """All eigenpairs of K x = lambda M x, ascending.

    ``vectors`` are M-orthonormal columns; ``vectors_energy`` rescale each
    column to x^T K x = 1 (left untouched when that quadratic form is not
    positive).
    """

    __slots__ = ("lambdas", "vectors", "vectors_energy")

    def __init__(self, lambdas, vectors, vectors_energy):
        self.lambdas = lambdas
        self.vectors = vectors
        self.vectors_energy = vectors_energy

    def __iter__(self):
        return iter(zip(self.lambdas, self.vectors.T))

    def __len__(self):
        return len(self.lambdas)


def dense_sym_geig(K, M=None):
    """Solve the dense symmetric generalized problem K x = lambda M x.

    M is reduced by Cholesky to a standard symmetric problem which is then
    diagonalized with cyclic Jacobi rotations.  ``M=None`` means identity.

    Raises
    ------
    NotPositiveDefiniteError
        When the Cholesky factorization of M fails.
    """
    Kd = _as_dense_sym(K)
    if M is None:
        lams, y = jacobi_eigh(Kd)
        x = y
    else:
        Md = _as_dense_sym(M)
        if Md.shape != Kd.shape:
            raise InvalidArgumentError("dense_sym_geig: K and M shapes differ")
        try:
            L = np.linalg.cholesky(Md)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("mass matrix is not SPD") from exc
        # C = L^{-1} K L^{-T}
        tmp = scipy.linalg.solve_triangular(L, Kd, lower=True)
        C = scipy.linalg.solve_triangular(L, tmp.T, lower=True).T
        C = 0.5 * (C + C.T)
        lams, y = jacobi_eigh(C)
        x = scipy.linalg.solve_triangular(L.T, y, lower=False)
    energies = np.einsum("ij,ij->j", x, Kd @ x)
    xe = x.copy()
    pos = energies > 0
    xe[:, pos] = x[:, pos] / np.sqrt(energies[pos])
    return DenseEigResult(lams, x, xe)


def _dense_cholesky_solve(Ad, b):
    try:
        L = np.linalg.cholesky(Ad)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not SPD") from exc
    y = scipy.linalg.solve_triangular(L, b, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)


def direct_solve(A, b):
    """Solve A x = b for SPD A with a direct factorization.

    Dense Cholesky below 1200 unknowns, sparse LU above.  The residual is
    refined once if needed so that ||Ax - b|| <= 1e-12 ||b|| on reasonably
    conditioned systems.
    """
    b = np.asarray(b, dtype=np.float64)
    if isinstance(A, SparseOperator):
        if A.nrows != A.ncols or b.shape[0] != A.nrows:
            raise InvalidArgumentError("direct_solve: shape mismatch")
        if A.nrows <= 1200:
            x = _dense_cholesky_solve(A.to_dense(), b)
            r = b - (A.to_scipy() @ x)
            x = x + _dense_cholesky_solve(A.to_dense(), r)
        else:
            solver = make_direct_solver(A)
            x = solver(b)
        return x
    Ad = _as_dense_sym(A)
    x = _dense_cholesky_solve(Ad, b)
    r = b - Ad @ x
    return x + _dense_cholesky_solve(Ad, r)


def make_direct_solver(A):
    """Factorize SPD A once; returns a callable b -> x with one refinement step.

    Dense Cholesky for small systems, SuperLU for large sparse ones.
    """
    if isinstance(A, SparseOperator) and A.nrows > 1200:
        lu = scipy.sparse.linalg.splu(A.to_scipy().tocsc())
        csr = A.to_scipy()

        def solve_sparse(b):
            x = lu.solve(b)
            if not np.all(np.isfinite(x)):
                raise NotPositiveDefiniteError("sparse factorization failed")
            return x + lu.solve(b - csr @ x)

        return solve_sparse
    Ad = A.to_dense() if isinstance(A, SparseOperator) else _as_dense_sym(A)
    try:
        L = np.linalg.cholesky(Ad)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not SPD") from exc

    def solve_dense(b):
        y = scipy.linalg.solve_triangular(L, b, lower=True)
        x = scipy.linalg.solve_triangular(L.T, y, lower=False)
        r = b - Ad @ x
        y = scipy.linalg.solve_triangular(L, r, lower=True)
        return x + scipy.linalg.solve_triangular(L.T, y, lower=False)

    return solve_dense


def cg(matvec, b, tol=1e-12, maxiter=None, x0=None):
    """Plain conjugate gradients for an SPD operator given as a matvec.

    Stops at ||b - A x|| <= tol * ||b||.  Raises NonConvergenceError with the
    residual history when the budget runs out; raises NotPositiveDefiniteError
    on a nonpositive curvature p^T A p.
    """
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    if maxiter is None:
        maxiter = 10 * n + 100
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return x
    p = r.copy()
    rs = r @ r
    for _ in range(maxiter):
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0.0:
            raise NotPositiveDefiniteError("nonpositive curvature in CG")
        alpha = rs / curv
        x += alpha * p
        r -= alpha * Ap
        rn = np.linalg.norm(r) / bnorm
        history.append(rn)
        if rn <= tol:
            return x
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise NonConvergenceError(
        f"CG did not reach tol={tol} in {maxiter} iterations", history=history)


# -- coordinate text format ------------------------------------------------

def dump_coordinate(A, path):
    """Write one "i j value" line per stored entry, 0-based, 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        ro, ci, vals = A.row_offsets, A.col_indices, A.values
        for i in range(A.nrows):
            for k in range(ro[i], ro[i + 1]):
                fh.write(f"{i} {ci[k]} {vals[k]:.17g}\n")


def load_coordinate(path, shape, symmetric=False):
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise InvalidArgumentError(f"{path}:{ln}: expected 'i j value'")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    return SparseOperator.from_coo(rows, cols, vals, shape, symmetric=symmetric)
