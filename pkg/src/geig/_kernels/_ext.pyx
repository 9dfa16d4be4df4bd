# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels: matrix-vector products and Gauss-Seidel sweeps.

These are the sequential inner loops that dominate solver runtime; the
pure-Python twins live in ``fallback`` and are selected automatically when
this extension has not been built.
"""

from libc.stdint cimport int64_t


def csr_matvec(const int64_t[::1] indptr,
               const int64_t[::1] indices,
               const double[::1] data,
               const double[::1] x,
               double[::1] out):
    """out[i] = sum_j A[i, j] * x[j] for a CSR matrix."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, jj
    cdef double acc
    for i in range(n):
        acc = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            acc += data[jj] * x[indices[jj]]
        out[i] = acc


def gauss_seidel_sweep(const int64_t[::1] indptr,
                       const int64_t[::1] indices,
                       const double[::1] data,
                       const double[::1] diag,
                       double[::1] x,
                       const double[::1] b,
                       bint reverse):
    """One in-place Gauss-Seidel sweep for A x = b.

    Rows are visited in ascending order (descending when ``reverse``);
    ``diag`` holds the diagonal entries of A, which must be nonzero.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, jj
    cdef double acc
    if reverse:
        for i in range(n - 1, -1, -1):
            acc = b[i]
            for jj in range(indptr[i], indptr[i + 1]):
                acc -= data[jj] * x[indices[jj]]
            x[i] = x[i] + acc / diag[i]
    else:
        for i in range(n):
            acc = b[i]
            for jj in range(indptr[i], indptr[i + 1]):
                acc -= data[jj] * x[indices[jj]]
            x[i] = x[i] + acc / diag[i]
