"""Pure-Python implementations of the CSR kernels.

Correct but slow: the Gauss-Seidel sweep is an interpreted row loop.  Used
when the compiled extension is absent or explicitly disabled.
"""

import numpy as np


def csr_matvec(indptr, indices, data, x, out):
    prod = data * x[indices]
    csum = np.concatenate(([0.0], np.cumsum(prod)))
    np.subtract(csum[indptr[1:]], csum[indptr[:-1]], out=out)


def gauss_seidel_sweep(indptr, indices, data, diag, x, b, reverse):
    n = len(indptr) - 1
    order = range(n - 1, -1, -1) if reverse else range(n)
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        acc = b[i] - data[lo:hi] @ x[indices[lo:hi]]
        x[i] += acc / diag[i]
