"""CSR hot kernels with a compiled core and a pure-Python fallback.

The Cython extension is preferred whenever it has been built.  Setting the
environment variable ``GEIG_FORCE_FALLBACK=1`` before import forces the
pure-Python implementations (useful for debugging and for the kernel
benchmark, which times both).
"""

import os

from . import fallback

try:
    from . import _ext as compiled
except ImportError:
    compiled = None

if os.environ.get("GEIG_FORCE_FALLBACK") == "1" or compiled is None:
    _impl = fallback
    HAVE_COMPILED_KERNELS = False
else:
    _impl = compiled
    HAVE_COMPILED_KERNELS = True


def csr_matvec(indptr, indices, data, x, out):
    _impl.csr_matvec(indptr, indices, data, x, out)


def gauss_seidel_sweep(indptr, indices, data, diag, x, b, reverse=False):
    _impl.gauss_seidel_sweep(indptr, indices, data, diag, x, b, reverse)
