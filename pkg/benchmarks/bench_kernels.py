"""Time the compiled CSR kernels against the pure-Python fallbacks.

Usage:  python benchmarks/bench_kernels.py [n_cells]

Builds the bilinear stiffness matrix on an n x n grid (default 128) and
times matrix-vector products and Gauss-Seidel sweeps through both kernel
implementations, plus one full multigrid V-cycle as an end-to-end number.
"""

import sys
import time

import numpy as np

from geig import _kernels
from geig._kernels import fallback
from geig.fem import CoefficientField, Grid, assemble
from geig.hierarchy import build_hierarchy
from geig.multigrid import MgParams, mg
from geig.transform import transform


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
    grid = Grid(n)
    K, _ = assemble(grid, CoefficientField.constant(grid))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(K.nrows)
    b = rng.standard_normal(K.nrows)
    out = np.empty(K.nrows)
    diag = K.diagonal()

    print(f"grid {n}x{n}: {K.nrows} unknowns, {K.nnz} stored entries")
    print(f"compiled extension available: {_kernels.HAVE_COMPILED_KERNELS}")

    impls = [("fallback", fallback)]
    if _kernels.HAVE_COMPILED_KERNELS:
        impls.insert(0, ("compiled", _kernels.compiled))

    for name, impl in impls:
        t = timeit(lambda: impl.csr_matvec(K.row_offsets, K.col_indices,
                                           K.values, x, out), 5)
        print(f"  matvec        {name:9s} {t * 1e3:9.3f} ms")
    for name, impl in impls:
        xw = np.zeros(K.nrows)
        t = timeit(lambda: impl.gauss_seidel_sweep(
            K.row_offsets, K.col_indices, K.values, diag, xw, b, False), 5)
        print(f"  gs sweep      {name:9s} {t * 1e3:9.3f} ms")

    q = max(2, n.bit_length() - 2)
    while n % (2 ** q) != 0:
        q -= 1
    dec = transform(K, build_hierarchy(q, grid), mode="localized", radius=1)
    params = MgParams()
    z = np.zeros(K.nrows)
    t = timeit(lambda: mg(dec.q, z, b, dec, params), 3)
    print(f"  V-cycle (q={dec.q}) with active kernels: {t * 1e3:9.3f} ms")


if __name__ == "__main__":
    main()
