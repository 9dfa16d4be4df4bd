"""Multilevel eigenpair correction over the adapted decomposition.

The scheme solves the generalized eigenproblem once on the coarsest level,
then walks the hierarchy upward: at each level every eigenpair gets one (or
more) correction sweeps, each consisting of a multigrid-approximated linear
solve followed by a small Rayleigh-Ritz step on the coarsest space augmented
with the corrected vectors.  At the finest level the sweeps repeat until the
eigenvalues stop moving.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import (
    DegenerateBasisError,
    InvalidArgumentError,
    NonConvergenceError,
)
from .multigrid import MgParams, mg
from .sparse import dense_sym_geig, jacobi_eigh, make_direct_solver, spmv

_CLUSTER_RTOL = 1e-8
_BASIS_DROP_TOL = 1e-12


@dataclass(frozen=True)
class McParams:
    """Knobs of the multilevel scheme: ``varpi`` correction sweeps per level,
    multigrid parameters for the inner solves, extra fine-level sweep budget,
    and the relative eigenvalue-change stopping tolerance."""

    varpi: int = 1
    mg: MgParams = dataclass_field(default_factory=MgParams)
    fine_level_extra: int = 300
    tol: float = 1e-12
    exact_inner: bool = False

    def __post_init__(self):
        if self.varpi < 1:
            raise InvalidArgumentError("varpi must be >= 1")
        if self.tol <= 0:
            raise InvalidArgumentError("tol must be positive")


@dataclass
class EigenSet:
    """Approximate eigenpairs, energy-normalized (v^T K v = 1), ascending.

    ``m_norms`` holds sqrt(v^T M v) per pair so the mass-normalized copies
    are available without another pass over the matrices.
    """

    lambdas: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    m_norms: np.ndarray

    @property
    def nev(self):
        return len(self.lambdas)

    def m_normalized(self):
        return self.vectors / self.m_norms

    @classmethod
    def from_vectors(cls, K, M, lambdas, vectors):
        lambdas = np.asarray(lambdas, dtype=np.float64)
        V = np.array(vectors, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        K_sp = K.to_scipy()
        M_sp = M.to_scipy()
        KV = K_sp @ V
        energies = np.einsum("ij,ij->j", V, KV)
        if np.any(energies <= 0):
            raise InvalidArgumentError("vectors must have positive energy")
        scale = 1.0 / np.sqrt(energies)
        V = V * scale
        KV = KV * scale
        MV = M_sp @ V
        res = np.array([
            np.linalg.norm(KV[:, j] - lambdas[j] * MV[:, j])
            / np.linalg.norm(KV[:, j]) for j in range(V.shape[1])])
        m_norms = np.sqrt(np.einsum("ij,ij->j", V, MV))
        return cls(lambdas=lambdas, vectors=V, residuals=res, m_norms=m_norms)


@dataclass
class ConvergenceRecord:
    """Flat per-sweep, per-pair history.

    Rows are (sweep, level, pair, lambda, rel_change, residual) plus an
    optional phase tag used by hybrid runs.
    """

    rows: list = dataclass_field(default_factory=list)
    has_phase: bool = False

    def add(self, sweep, level, pair, lam, rel_change, residual, phase=None):
        if phase is not None:
            self.has_phase = True
        self.rows.append((int(sweep), int(level), int(pair), float(lam),
                          float(rel_change), float(residual), phase))

    def extend(self, other):
        self.rows.extend(other.rows)
        self.has_phase = self.has_phase or other.has_phase

    def last_sweep(self):
        return self.rows[-1][0] if self.rows else 0

    def sweep_values(self, sweep):
        return {r[2]: r[3] for r in self.rows if r[0] == sweep}

    def to_csv(self, path_or_buf):
        header = "sweep,level,pair,lambda,rel_change,residual"
        if self.has_phase:
            header += ",phase"
        lines = [header]
        for sweep, level, pair, lam, rel, res, phase in self.rows:
            line = f"{sweep},{level},{pair},{lam!r},{rel!r},{res!r}"
            if self.has_phase:
                line += f",{phase if phase is not None else ''}"
            lines.append(line)
        text = "\n".join(lines) + "\n"
        if isinstance(path_or_buf, io.IOBase):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def m_orthonormalize(V, M_sp, drop_tol=_BASIS_DROP_TOL):
    """Gram-Schmidt in the M inner product with reorthogonalization.

    Columns whose norm collapses below ``drop_tol`` times their original
    norm are dropped.  Returns the orthonormal block.
    """
    kept = []
    kept_m = []
    for j in range(V.shape[1]):
        v = V[:, j].astype(np.float64).copy()
        norm0 = np.sqrt(max(v @ (M_sp @ v), 0.0))
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for u_m, u in zip(kept_m, kept):
                v -= (u_m @ v) * u
        nrm = np.sqrt(max(v @ (M_sp @ v), 0.0))
        if nrm <= drop_tol * norm0:
            continue
        v /= nrm
        kept.append(v)
        kept_m.append(M_sp @ v)
    if not kept:
        raise DegenerateBasisError("all trial directions collapsed")
    return np.column_stack(kept)


def _subspace_eig(A_k, M_sp, basis):
    """Rayleigh-Ritz on the span of ``basis``: M-orthonormalize, project the
    stiffness, diagonalize.  Returns (ritz values, ritz vectors)."""
    Z = m_orthonormalize(basis, M_sp)
    AZ = A_k.to_scipy() @ Z
    G = Z.T @ AZ
    G = 0.5 * (G + G.T)
    lams, C = jacobi_eigh(G)
    return lams, Z @ C


def _energy_normalize(A_k, X):
    AX = A_k.to_scipy() @ X
    e = np.einsum("ij,ij->j", X, AX)
    return X / np.sqrt(e)


def _align_signs(Y_old, M_sp, X):
    overlap = np.einsum("ij,ij->j", Y_old, M_sp @ X)
    X[:, overlap < 0] *= -1.0
    return X


def _match_clusters(lams, X, Y_old, M_sp):
    """Reorder Ritz pairs inside near-degenerate clusters by maximal overlap
    with the incoming block."""
    nev = len(lams)
    order = list(range(nev))
    i = 0
    while i < nev:
        j = i + 1
        while j < nev and abs(lams[j] - lams[j - 1]) < _CLUSTER_RTOL * abs(lams[j]):
            j += 1
        if j - i > 1:
            ov = np.abs(Y_old[:, i:j].T @ (M_sp @ X[:, i:j]))
            cluster = list(range(i, j))
            taken = []
            for old_local in range(j - i):
                best = max((c for c in cluster if c not in taken),
                           key=lambda c: ov[old_local, c - i])
                taken.append(best)
            order[i:j] = taken
        i = j
    return lams[order], X[:, order]


def _solve_level(k, rhs, guess, dec, params):
    if params.exact_inner:
        key = ("exact_solver", k)
        if key not in dec._cache:
            dec._cache[key] = make_direct_solver(dec.A[k])
        return dec._cache[key](rhs)
    return mg(k, guess, rhs, dec, params.mg)


def correct_block(k, lams, Y, dec, mass, params):
    """One joint correction sweep for a block of pairs at level k.

    Each pair gets a multigrid-approximated solve of the shifted linear
    system; a single Rayleigh-Ritz on the coarsest basis plus all corrected
    vectors then re-extracts the lowest pairs.
    """
    A_k = dec.A[k]
    M_sp = mass[k].to_scipy()
    nev = len(lams)
    v_hat = np.empty_like(Y)
    for j in range(nev):
        rhs = lams[j] * (M_sp @ Y[:, j])
        v_hat[:, j] = _solve_level(k, rhs, Y[:, j], dec, params)
    basis = np.column_stack([dec.coarse_basis(k), v_hat])
    ritz, X = _subspace_eig(A_k, M_sp, basis)
    new_lams = ritz[:nev].copy()
    X = X[:, :nev]
    new_lams, X = _match_clusters(new_lams, X, Y, M_sp)
    X = _align_signs(Y, M_sp, _energy_normalize(A_k, X))
    AX = A_k.to_scipy() @ X
    MX = M_sp @ X
    res = np.array([
        np.linalg.norm(AX[:, j] - new_lams[j] * MX[:, j])
        / np.linalg.norm(AX[:, j]) for j in range(nev)])
    return new_lams, X, res


def one_correction(k, lam, y, dec, mass, params, return_details=False):
    """Single-pair correction step at level k.

    The corrected Ritz pair is the one whose reciprocal value is closest to
    the incoming 1/lambda.
    """
    A_k = dec.A[k]
    M_sp = mass[k].to_scipy()
    y = np.asarray(y, dtype=np.float64)
    rhs = lam * (M_sp @ y)
    v_hat = _solve_level(k, rhs, y, dec, params)
    basis = np.column_stack([dec.coarse_basis(k), v_hat])
    ritz, X = _subspace_eig(A_k, M_sp, basis)
    pick = int(np.argmin(np.abs(1.0 / ritz - 1.0 / lam)))
    x = X[:, [pick]]
    x = _energy_normalize(A_k, x)
    x = _align_signs(y[:, None], M_sp, x)[:, 0]
    if return_details:
        return ritz[pick], x, v_hat
    return ritz[pick], x


def coarse_eigensolve(dec, M, nev):
    """All-pairs dense solve of the coarsest-level restriction, prolonged to
    fine coefficients."""
    mass = dec.mass_levels(M)
    n1 = dec.level_dim(1)
    if not 1 <= nev <= n1:
        raise InvalidArgumentError(
            f"nev={nev} exceeds the coarsest space dimension {n1}")
    res = dense_sym_geig(dec.A[1].to_dense(), mass[1].to_dense())
    lams = res.lambdas[:nev].copy()
    Y = res.vectors_energy[:, :nev].copy()
    V = dec.prolong(1, Y)
    return EigenSet.from_vectors(dec.A[dec.q], M, lams, V)


def multilevel_correction(dec, M, nev, params=None):
    """Full bottom-up scheme: coarsest eigensolve, per-level correction
    sweeps, then fine-level sweeps until the largest relative eigenvalue
    change drops below ``params.tol``.

    Returns (EigenSet, ConvergenceRecord).  On fine-level non-convergence
    raises NonConvergenceError carrying both.
    """
    if params is None:
        params = McParams()
    mass = dec.mass_levels(M)
    n1 = dec.level_dim(1)
    if not 1 <= nev <= n1:
        raise InvalidArgumentError(
            f"nev={nev} exceeds the coarsest space dimension {n1}")
    record = ConvergenceRecord()
    res = dense_sym_geig(dec.A[1].to_dense(), mass[1].to_dense())
    lams = res.lambdas[:nev].copy()
    Y = res.vectors_energy[:, :nev].copy()
    sweep = 0
    for j in range(nev):
        record.add(sweep, 1, j, lams[j], np.nan, np.nan)

    def run_sweep(k):
        nonlocal lams, Y, sweep
        old = lams.copy()
        lams, Y, res_k = correct_block(k, lams, Y, dec, mass, params)
        sweep += 1
        rel = np.abs(lams - old) / np.abs(lams)
        for j in range(nev):
            record.add(sweep, k, j, lams[j], rel[j], res_k[j])
        return rel.max()

    max_rel = np.inf
    for k in range(2, dec.q + 1):
        Y = dec.R[k].to_scipy().T @ Y
        for _ in range(params.varpi):
            max_rel = run_sweep(k)
    extra = 0
    while max_rel > params.tol and extra < params.fine_level_extra:
        max_rel = run_sweep(dec.q)
        extra += 1
    eigset = EigenSet.from_vectors(dec.A[dec.q], M, lams, Y)
    if max_rel > params.tol:
        raise NonConvergenceError(
            f"fine-level sweeps stalled at relative change {max_rel:.3e} "
            f"after {extra} extra sweeps", history=record, result=eigset)
    return eigset, record


def rayleigh_quotient_expansion_check(K, M, pair, w):
    """Discrepancy of the quotient expansion identity at (lambda, v) for a
    trial vector w: both sides of

        <w,w>/[w,w] - lambda = <w-v,w-v>/[w,w] - lambda [w-v,w-v]/[w,w]

    evaluated with the stiffness and mass forms; zero (to roundoff) when
    (lambda, v) is an exact eigenpair.
    """
    lam, v = pair
    w = np.asarray(w, dtype=np.float64)
    if np.linalg.norm(w) == 0.0:
        raise InvalidArgumentError("trial vector must be nonzero")
    Kw = spmv(K, w)
    Mw = spmv(M, w)
    ww_k = w @ Kw
    ww_m = w @ Mw
    d = w - np.asarray(v, dtype=np.float64)
    lhs = ww_k / ww_m - lam
    rhs = (d @ spmv(K, d)) / ww_m - lam * (d @ spmv(M, d)) / ww_m
    return abs(lhs - rhs)
