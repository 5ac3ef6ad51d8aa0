"""
Sparse storage helpers and the factorization kernels used by the models.

Sparse matrices are ``scipy.sparse.csr_matrix`` instances in canonical form
(sorted, duplicate-free column indices); dense matrices are C-contiguous
float64 ``numpy`` arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from psirec.exceptions import NumericalError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances and size limits shared by the library and its tests."""

    orthonormality: float = 1e-10
    qr_residual: float = 1e-10
    svd_orthonormality: float = 1e-10
    svd_values_rel: float = 1e-8
    eckart_young_rel: float = 1e-6
    model_orthonormality: float = 1e-8
    zero_delta: float = 1e-10
    subspace_exact: float = 1e-8
    psi_oracle_rel: float = 1e-8
    spmm: float = 1e-12
    metric_reduction: float = 1e-12
    # randomized SVD settings
    oversampling: int = 10
    power_iterations: int = 2
    dense_svd_max_dim: int = 64
    # reconstruct() refuses anything larger than this many entries
    reconstruct_max_entries: int = 4_000_000


TOL = Tolerances()


def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix (copying only when needed)."""
    if hasattr(A, "matrix") and sp.issparse(A.matrix):
        A = A.matrix
    if not sp.issparse(A):
        A = sp.csr_matrix(np.asarray(A, dtype=np.float64))
    A = sp.csr_matrix(A, dtype=np.float64)
    if not A.has_canonical_format:
        A = A.copy()
        A.sum_duplicates()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    """Raise ``ValueError`` if ``A`` violates the CSR layout invariants."""
    n_rows, n_cols = A.shape
    offsets = A.indptr
    if len(offsets) != n_rows + 1 or offsets[0] != 0:
        raise ValueError("row_offsets must have length n_rows+1 and start at 0")
    if np.any(np.diff(offsets) < 0):
        raise ValueError("row_offsets must be non-decreasing")
    if len(A.data) != offsets[-1] or len(A.indices) != offsets[-1]:
        raise ValueError("values/col_indices length must equal row_offsets[n_rows]")
    if len(A.indices) and (A.indices.min() < 0 or A.indices.max() >= n_cols):
        raise ValueError("column index out of range")
    for i in range(n_rows):
        cols = A.indices[offsets[i]:offsets[i + 1]]
        if len(cols) > 1 and np.any(np.diff(cols) <= 0):
            raise ValueError(f"column indices of row {i} are not strictly increasing")


def _as_dense(B) -> np.ndarray:
    B = np.ascontiguousarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise ShapeError(f"expected a 2-d dense matrix, got shape {B.shape}")
    return B


def spmm(A, B) -> np.ndarray:
    """Sparse-dense product ``A @ B``."""
    A = as_csr(A)
    B = _as_dense(B)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"spmm: cannot multiply {A.shape} by {B.shape}")
    return np.ascontiguousarray(A @ B)


def spmm_transposed(A, B) -> np.ndarray:
    """``A.T @ B`` without building the transpose (CSR.T is a CSC view)."""
    A = as_csr(A)
    B = _as_dense(B)
    if A.shape[0] != B.shape[0]:
        raise ShapeError(f"spmm_transposed: cannot multiply {A.shape[::-1]} (transposed {A.shape}) by {B.shape}")
    return np.ascontiguousarray(A.T @ B)


def qr_thin(X) -> tuple[np.ndarray, np.ndarray]:
    """
    Economic QR factorization with a non-negative diagonal in ``R``.

    Rank-deficient input is allowed; the corresponding diagonal entries of
    ``R`` are (numerically) zero.
    """
    X = _as_dense(X)
    m, k = X.shape
    if m < k:
        raise ShapeError(f"qr_thin needs n_rows >= n_cols, got {X.shape}")
    Q, R = np.linalg.qr(X, mode="reduced")
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q = np.ascontiguousarray(Q * signs)
    R = np.ascontiguousarray(R * signs[:, None])
    return Q, R


def svd_thin(X) -> tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal-times-remainder split of ``X`` via SVD: ``X = Q @ R`` with
    ``Q = P`` and ``R = diag(s) @ Wt``.  Alternative to :func:`qr_thin`.
    """
    X = _as_dense(X)
    if X.shape[0] < X.shape[1]:
        raise ShapeError(f"svd_thin needs n_rows >= n_cols, got {X.shape}")
    P, s, Wt = np.linalg.svd(X, full_matrices=False)
    P, Wt = _fix_svd_signs(P, Wt.T)
    return np.ascontiguousarray(P), np.ascontiguousarray(s[:, None] * Wt.T)


def _fix_svd_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each V column is made positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def truncated_svd(A, r: int, seed: int = 0, tol: Tolerances = TOL):
    """
    Rank-``r`` truncated SVD of a sparse matrix.

    Matrices whose smaller side is at most ``tol.dense_svd_max_dim`` are
    factorized densely; larger ones use a seeded randomized range finder with
    ``tol.oversampling`` extra columns and ``tol.power_iterations`` power
    iterations.

    Returns
    -------
    U : (M, r) ndarray
    s : (r,) ndarray, non-increasing
    V : (N, r) ndarray
    """
    A = as_csr(A)
    M, N = A.shape
    if not 1 <= r <= min(M, N):
        raise ValueError(f"rank r={r} out of range [1, {min(M, N)}] for a {M}x{N} matrix")
    if A.nnz == 0:
        raise ValueError("empty interaction matrix")

    if min(M, N) <= tol.dense_svd_max_dim:
        U, s, Vt = np.linalg.svd(A.toarray(), full_matrices=False)
        U, s, V = U[:, :r], s[:r], Vt[:r].T
    else:
        U, s, V = _randomized_svd(A, r, seed, tol.oversampling, tol.power_iterations)

    U, V = _fix_svd_signs(U, V)
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(s)) and np.all(np.isfinite(V))):
        raise NumericalError("truncated_svd produced non-finite factors")
    return np.ascontiguousarray(U), np.ascontiguousarray(s), np.ascontiguousarray(V)


def _randomized_svd(A: sp.csr_matrix, r: int, seed: int, oversampling: int, n_iter: int):
    M, N = A.shape
    width = min(r + oversampling, M, N)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((N, width))
    Q, _ = np.linalg.qr(A @ omega)
    for _ in range(n_iter):
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
    B = np.asarray(A.T @ Q).T  # Q^T A, shape (width, N)
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    return Q @ Ub[:, :r], s[:r], Vt[:r].T
