"""Dense kernels: truncated SVD, SPD Cholesky and triangular solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg as spla

from .errors import (
    ConvergenceFailure,
    NotPositiveDefinite,
    NotSymmetric,
    RankTooLarge,
    ShapeMismatch,
    SingularFactor,
)

# above this smaller dimension the SVD switches to ARPACK
DENSE_SVD_LIMIT = 2000
ARPACK_MAXITER = 10_000


@dataclass(frozen=True)
class SvdTriplet:
    """Leading singular triplets ``X ~= U @ diag(sigma) @ V.T``.

    ``V`` holds right singular vectors as columns (not transposed).
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``L @ L.T == S + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.L.shape[0]


def _fix_signs(U, V):
    # largest-magnitude entry of every left vector made nonnegative;
    # argmax returns the lowest index on ties
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def truncated_svd(X, r: int) -> SvdTriplet:
    """Top-``r`` singular triplets of ``X`` with a deterministic sign rule.

    ``X`` may be a dense array, a scipy sparse matrix or a
    ``LinearOperator``. Problems whose smaller side is at most
    ``DENSE_SVD_LIMIT`` go through LAPACK; larger ones through ARPACK.
    """
    rows, cols = X.shape
    r = int(r)
    if r < 1 or r > min(rows, cols):
        raise RankTooLarge(f"rank {r} not in [1, {min(rows, cols)}] for {rows}x{cols} input")

    iterative = min(rows, cols) > DENSE_SVD_LIMIT and r < min(rows, cols) - 1
    if not iterative:
        if isinstance(X, spla.LinearOperator):
            dense = X.matmat(np.eye(cols)) if cols <= rows else X.rmatmat(np.eye(rows)).T
        elif scipy.sparse.issparse(X):
            dense = X.toarray()
        else:
            dense = np.asarray(X, dtype=np.float64)
        u, s, vt = np.linalg.svd(dense, full_matrices=False)
        U, sigma, V = u[:, :r], s[:r], vt[:r].T
    else:
        v0 = np.full(min(rows, cols), 1.0 / np.sqrt(min(rows, cols)))
        try:
            u, s, vt = spla.svds(X, k=r, v0=v0, maxiter=ARPACK_MAXITER, solver="arpack")
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure(str(exc)) from exc
        order = np.argsort(-s, kind="stable")
        U, sigma, V = u[:, order], np.maximum(s[order], 0.0), vt[order].T

    U, V = _fix_signs(np.ascontiguousarray(U), np.ascontiguousarray(V))
    return SvdTriplet(U, np.ascontiguousarray(sigma), V)


def cholesky_spd(S, jitter_policy: str = "fail") -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite matrix.

    With ``jitter_policy="auto_jitter"`` a failed factorization is retried
    on ``S + eps * I`` starting from ``eps = 1e-10`` and growing tenfold,
    up to ``1e-4 * trace(S) / n``.
    """
    if jitter_policy not in ("fail", "auto_jitter"):
        raise ValueError(f"unknown jitter policy {jitter_policy!r}")
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    if n and np.max(np.abs(S - S.T)) > 1e-10:
        raise NotSymmetric("matrix is not symmetric within 1e-10")

    try:
        return CholeskyFactor(scipy.linalg.cholesky(S, lower=True), 0.0)
    except np.linalg.LinAlgError:
        if jitter_policy == "fail":
            raise NotPositiveDefinite("matrix is not positive definite") from None

    cap = 1e-4 * np.trace(S) / n
    eps = 1e-10
    eye = np.eye(n)
    while eps <= cap:
        try:
            return CholeskyFactor(scipy.linalg.cholesky(S + eps * eye, lower=True), eps)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NotPositiveDefinite(f"not positive definite even with jitter up to {cap:.3g}")


def solve_lower_transposed(L, B) -> np.ndarray:
    """Solve ``L.T @ X = B`` for lower-triangular ``L``."""
    if isinstance(L, CholeskyFactor):
        L = L.L
    L = np.asarray(L, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or B.shape[0] != L.shape[0]:
        raise ShapeMismatch(f"cannot solve with L {L.shape} and B {B.shape}")
    if np.any(np.diag(L) == 0):
        raise SingularFactor("triangular factor has a zero on the diagonal")
    return scipy.linalg.solve_triangular(L, B, trans="T", lower=True)
