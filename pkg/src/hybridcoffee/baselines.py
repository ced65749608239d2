"""Matrix and heuristic reference recommenders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg as spla

from .container import read_container, write_container
from .errors import IoError, RankTooLarge
from .linalg import CholeskyFactor, truncated_svd
from .model import rank_items
from .similarity import SimilarityMatrix, identity


@dataclass(frozen=True, eq=False)
class MatrixModel:
    """Item factors of a (hybrid) truncated SVD.

    ``V_hat`` is orthonormal in the auxiliary space; ``V = inv(L_S^T) V_hat``
    and ``V_S = L_S V_hat`` so that folding-in is ``V @ V_S.T @ p``.
    """

    V_hat: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    V_S: np.ndarray
    kind: str
    item_sim: SimilarityMatrix

    @property
    def rank(self) -> int:
        return self.V_hat.shape[1]

    def truncate(self, r: int) -> "MatrixModel":
        if not 1 <= r <= self.rank:
            raise RankTooLarge(f"cannot truncate rank {self.rank} model to {r}")
        return MatrixModel(self.V_hat[:, :r], self.sigma[:r], self.V[:, :r], self.V_S[:, :r],
                           self.kind, self.item_sim)

    def fold_in(self, p) -> np.ndarray:
        """Predicted item scores for a user row ``p`` (dense vector or sparse row)."""
        if scipy.sparse.issparse(p):
            p = p.toarray().ravel()
        p = np.asarray(p, dtype=np.float64)
        return self.V @ (self.V_S.T @ p)

    def fold_in_sparse(self, items, values) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        return self.V @ (self.V_S[items].T @ values)


def _svd_factors(X, r):
    svd = truncated_svd(X, r)
    return svd.V, svd.sigma


def train_pure_svd(A2, r: int) -> MatrixModel:
    """Truncated SVD of the user-item matrix."""
    V_hat, sigma = _svd_factors(A2, r)
    return MatrixModel(V_hat, sigma, V_hat, V_hat, "pure_svd", identity(V_hat.shape[0]))


def _weighted_operator(A2, K: SimilarityMatrix, S: SimilarityMatrix):
    A2 = A2 if scipy.sparse.issparse(A2) else np.asarray(A2, dtype=np.float64)
    At = A2.T

    def matmat(X):
        return K.mul_LT(A2 @ S.mul_L(X))

    def rmatmat(Y):
        return S.mul_LT(At @ K.mul_L(Y))

    return spla.LinearOperator(
        A2.shape, dtype=np.float64,
        matvec=lambda x: matmat(x.reshape(-1, 1)).ravel(),
        rmatvec=lambda y: rmatmat(y.reshape(-1, 1)).ravel(),
        matmat=matmat, rmatmat=rmatmat,
    )


def train_hybrid_svd(A2, K: SimilarityMatrix, S: SimilarityMatrix, r: int) -> MatrixModel:
    """Truncated SVD of ``L_K^T A L_S``, applied as an operator.

    With identity similarities this is exactly :func:`train_pure_svd`.
    """
    if K.is_identity and S.is_identity:
        model = train_pure_svd(A2, r)
        return MatrixModel(model.V_hat, model.sigma, model.V, model.V_S, "hybrid_svd", S)
    V_hat, sigma = _svd_factors(_weighted_operator(A2, K, S), r)
    return MatrixModel(V_hat, sigma, S.solve_LT(V_hat), S.mul_L(V_hat), "hybrid_svd", S)


def save_matrix_model(model: MatrixModel, path, meta: dict | None = None) -> None:
    arrays = {"V_hat": model.V_hat, "sigma": model.sigma, "V": model.V, "V_S": model.V_S}
    sim = model.item_sim
    if not sim.is_identity:
        arrays["L_S"] = sim.L
    header = {"model_kind": model.kind, "weight": sim.weight, "jitter": sim.applied_jitter,
              "identity": sim.is_identity, "extra": meta or {}}
    write_container(path, "matrix", arrays, header)


def load_matrix_model(path):
    kind, arrays, meta = read_container(path)
    if kind != "matrix":
        raise IoError(f"{path}: expected a matrix container, found {kind!r}")
    dim = arrays["V"].shape[0]
    chol = None if meta["identity"] else CholeskyFactor(arrays["L_S"], meta["jitter"])
    sim = SimilarityMatrix(dim, meta["weight"], None, chol)
    model = MatrixModel(arrays["V_hat"], arrays["sigma"], arrays["V"], arrays["V_S"],
                        meta["model_kind"], sim)
    return model, meta.get("extra", {})


@dataclass(frozen=True)
class PopularityModel:
    counts: np.ndarray

    def recommend(self, n=None, exclude=()):
        return rank_items(self.counts, exclude, n)


def most_popular(item_indices, n_items: int) -> PopularityModel:
    """Count interactions per item."""
    items = np.asarray(item_indices, dtype=np.int64)
    return PopularityModel(np.bincount(items, minlength=n_items).astype(np.float64))


def content_based_scores(S0, history) -> np.ndarray:
    """Summed similarity of every item to the user's known items (unweighted)."""
    S0 = np.asarray(S0, dtype=np.float64)
    history = np.asarray(list(history), dtype=np.int64)
    if history.size == 0:
        return np.zeros(S0.shape[0])
    return S0[:, history].sum(axis=1)
