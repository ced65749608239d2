"""Hybrid Tucker preference model trained by Kronecker-free HOOI.

The model approximates the auxiliary tensor
``A x1 L_K^T x2 L_S^T x3 L_R^T`` by ``G x1 U_hat x2 V_hat x3 W_hat``
without ever forming it: every HOOI step contracts the sparse data tensor
with the weighted factors ``U_K = L_K U_hat`` etc. and applies a single
triangular multiply to the small result.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse

from .container import read_container, write_container
from .errors import EmptyHistory, IndexOutOfRange, IoError, RankTooLarge, ShapeMismatch
from .linalg import CholeskyFactor, truncated_svd
from .similarity import SimilarityMatrix, identity
from .tensor import SparseTensor3, frobenius_norm, n_mode_product, unfold, unfold_contract

log = logging.getLogger(__name__)

AGGREGATORS = ("positive_mass", "expected_value", "top_column")


@dataclass(frozen=True)
class TrainConfig:
    ranks: tuple = (10, 10, 3)
    tol: float = 1e-5
    max_iters: int = 25
    seed: int = 0
    threads: int = 1
    chunk_size: int = 1 << 16

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if len(self.ranks) != 3:
            raise ValueError("ranks must be a triple")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def fingerprint(self, extra=None) -> str:
        payload = json.dumps({"cfg": asdict(self), "extra": extra}, sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def check_ranks(shape, ranks) -> None:
    """Raise RankTooLarge unless ``ranks`` is a valid multilinear rank for ``shape``."""
    r1, r2, r3 = ranks
    for r, n, name in zip(ranks, shape, ("r1", "r2", "r3")):
        if not 1 <= r <= n:
            raise RankTooLarge(f"{name}={r} not in [1, {n}]")
    # each mode's unfolding of the core must have at least r_k columns
    if r1 > r2 * r3 or r2 > r1 * r3 or r3 > r1 * r2:
        raise RankTooLarge(f"ranks {ranks} violate r_k <= product of the other two")


def initial_factors(shape, ranks, seed: int):
    """Seeded random orthonormal starting factors for the item and feedback modes."""
    rng = np.random.default_rng(seed)
    V_hat = np.linalg.qr(rng.standard_normal((shape[1], ranks[1])))[0]
    W_hat = np.linalg.qr(rng.standard_normal((shape[2], ranks[2])))[0]
    return V_hat, W_hat


@dataclass(frozen=True, eq=False)
class HybridTuckerModel:
    """Core plus factors in the auxiliary, weighted and original spaces."""

    core: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray
    W_hat: np.ndarray
    U_K: np.ndarray
    V_S: np.ndarray
    W_R: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    sims: tuple
    trace: tuple = ()
    config_fingerprint: str = ""
    converged: bool = False

    @property
    def ranks(self):
        return self.core.shape

    @property
    def shape(self):
        return (self.U_hat.shape[0], self.V_hat.shape[0], self.W_hat.shape[0])

    @property
    def n_iters(self) -> int:
        return len(self.trace)


def _finalize(core, U_hat, V_hat, W_hat, sims, **kw) -> HybridTuckerModel:
    K, S, R = sims
    return HybridTuckerModel(
        core=core, U_hat=U_hat, V_hat=V_hat, W_hat=W_hat,
        U_K=K.mul_L(U_hat), V_S=S.mul_L(V_hat), W_R=R.mul_L(W_hat),
        U=K.solve_LT(U_hat), V=S.solve_LT(V_hat), W=R.solve_LT(W_hat),
        sims=tuple(sims), **kw,
    )


def identity_sims(shape):
    return tuple(identity(n) for n in shape)


def train(A: SparseTensor3, sims=None, cfg: TrainConfig = TrainConfig(), init=None) -> HybridTuckerModel:
    """Fit the hybrid Tucker model by alternating truncated SVDs.

    ``sims`` is the (user, item, feedback) triple of similarity matrices;
    ``None`` means identities everywhere, i.e. the plain Tucker model.
    ``init`` optionally overrides the seeded ``(V_hat, W_hat)`` start.
    Iteration stops once the core norm changes by less than
    ``cfg.tol * ||A||`` between sweeps, or after ``cfg.max_iters`` sweeps.
    """
    if sims is None:
        sims = identity_sims(A.shape)
    K, S, R = sims
    if (K.dim, S.dim, R.dim) != tuple(A.shape):
        raise ShapeMismatch(f"similarity dims {(K.dim, S.dim, R.dim)} do not match tensor {A.shape}")
    check_ranks(A.shape, cfg.ranks)
    r1, r2, r3 = cfg.ranks

    if init is None:
        V_hat, W_hat = initial_factors(A.shape, cfg.ranks, cfg.seed)
    else:
        V_hat, W_hat = (np.asarray(x, dtype=np.float64) for x in init)
        if V_hat.shape != (A.shape[1], r2) or W_hat.shape != (A.shape[2], r3):
            raise ShapeMismatch("initial factors do not conform to shape and ranks")
    V_S, W_R = S.mul_L(V_hat), R.mul_L(W_hat)
    contract = dict(chunk_size=cfg.chunk_size, threads=cfg.threads)

    norm_a = frobenius_norm(A)
    trace = []
    previous = 0.0
    converged = False
    for sweep in range(cfg.max_iters):
        U_hat = truncated_svd(K.mul_LT(unfold_contract(A, 1, V_S, W_R, **contract)), r1).U
        U_K = K.mul_L(U_hat)
        V_hat = truncated_svd(S.mul_LT(unfold_contract(A, 2, U_K, W_R, **contract)), r2).U
        V_S = S.mul_L(V_hat)
        mode3 = truncated_svd(R.mul_LT(unfold_contract(A, 3, U_K, V_S, **contract)), r3)
        W_hat = mode3.U
        W_R = R.mul_L(W_hat)
        # mode-3 unfolding of the core; column c2 * r1 + c1
        G3 = mode3.sigma[:, None] * mode3.V.T
        core = np.ascontiguousarray(G3.reshape(r3, r2, r1).transpose(2, 1, 0))

        norm = float(np.sqrt(np.sum(mode3.sigma**2)))
        trace.append(norm)
        log.debug("sweep %d: core norm %.12g", sweep + 1, norm)
        if abs(norm - previous) < cfg.tol * norm_a or norm_a == 0:
            converged = True
            break
        previous = norm

    extra = {"shape": list(A.shape), "nnz": A.nnz,
             "weights": [K.weight, S.weight, R.weight]}
    return _finalize(core, U_hat, V_hat, W_hat, sims, trace=tuple(trace),
                     config_fingerprint=cfg.fingerprint(extra), converged=converged)


def round_rank(model: HybridTuckerModel, new_ranks) -> HybridTuckerModel:
    """Reduce the multilinear rank by truncating SVDs of the core unfoldings.

    Modes are processed in order 1, 2, 3; a mode whose rank is unchanged
    is left untouched.
    """
    new_ranks = tuple(int(r) for r in new_ranks)
    if any(n > c for n, c in zip(new_ranks, model.ranks)):
        raise RankTooLarge(f"cannot round ranks {model.ranks} up to {new_ranks}")
    check_ranks(model.shape, new_ranks)
    core = model.core
    factors = [model.U_hat, model.V_hat, model.W_hat]
    for mode in (1, 2, 3):
        target = new_ranks[mode - 1]
        if target == core.shape[mode - 1]:
            continue
        lead = truncated_svd(unfold(core, mode), target).U
        factors[mode - 1] = factors[mode - 1] @ lead
        core = n_mode_product(core, mode, lead.T)
    if core is model.core:
        return model
    fp = hashlib.sha256(f"{model.config_fingerprint}:{new_ranks}".encode()).hexdigest()[:16]
    return _finalize(np.ascontiguousarray(core), *factors, model.sims, trace=model.trace,
                     config_fingerprint=fp, converged=model.converged)


@dataclass(frozen=True)
class PreferenceMatrix:
    """Sparse item-by-feedback matrix of one user's known interactions."""

    items: np.ndarray
    feedback: np.ndarray
    values: np.ndarray
    shape: tuple

    @classmethod
    def from_history(cls, items, feedback, shape, values=None):
        items = np.asarray(items, dtype=np.int64).ravel()
        feedback = np.asarray(feedback, dtype=np.int64).ravel()
        values = np.ones(items.shape) if values is None else np.asarray(values, dtype=np.float64).ravel()
        if not (items.shape == feedback.shape == values.shape):
            raise ShapeMismatch("history arrays differ in length")
        n, f = shape
        if items.size and (items.min() < 0 or items.max() >= n or feedback.min() < 0 or feedback.max() >= f):
            raise IndexOutOfRange("history index outside the preference matrix")
        return cls(items, feedback, values, (int(n), int(f)))

    @classmethod
    def from_dense(cls, P):
        P = np.asarray(P, dtype=np.float64)
        items, feedback = np.nonzero(P)
        return cls(items, feedback, P[items, feedback], P.shape)

    def __len__(self):
        return int(self.items.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.items, self.feedback), self.values)
        return out


def _as_preferences(P, shape) -> PreferenceMatrix:
    if isinstance(P, PreferenceMatrix):
        if P.shape != tuple(shape):
            raise ShapeMismatch(f"preference matrix {P.shape} does not match {tuple(shape)}")
        return P
    if scipy.sparse.issparse(P):
        P = P.toarray()
    P = np.asarray(P, dtype=np.float64)
    if P.shape != tuple(shape):
        raise ShapeMismatch(f"preference matrix {P.shape} does not match {tuple(shape)}")
    return PreferenceMatrix.from_dense(P)


def _fold(left, left_weighted, right, right_weighted, P: PreferenceMatrix):
    coeff = (left_weighted[P.items].T * P.values) @ right_weighted[P.feedback]
    return left @ coeff @ right.T


def fold_in_user(model: HybridTuckerModel, P) -> np.ndarray:
    """Predicted item-by-feedback preferences ``V V_S^T P W_R W^T`` of a new user."""
    P = _as_preferences(P, (model.shape[1], model.shape[2]))
    if len(P) == 0:
        raise EmptyHistory("cannot fold in a user without known preferences")
    return _fold(model.V, model.V_S, model.W, model.W_R, P)


def fold_in_item(model: HybridTuckerModel, Q) -> np.ndarray:
    """User-by-feedback analogue of :func:`fold_in_user` for a new item."""
    Q = _as_preferences(Q, (model.shape[0], model.shape[2]))
    if len(Q) == 0:
        raise EmptyHistory("cannot fold in an item without known interactions")
    return _fold(model.U, model.U_K, model.W, model.W_R, Q)


def aggregate_scores(P_bar, aggregator: str = "positive_mass", positive_threshold_index=None,
                     ratings=None) -> np.ndarray:
    """Collapse an item-by-feedback prediction to one score per item."""
    P_bar = np.asarray(P_bar)
    if aggregator == "positive_mass":
        start = P_bar.shape[1] - 1 if positive_threshold_index is None else int(positive_threshold_index)
        return P_bar[:, start:].sum(axis=1)
    if aggregator == "expected_value":
        if ratings is None:
            ratings = np.arange(1, P_bar.shape[1] + 1, dtype=np.float64)
        return P_bar @ np.asarray(ratings, dtype=np.float64)
    if aggregator == "top_column":
        return P_bar[:, -1].copy()
    raise ValueError(f"unknown aggregator {aggregator!r}")


def rank_items(scores, exclude=(), n=None) -> np.ndarray:
    """Item indices by descending score, lower index first on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    exclude = np.asarray(list(exclude), dtype=np.int64)
    if exclude.size:
        order = order[~np.isin(order, exclude)]
    return order if n is None else order[:n]


def score_items(P_bar, aggregator: str = "positive_mass", positive_threshold_index=None,
                exclude=(), n: int = 10, ratings=None):
    """Top-``n`` ``(item, score)`` pairs from a folded-in prediction."""
    if n < 1:
        raise ValueError("n must be at least 1")
    scores = aggregate_scores(P_bar, aggregator, positive_threshold_index, ratings)
    top = rank_items(scores, exclude, n)
    return [(int(i), float(scores[i])) for i in top]


_FACTORS = ("core", "U_hat", "V_hat", "W_hat", "U_K", "V_S", "W_R", "U", "V", "W")


def save_model(model: HybridTuckerModel, path, meta: dict | None = None) -> None:
    arrays = {name: getattr(model, name) for name in _FACTORS}
    arrays["trace"] = np.asarray(model.trace, dtype=np.float64)
    sims_meta = []
    for name, sim in zip("KSR", model.sims):
        sims_meta.append({"dim": sim.dim, "weight": sim.weight, "jitter": sim.applied_jitter,
                          "identity": sim.is_identity})
        if not sim.is_identity:
            arrays[f"L_{name}"] = sim.L
    header = {"shape": list(model.shape), "ranks": list(model.ranks), "sims": sims_meta,
              "config_fingerprint": model.config_fingerprint, "converged": model.converged,
              "extra": meta or {}}
    write_container(path, "hybrid_tucker", arrays, header)


def load_model(path):
    """Return ``(model, extra_meta)`` from a container written by :func:`save_model`."""
    kind, arrays, meta = read_container(path)
    if kind != "hybrid_tucker":
        raise IoError(f"{path}: expected a hybrid_tucker container, found {kind!r}")
    sims = []
    for name, sm in zip("KSR", meta["sims"]):
        chol = None if sm["identity"] else CholeskyFactor(arrays[f"L_{name}"], sm["jitter"])
        sims.append(SimilarityMatrix(sm["dim"], sm["weight"], None, chol))
    model = HybridTuckerModel(
        **{name: arrays[name] for name in _FACTORS}, sims=tuple(sims),
        trace=tuple(arrays["trace"].tolist()), config_fingerprint=meta["config_fingerprint"],
        converged=meta["converged"],
    )
    return model, meta.get("extra", {})
