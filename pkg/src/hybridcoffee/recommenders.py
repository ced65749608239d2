"""Uniform ``fit`` / ``score`` wrappers around every model family.

``score(user, items, ratings)`` returns one score per catalogue item for
a user whose known history is ``items`` rated ``ratings``; the user index
is only informative (all models fold the history in).
"""

from __future__ import annotations

import logging

import numpy as np

from . import baselines, model as tucker
from .data import Dataset, ratings_to_indices, to_matrix, to_tensor
from .errors import ConfigError
from .similarity import assemble, feature_similarity, identity

log = logging.getLogger(__name__)

FAMILIES = ("hybrid_coffee", "coffee", "hybrid_svd", "pure_svd", "most_popular", "content_based")


def _item_similarity(ds: Dataset, item_S0, measure, threshold):
    if item_S0 is not None:
        return item_S0
    if ds.features is None or not ds.features.fields:
        raise ConfigError("hybrid and content-based models need item side features")
    return feature_similarity(ds.features, measure, threshold=threshold)


class Recommender:
    family = "base"

    def __init__(self):
        self.fit_calls = 0

    @property
    def name(self) -> str:
        return self.family

    def fit(self, ds: Dataset):
        self.fit_calls += 1
        self.n_items = ds.n_items
        self._fit(ds)
        return self

    def _fit(self, ds):
        raise NotImplementedError

    def score(self, user, items, ratings) -> np.ndarray:
        raise NotImplementedError


class TuckerRecommender(Recommender):
    """CoFFee when all weights are zero, HybridCoFFee otherwise."""

    def __init__(self, ranks=(10, 10, 3), alpha=0.0, beta=0.0, gamma=0.0, measure="jaccard",
                 aggregator="positive_mass", positive_threshold=4.0, tol=1e-5, max_iters=25,
                 seed=0, binary=True, threads=1, similarity_threshold=0.0,
                 item_S0=None, user_S0=None, feedback_S0=None):
        super().__init__()
        self.ranks = tuple(int(r) for r in ranks)
        self.alpha, self.beta, self.gamma = float(alpha), float(beta), float(gamma)
        self.measure = measure
        self.aggregator = aggregator
        self.positive_threshold = positive_threshold
        self.cfg = tucker.TrainConfig(self.ranks, tol, max_iters, seed, threads)
        self.binary = binary
        self.similarity_threshold = similarity_threshold
        self.item_S0, self.user_S0, self.feedback_S0 = item_S0, user_S0, feedback_S0
        self.model = None

    @property
    def family(self):
        return "coffee" if self.alpha == self.beta == self.gamma == 0 else "hybrid_coffee"

    def _sim(self, S0, weight, dim):
        if weight == 0 or S0 is None:
            return identity(dim)
        return assemble(S0, weight)

    def _fit(self, ds):
        A = to_tensor(ds, binary=self.binary)
        item_S0 = None
        if self.beta:
            item_S0 = _item_similarity(ds, self.item_S0, self.measure, self.similarity_threshold)
        sims = (self._sim(self.user_S0, self.alpha, ds.n_users),
                self._sim(item_S0, self.beta, ds.n_items),
                self._sim(self.feedback_S0, self.gamma, ds.n_feedback))
        self.scale = ds.scale
        self.ratings_grid = ds.rating_scale
        self.threshold_index = ds.positive_threshold_index(self.positive_threshold)
        self.model = tucker.train(A, sims, self.cfg)
        log.info("%s ranks=%s: %d sweeps, converged=%s", self.name, self.ranks,
                 self.model.n_iters, self.model.converged)

    def with_ranks(self, ranks) -> "TuckerRecommender":
        """Copy of this fitted recommender rounded to lower ``ranks``."""
        clone = object.__new__(TuckerRecommender)
        clone.__dict__.update(self.__dict__)
        clone.ranks = tuple(int(r) for r in ranks)
        clone.model = tucker.round_rank(self.model, clone.ranks)
        return clone

    def predict(self, items, ratings) -> np.ndarray:
        P = tucker.PreferenceMatrix.from_history(
            items, ratings_to_indices(ratings, self.scale), self.model.shape[1:])
        return tucker.fold_in_user(self.model, P)

    def score(self, user, items, ratings):
        P_bar = self.predict(items, ratings)
        return tucker.aggregate_scores(P_bar, self.aggregator, self.threshold_index, self.ratings_grid)


class SVDRecommender(Recommender):
    """PureSVD, or HybridSVD when ``weight > 0``."""

    def __init__(self, rank=10, weight=0.0, measure="jaccard", binary=False,
                 similarity_threshold=0.0, item_S0=None, hybrid=None):
        super().__init__()
        self.rank = int(rank)
        self.weight = float(weight)
        self.hybrid = self.weight > 0 if hybrid is None else hybrid
        self.measure = measure
        self.binary = binary
        self.similarity_threshold = similarity_threshold
        self.item_S0 = item_S0
        self.model = None

    @property
    def family(self):
        return "hybrid_svd" if self.hybrid else "pure_svd"

    def _fit(self, ds):
        A2 = to_matrix(ds, binary=self.binary)
        if self.hybrid:
            S = identity(ds.n_items)
            if self.weight:
                S0 = _item_similarity(ds, self.item_S0, self.measure, self.similarity_threshold)
                S = assemble(S0, self.weight)
            self.model = baselines.train_hybrid_svd(A2, identity(ds.n_users), S, self.rank)
        else:
            self.model = baselines.train_pure_svd(A2, self.rank)

    def with_rank(self, rank) -> "SVDRecommender":
        clone = object.__new__(SVDRecommender)
        clone.__dict__.update(self.__dict__)
        clone.rank = int(rank)
        clone.model = self.model.truncate(clone.rank)
        return clone

    def score(self, user, items, ratings):
        values = np.ones(len(items)) if self.binary else ratings
        return self.model.fold_in_sparse(items, values)


class MostPopularRecommender(Recommender):
    family = "most_popular"

    def _fit(self, ds):
        self.model = baselines.most_popular(ds.items, ds.n_items)

    def score(self, user, items, ratings):
        return self.model.counts


class ContentBasedRecommender(Recommender):
    family = "content_based"

    def __init__(self, measure="jaccard", similarity_threshold=0.0, item_S0=None):
        super().__init__()
        self.measure = measure
        self.similarity_threshold = similarity_threshold
        self.item_S0 = item_S0

    def _fit(self, ds):
        self.S0 = _item_similarity(ds, self.item_S0, self.measure, self.similarity_threshold)

    def score(self, user, items, ratings):
        return baselines.content_based_scores(self.S0, items)


def make_recommender(family: str, params: dict | None = None) -> Recommender:
    """Build a recommender from a family name and a flat parameter dict.

    Unused keys are ignored so one model section can drive every family.
    """
    p = dict(params or {})
    common = {k: p[k] for k in ("measure", "similarity_threshold", "item_S0") if k in p}
    if family in ("coffee", "hybrid_coffee"):
        keys = ("ranks", "aggregator", "positive_threshold", "tol", "max_iters", "seed",
                "binary", "threads")
        kw = {k: p[k] for k in keys if k in p}
        if family == "hybrid_coffee":
            kw.update({k: p[k] for k in ("alpha", "beta", "gamma", "user_S0", "feedback_S0") if k in p})
            if not (kw.get("alpha") or kw.get("beta") or kw.get("gamma")):
                raise ConfigError("hybrid_coffee needs a positive alpha, beta or gamma")
        return TuckerRecommender(**kw, **common)
    if family in ("pure_svd", "hybrid_svd"):
        rank = p.get("rank", p.get("ranks", (10,))[0] if "ranks" in p else 10)
        kw = {"rank": rank, "binary": p.get("svd_binary", False)}
        if family == "hybrid_svd":
            kw["weight"] = p.get("beta", 0.5)
            kw["hybrid"] = True
            return SVDRecommender(**kw, **common)
        return SVDRecommender(**kw)
    if family == "most_popular":
        return MostPopularRecommender()
    if family == "content_based":
        return ContentBasedRecommender(**common)
    raise ConfigError(f"unknown model family {family!r}; expected one of {', '.join(FAMILIES)}")
