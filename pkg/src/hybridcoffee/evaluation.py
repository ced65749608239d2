"""Cross-validation protocol, ranking metrics and hyper-parameter tuning.

Users are split into folds; in each fold the marked users lose a random
holdout of their items, the model is trained on everything else, and the
marked users are scored by folding in their remaining history. Holdout
items rated at or above the positivity threshold are positives, the
others negatives; unrated items count as neither.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import Dataset
from .errors import DegenerateSample, EmptyGrid, NotEnoughEligibleUsers
from .model import rank_items
from .recommenders import Recommender, SVDRecommender, TuckerRecommender, make_recommender

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (1, 5, 10, 20)
ROC_CONVENTION = "holdout-only: unrated recommended items advance neither TPR nor FPR"
NDCL_DEFINITION = "binary-gain DCG over negative holdout items, normalized by all negatives on top"


@dataclass
class SplitPlan:
    """Per-user fold ids (-1 for never marked) and holdout interactions.

    ``holdout[u]`` holds interaction indices into the dataset arrays.
    """

    n_folds: int
    fold_of_user: np.ndarray
    holdout: dict
    seed: int

    def marked_users(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_user == fold)

    def holdout_indices(self, fold: int) -> np.ndarray:
        users = self.marked_users(fold)
        if users.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.holdout[int(u)] for u in users])

    def train_mask(self, n_interactions: int, fold: int) -> np.ndarray:
        mask = np.ones(n_interactions, dtype=bool)
        mask[self.holdout_indices(fold)] = False
        return mask


def _user_groups(users, n_users):
    order = np.argsort(users, kind="stable")
    bounds = np.searchsorted(users[order], np.arange(n_users + 1))
    return [order[bounds[u]:bounds[u + 1]] for u in range(n_users)]


def make_split(ds: Dataset, n_folds: int = 5, holdout_size: int = 10, mark_fraction: float = 0.2,
               seed: int = 0, min_remainder: int = 5) -> SplitPlan:
    """Mark a random ``mark_fraction`` of eligible users per fold and hide their items.

    Users need ``holdout_size + min_remainder`` interactions to be eligible;
    the others always stay in training.
    """
    rng = np.random.default_rng(seed)
    groups = _user_groups(ds.users, ds.n_users)
    eligible = np.array([u for u, g in enumerate(groups) if g.size >= holdout_size + min_remainder],
                        dtype=np.int64)
    if eligible.size < n_folds:
        raise NotEnoughEligibleUsers(
            f"{eligible.size} users have at least {holdout_size + min_remainder} ratings; "
            f"{n_folds} folds need at least {n_folds}")
    n_marked = min(eligible.size, int(round(mark_fraction * n_folds * eligible.size)))
    chosen = rng.permutation(eligible)[:n_marked]
    fold_of_user = np.full(ds.n_users, -1, dtype=np.int64)
    for fold, part in enumerate(np.array_split(chosen, n_folds)):
        fold_of_user[part] = fold
    holdout = {}
    for u in np.sort(chosen).tolist():
        holdout[u] = np.sort(rng.choice(groups[u], size=holdout_size, replace=False))
    return SplitPlan(n_folds, fold_of_user, holdout, seed)


def _discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2))


def _dcg(ranked, relevant, n):
    top = list(ranked[:n])
    hits = np.array([item in relevant for item in top], dtype=np.float64)
    return float(np.sum(hits * _discounts(len(top))))


def ndcg_at_n(ranked, holdout_positive, n: int) -> float:
    """Binary-gain nDCG of the top ``n``; 0 when there are no positives."""
    positives = set(int(x) for x in holdout_positive)
    if not positives:
        return 0.0
    ideal = float(np.sum(_discounts(min(n, len(positives)))))
    return _dcg(ranked, positives, n) / ideal


def ndcl_at_n(ranked, holdout_negative, n: int) -> float:
    """Discounted loss from negatives in the top ``n``, normalized by the worst case."""
    negatives = set(int(x) for x in holdout_negative)
    if not negatives:
        return 0.0
    worst = float(np.sum(_discounts(min(n, len(negatives)))))
    return _dcg(ranked, negatives, n) / worst


def _staircase(pos_ranks, neg_ranks, n_pos, n_neg):
    """ROC points of a cutoff sweep given 1-based ranks of holdout items.

    Holdout items missing from the ranking carry rank ``inf`` and are only
    reached by the final ``(1, 1)`` point.
    """
    pos_ranks = np.asarray(pos_ranks, dtype=np.float64)
    neg_ranks = np.asarray(neg_ranks, dtype=np.float64)
    cuts = np.unique(np.concatenate([pos_ranks, neg_ranks]))
    cuts = cuts[np.isfinite(cuts)]
    pos_sorted, neg_sorted = np.sort(pos_ranks), np.sort(neg_ranks)
    tp = np.searchsorted(pos_sorted, cuts, side="right")
    fp = np.searchsorted(neg_sorted, cuts, side="right")
    tpr = tp / n_pos if n_pos else np.zeros(cuts.size)
    fpr = fp / n_neg if n_neg else np.zeros(cuts.size)
    points = [(0.0, 0.0)] + list(zip(fpr.tolist(), tpr.tolist()))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def _ranks_of(ranked, items):
    position = {int(item): k + 1 for k, item in enumerate(ranked)}
    return [position.get(int(i), math.inf) for i in items]


def roc_points(ranked, holdout_positive, holdout_negative):
    """``(FPR, TPR)`` staircase from sweeping the cutoff down one ranking."""
    pos = list(holdout_positive)
    neg = list(holdout_negative)
    return _staircase(_ranks_of(ranked, pos), _ranks_of(ranked, neg), len(pos), len(neg))


def auc(points) -> float:
    """Trapezoidal area under ``(FPR, TPR)`` points."""
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def paired_ci(per_fold_values, confidence: float = 0.95):
    """Mean and t-interval half-width over ``k`` folds."""
    values = np.asarray(per_fold_values, dtype=np.float64)
    k = values.size
    if k < 2:
        raise DegenerateSample("a confidence interval needs at least two values")
    mean = float(np.mean(values))
    if np.all(values == values[0]):
        return mean, 0.0
    t = stats.t.ppf(0.5 + confidence / 2.0, k - 1)
    return mean, float(t * np.std(values, ddof=1) / math.sqrt(k))


def paired_difference_ci(a, b, confidence: float = 0.95):
    """Interval for the per-fold difference between two models."""
    return paired_ci(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), confidence)


@dataclass
class FoldResult:
    metrics: dict
    roc: list
    n_users: int


def evaluate_fold(rec: Recommender, ds: Dataset, split: SplitPlan, fold: int,
                  cutoffs=DEFAULT_CUTOFFS, positive_threshold: float = 4.0,
                  fit: bool = True) -> FoldResult:
    """Train on the fold's training part and score its marked users."""
    train_idx = np.flatnonzero(split.train_mask(len(ds), fold))
    if fit:
        rec.fit(ds.subset(train_idx))
    groups = _user_groups(ds.users[train_idx], ds.n_users)

    sums = {f"{m}@{n}": 0.0 for m in ("ndcg", "ndcl") for n in cutoffs}
    pos_ranks, neg_ranks = [], []
    users = split.marked_users(fold)
    for u in users.tolist():
        hist = train_idx[groups[u]]
        hidden = split.holdout[u]
        hist_items = ds.items[hist]
        hidden_items = ds.items[hidden]
        if np.intersect1d(hist_items, hidden_items).size:
            raise RuntimeError(f"holdout of user {u} leaks into the folded-in history")
        scores = rec.score(u, hist_items, ds.ratings[hist])
        ranking = rank_items(scores, exclude=hist_items)
        good = ds.ratings[hidden] >= positive_threshold
        positives, negatives = hidden_items[good], hidden_items[~good]
        for n in cutoffs:
            sums[f"ndcg@{n}"] += ndcg_at_n(ranking, positives, n)
            sums[f"ndcl@{n}"] += ndcl_at_n(ranking, negatives, n)
        pos_ranks.extend(_ranks_of(ranking, positives))
        neg_ranks.extend(_ranks_of(ranking, negatives))

    count = max(users.size, 1)
    metrics = {k: v / count for k, v in sums.items()}
    roc = _staircase(pos_ranks, neg_ranks, len(pos_ranks), len(neg_ranks))
    metrics["auc"] = auc(roc)
    return FoldResult(metrics, roc, int(users.size))


@dataclass
class MetricReport:
    model: str
    per_fold: dict
    roc: list
    meta: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        out = {}
        for name, values in self.per_fold.items():
            if len(values) >= 2:
                mean, half = paired_ci(values)
            else:
                mean, half = float(values[0]), float("nan")
            out[name] = {"mean": mean, "ci95": half}
        return out

    def to_dict(self) -> dict:
        return {"model": self.model, "per_fold": self.per_fold, "summary": self.summary,
                "roc": [[list(p) for p in fold] for fold in self.roc], "meta": self.meta}


def _split_metric(name):
    if "@" in name:
        metric, n = name.split("@")
        return metric, n
    return name, ""


def reports_to_csv(reports) -> str:
    """Flat ``model,fold,metric,n,value`` rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "fold", "metric", "n", "value"])
    for rep in reports:
        for name in sorted(rep.per_fold, key=lambda s: (_split_metric(s)[0], int(_split_metric(s)[1] or 0))):
            metric, n = _split_metric(name)
            for fold, value in enumerate(rep.per_fold[name]):
                writer.writerow([rep.model, fold, metric, n, repr(float(value))])
    return buf.getvalue()


def roc_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "fold", "fpr", "tpr"])
    for rep in reports:
        for fold, points in enumerate(rep.roc):
            for fpr, tpr in points:
                writer.writerow([rep.model, fold, repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()


def reports_to_json(reports) -> str:
    return json.dumps([rep.to_dict() for rep in reports], indent=2, sort_keys=True) + "\n"


def run_experiment(ds: Dataset, models: dict, split: SplitPlan, cutoffs=DEFAULT_CUTOFFS,
                   positive_threshold: float = 4.0, folds=None) -> dict:
    """Cross-validate every recommender; returns ``{name: MetricReport}``.

    ``models`` maps report names to recommenders (or zero-argument
    factories that build a fresh one per fold).
    """
    folds = range(split.n_folds) if folds is None else folds
    reports = {}
    for name, rec in models.items():
        per_fold, rocs = {}, []
        for fold in folds:
            model = rec() if callable(rec) and not isinstance(rec, Recommender) else rec
            res = evaluate_fold(model, ds, split, fold, cutoffs, positive_threshold)
            log.info("%s fold %d: %s", name, fold, {k: round(v, 4) for k, v in res.metrics.items()})
            for k, v in res.metrics.items():
                per_fold.setdefault(k, []).append(v)
            rocs.append(res.roc)
        reports[name] = MetricReport(name, per_fold, rocs, {
            "roc_convention": ROC_CONVENTION, "ndcl_definition": NDCL_DEFINITION,
            "positive_threshold": positive_threshold, "split_seed": split.seed,
            "folds": list(folds)})
    return reports


@dataclass
class TuneResult:
    family: str
    best: dict
    table: list
    train_calls: int


DEFAULT_GRIDS = {
    "rank": (10, 20, 40),
    "rank3": (2, 3, 4),
    "weight": (0.1, 0.5, 0.9),
    "initial_weight": 0.5,
}


def _pick(rows, metric):
    # highest score; ties go to the smaller rank, then the smaller weight
    best = max(r[metric] for r in rows)
    tied = [r for r in rows if r[metric] == best]
    return min(tied, key=lambda r: (tuple(np.atleast_1d(r.get("ranks", r.get("rank", 0)))),
                                    r.get("beta", 0.0)))


def tune(ds: Dataset, family: str, grids=None, seed: int = 0, split: SplitPlan | None = None,
         base_params: dict | None = None, cutoff: int = 10, positive_threshold: float = 4.0) -> TuneResult:
    """Two-stage grid search on fold 0, maximizing nDCG@``cutoff``.

    Ranks are swept from a single model trained at the largest grid rank
    (SVD truncation or tensor rounding). Hybrid families then sweep the
    side-information weight at the best rank, one training per weight.
    """
    grids = dict(DEFAULT_GRIDS, **(grids or {}))
    params = dict(base_params or {})
    params.setdefault("seed", seed)
    split = split or make_split(ds, seed=seed)
    metric = f"ndcg@{cutoff}"
    cutoffs = (cutoff,)
    rows = []
    calls = 0

    def evaluate(rec, fit):
        return evaluate_fold(rec, ds, split, 0, cutoffs, positive_threshold, fit=fit).metrics[metric]

    if family in ("most_popular", "content_based"):
        rec = make_recommender(family, params)
        rows.append({metric: evaluate(rec, True)})
        return TuneResult(family, {}, rows, rec.fit_calls)

    ranks = sorted(set(int(r) for r in grids["rank"]))
    if not ranks:
        raise EmptyGrid("rank grid is empty")
    hybrid = family.startswith("hybrid")
    if hybrid:
        params["beta"] = float(grids["initial_weight"])
    tensor = family in ("coffee", "hybrid_coffee")

    if tensor:
        rank3 = sorted(set(int(r) for r in grids["rank3"]))
        if not rank3:
            raise EmptyGrid("mode-3 rank grid is empty")
        top = make_recommender(family, dict(params, ranks=(ranks[-1], ranks[-1], rank3[-1])))
        top.fit(ds.subset(split.train_mask(len(ds), 0)))
        calls += top.fit_calls
        for r in ranks:
            for r3 in rank3:
                rec = top.with_ranks((r, r, r3))
                rows.append({"ranks": (r, r, r3), "beta": params.get("beta", 0.0),
                             metric: evaluate(rec, False)})
    else:
        top = make_recommender(family, dict(params, rank=ranks[-1]))
        top.fit(ds.subset(split.train_mask(len(ds), 0)))
        calls += top.fit_calls
        for r in ranks:
            rows.append({"rank": r, "beta": params.get("beta", 0.0),
                         metric: evaluate(top.with_rank(r), False)})

    best = _pick(rows, metric)
    if hybrid:
        weights = sorted(set(float(w) for w in grids["weight"]))
        if not weights:
            raise EmptyGrid("weight grid is empty")
        stage2 = []
        rank_key = "ranks" if tensor else "rank"
        for w in weights:
            rec = make_recommender(family, dict(params, beta=w, **{rank_key: best[rank_key]}))
            score = evaluate(rec, True)
            calls += rec.fit_calls
            stage2.append({rank_key: best[rank_key], "beta": w, metric: score})
        rows.extend(stage2)
        best = _pick(stage2, metric)

    chosen = {k: v for k, v in best.items() if k != metric}
    if "ranks" in chosen:
        chosen["ranks"] = tuple(chosen["ranks"])
    return TuneResult(family, chosen, rows, calls)
