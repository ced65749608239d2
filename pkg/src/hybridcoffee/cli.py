"""Command-line entry point: ``prepare``, ``train``, ``tune``, ``evaluate``, ``recommend``.

Heavy outputs go to files under ``output.dir``; stdout gets one summary
line per command. Failures exit with status 2 and print
``error: <ErrorClass>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, data, evaluation, model as tucker
from .config import RunConfig, load_config
from .container import read_container, write_container
from .errors import EmptyHistory, HybridCoffeeError, IoError, ParseError
from .recommenders import MostPopularRecommender, SVDRecommender, TuckerRecommender, make_recommender
from .similarity import feature_similarity

log = logging.getLogger("hybridcoffee")


def load_dataset(cfg: RunConfig) -> data.Dataset:
    d = cfg.data
    if not d["path"]:
        raise IoError("data.path is not set")
    if not Path(d["path"]).exists():
        raise IoError(f"data.path {d['path']} does not exist")
    if d["format"] == "canonical":
        return data.load_canonical(d["path"])
    if d["format"] == "bookcrossing":
        ds = data.load_bookcrossing(d["path"])
    else:
        ds = data.load_movielens(d["path"], d["scale"])
    if d["features"]:
        if not Path(d["features"]).exists():
            raise IoError(f"data.features {d['features']} does not exist")
        data.attach_features(ds, d["features"])
    return ds


def _params(cfg: RunConfig, ds: data.Dataset, families):
    params = cfg.model_params()
    # the item similarity is built once and shared by every model and fold
    needs = {"content_based", "hybrid_svd", "hybrid_coffee"}
    if ds.features is not None and ds.features.fields and needs.intersection(families):
        params["item_S0"] = feature_similarity(ds.features, params["measure"],
                                               threshold=params["similarity_threshold"])
    return params


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _sidecar(cfg: RunConfig, command: str, **info):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.output_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "command": command,
                             **info}, sort_keys=True) + "\n")


def cmd_prepare(cfg: RunConfig) -> str:
    ds = load_dataset(cfg)
    data.dump_dataset(ds, cfg.output_dir / "dataset")
    _sidecar(cfg, "prepare", counts=ds.meta.get("counts"))
    return f"prepared users={ds.n_users} items={ds.n_items} interactions={len(ds)}"


def _model_meta(ds, rec):
    return {"family": rec.family, "item_ids": ds.item_ids, "scale": ds.scale}


def save_recommender(rec, ds, path: Path) -> None:
    meta = _model_meta(ds, rec)
    if isinstance(rec, TuckerRecommender):
        meta.update(aggregator=rec.aggregator, threshold_index=rec.threshold_index)
        tucker.save_model(rec.model, path, meta)
    elif isinstance(rec, SVDRecommender):
        meta.update(binary=rec.binary)
        baselines.save_matrix_model(rec.model, path, meta)
    elif isinstance(rec, MostPopularRecommender):
        write_container(path, "most_popular", {"counts": rec.model.counts}, {"extra": meta})
    else:
        write_container(path, "content_based", {"S0": rec.S0}, {"extra": meta})


def load_scorer(path: Path):
    """Return ``(score_fn(items, ratings) -> scores, meta)`` for a saved model."""
    kind, _, header = read_container(path)
    if kind == "hybrid_tucker":
        m, meta = tucker.load_model(path)

        def score(items, ratings):
            fb = data.ratings_to_indices(ratings, meta["scale"])
            P = tucker.PreferenceMatrix.from_history(items, fb, m.shape[1:])
            return tucker.aggregate_scores(tucker.fold_in_user(m, P), meta["aggregator"],
                                           meta["threshold_index"], data.scale_values(meta["scale"]))
        return score, meta
    if kind == "matrix":
        m, meta = baselines.load_matrix_model(path)
        return (lambda items, ratings: m.fold_in_sparse(
            items, np.ones(len(items)) if meta["binary"] else ratings)), meta
    _, arrays, header = read_container(path)
    meta = header["extra"]
    if kind == "most_popular":
        return (lambda items, ratings: arrays["counts"]), meta
    if kind == "content_based":
        return (lambda items, ratings: baselines.content_based_scores(arrays["S0"], items)), meta
    raise IoError(f"{path}: unsupported model kind {kind!r}")


def cmd_train(cfg: RunConfig) -> str:
    ds = load_dataset(cfg)
    family = cfg.model["family"]
    rec = make_recommender(family, _params(cfg, ds, [family])).fit(ds)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_recommender(rec, ds, out / "model.hcf")
    trace = {"family": family}
    if isinstance(rec, TuckerRecommender):
        trace.update(core_norms=list(rec.model.trace), converged=rec.model.converged,
                     ranks=list(rec.model.ranks), config_fingerprint=rec.model.config_fingerprint)
    _write(out / "trace.json", json.dumps(trace, indent=2, sort_keys=True) + "\n")
    _sidecar(cfg, "train", family=family)
    return f"trained {family} on {len(ds)} interactions -> {out / 'model.hcf'}"


def _grids(cfg: RunConfig):
    e = cfg.eval
    return {"rank": e["rank_grid"], "rank3": e["rank3_grid"], "weight": e["weight_grid"],
            "initial_weight": e["initial_weight"]}


def _split(cfg: RunConfig, ds):
    e = cfg.eval
    return evaluation.make_split(ds, e["folds"], e["holdout"], e["mark_fraction"], e["seed"],
                                 e["min_remainder"])


def _tune_all(cfg, ds, split, params):
    results = {}
    for family in cfg.eval["models"]:
        results[family] = evaluation.tune(ds, family, _grids(cfg), cfg.eval["seed"], split,
                                          params, cfg.eval["tune_cutoff"],
                                          params["positive_threshold"])
    return results


def _tune_json(results):
    def clean(d):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
    return json.dumps({f: {"best": clean(r.best), "table": [clean(row) for row in r.table],
                           "train_calls": r.train_calls} for f, r in results.items()},
                      indent=2, sort_keys=True) + "\n"


def cmd_tune(cfg: RunConfig) -> str:
    ds = load_dataset(cfg)
    split = _split(cfg, ds)
    results = _tune_all(cfg, ds, split, _params(cfg, ds, cfg.eval["models"]))
    _write(cfg.output_dir / "tune.json", _tune_json(results))
    _sidecar(cfg, "tune", families=list(results))
    best = " ".join(f"{f}={json.dumps(r.best, sort_keys=True, default=list)}" for f, r in results.items())
    return f"tuned {best}"


def cmd_evaluate(cfg: RunConfig) -> str:
    ds = load_dataset(cfg)
    split = _split(cfg, ds)
    params = _params(cfg, ds, cfg.eval["models"])
    chosen = {f: {} for f in cfg.eval["models"]}
    if cfg.eval["tune"]:
        results = _tune_all(cfg, ds, split, params)
        _write(cfg.output_dir / "tune.json", _tune_json(results))
        chosen = {f: r.best for f, r in results.items()}
    models = {f: (lambda f=f: make_recommender(f, dict(params, **chosen[f])))
              for f in cfg.eval["models"]}
    reports = list(evaluation.run_experiment(ds, models, split, cfg.eval["cutoffs"],
                                             params["positive_threshold"]).values())
    out = cfg.output_dir
    _write(out / "report.json", evaluation.reports_to_json(reports))
    _write(out / "report.csv", evaluation.reports_to_csv(reports))
    _write(out / "roc.csv", evaluation.roc_to_csv(reports))
    _sidecar(cfg, "evaluate", models=list(cfg.eval["models"]))
    n = 10 if 10 in cfg.eval["cutoffs"] else cfg.eval["cutoffs"][0]
    summary = " ".join(f"{r.model}:ndcg@{n}={r.summary[f'ndcg@{n}']['mean']:.4f}" for r in reports)
    return f"evaluated {summary}"


def read_history(path, item_map):
    """``item_id<TAB>rating`` lines; unknown items are skipped."""
    items, ratings = [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open history {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected item_id<TAB>rating", lineno)
            if parts[0] not in item_map:
                log.warning("history item %s is not in the model catalogue", parts[0])
                continue
            try:
                ratings.append(float(parts[1]))
            except ValueError:
                raise ParseError(f"non-numeric rating {parts[1]!r}", lineno) from None
            items.append(item_map[parts[0]])
    return np.asarray(items, dtype=np.int64), np.asarray(ratings, dtype=np.float64)


def cmd_recommend(cfg: RunConfig, history=None) -> str:
    history = history or cfg.recommend["history"]
    if not history:
        raise IoError("no history file given (--history or recommend.history)")
    path = cfg.output_dir / "model.hcf"
    if not path.exists():
        raise IoError(f"model file {path} does not exist; run train first")
    score, meta = load_scorer(path)
    item_ids = meta["item_ids"]
    items, ratings = read_history(history, {iid: k for k, iid in enumerate(item_ids)})
    if items.size == 0:
        raise EmptyHistory(f"history file {history} has no known items")
    scores = score(items, ratings)
    top = tucker.rank_items(scores, exclude=items, n=cfg.recommend["n"])
    lines = "".join(f"{item_ids[i]}\t{float(scores[i])!r}\n" for i in top)
    _write(cfg.output_dir / "recommendations.tsv", lines)
    return f"recommended {len(top)} items -> {cfg.output_dir / 'recommendations.tsv'}"


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "tune": cmd_tune,
            "evaluate": cmd_evaluate, "recommend": cmd_recommend}


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridcoffee", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        if name == "recommend":
            p.add_argument("--history", help="item_id<TAB>rating file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "recommend":
            summary = cmd_recommend(cfg, args.history)
        else:
            summary = COMMANDS[args.command](cfg)
    except HybridCoffeeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
