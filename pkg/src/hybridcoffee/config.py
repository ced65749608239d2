"""Run configuration: an INI file, ``HCF_SECTION__KEY`` env vars and ``--set`` overrides."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from .data import SCALES
from .errors import ConfigError
from .model import AGGREGATORS
from .recommenders import FAMILIES
from .similarity import MEASURES

ENV_PREFIX = "HCF_"


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(x) for x in str(s).replace(" ", "").split(",") if x)


def _floats(s):
    return tuple(float(x) for x in str(s).replace(" ", "").split(",") if x)


def _names(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


def _opt_str(s):
    s = str(s).strip()
    return s or None


SCHEMA = {
    "data": {
        "format": (str, "movielens"),
        "path": (_opt_str, None),
        "features": (_opt_str, None),
        "scale": (str, "integer_1_5"),
    },
    "model": {
        "family": (str, "hybrid_coffee"),
        "ranks": (_ints, (10, 10, 3)),
        "rank": (int, 10),
        "alpha": (float, 0.0),
        "beta": (float, 0.5),
        "gamma": (float, 0.0),
        "measure": (str, "jaccard"),
        "similarity_threshold": (float, 0.0),
        "aggregator": (str, "positive_mass"),
        "positive_threshold": (float, 4.0),
        "tol": (float, 1e-5),
        "max_iters": (int, 25),
        "seed": (int, 0),
        "binary": (_bool, True),
        "svd_binary": (_bool, False),
        "threads": (int, 1),
    },
    "eval": {
        "folds": (int, 5),
        "holdout": (int, 10),
        "mark_fraction": (float, 0.2),
        "min_remainder": (int, 5),
        "cutoffs": (_ints, (1, 5, 10, 20)),
        "seed": (int, 0),
        "models": (_names, ("most_popular", "pure_svd", "coffee", "hybrid_coffee")),
        "tune": (_bool, False),
        "rank_grid": (_ints, (10, 20, 40)),
        "rank3_grid": (_ints, (2, 3, 4)),
        "weight_grid": (_floats, (0.1, 0.5, 0.9)),
        "initial_weight": (float, 0.5),
        "tune_cutoff": (int, 10),
    },
    "recommend": {
        "n": (int, 10),
        "history": (_opt_str, None),
    },
    "output": {
        "dir": (str, "out"),
    },
}


@dataclass
class RunConfig:
    data: dict
    model: dict
    eval: dict
    recommend: dict
    output: dict

    @property
    def output_dir(self) -> Path:
        return Path(self.output["dir"])

    def model_params(self, family=None) -> dict:
        p = dict(self.model)
        p.pop("family")
        return p


def _parse_value(section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    parser = SCHEMA[section][key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def load_config(path=None, overrides=(), environ=None) -> RunConfig:
    """Layer defaults, the config file, environment and ``key=value`` overrides."""
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                values.setdefault(section, {})
                values[section][key] = _parse_value(section, key, raw)
    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        values[section][key] = _parse_value(section, key, environ[name])
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        values.setdefault(section, {})
        values[section][key] = _parse_value(section, key, raw)
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    d, m, e = cfg.data, cfg.model, cfg.eval
    if d["format"] not in ("movielens", "bookcrossing", "canonical"):
        raise ConfigError(f"data.format must be movielens, bookcrossing or canonical, got {d['format']!r}")
    if d["scale"] not in SCALES:
        raise ConfigError(f"data.scale must be one of {sorted(SCALES)}")
    for fam in (m["family"],) + tuple(e["models"]):
        if fam not in FAMILIES:
            raise ConfigError(f"unknown model family {fam!r}")
    if len(m["ranks"]) != 3 or min(m["ranks"]) < 1:
        raise ConfigError("model.ranks must be three positive integers")
    if m["rank"] < 1:
        raise ConfigError("model.rank must be positive")
    for w in ("alpha", "beta", "gamma"):
        if m[w] < 0:
            raise ConfigError(f"model.{w} must be non-negative")
    if m["measure"] not in MEASURES:
        raise ConfigError(f"model.measure must be one of {MEASURES}")
    if m["aggregator"] not in AGGREGATORS:
        raise ConfigError(f"model.aggregator must be one of {AGGREGATORS}")
    if not m["tol"] > 0 or m["max_iters"] < 1 or m["threads"] < 1:
        raise ConfigError("model.tol must be positive, max_iters and threads at least 1")
    if e["folds"] < 2 or e["holdout"] < 1 or not 0 < e["mark_fraction"] <= 1:
        raise ConfigError("eval.folds >= 2, eval.holdout >= 1 and 0 < eval.mark_fraction <= 1 required")
    if not e["cutoffs"] or min(e["cutoffs"]) < 1:
        raise ConfigError("eval.cutoffs must be positive integers")
    if cfg.recommend["n"] < 1:
        raise ConfigError("recommend.n must be at least 1")
