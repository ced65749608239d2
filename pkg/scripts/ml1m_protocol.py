"""Full cross-validation protocol on MovieLens-1M.

Tunes every model family on fold 0 (rank grid 10/20/40, mode-3 ranks
2/3/4, weights 0.1/0.5/0.9), then runs 5-fold CV and writes the reports
under ``--out``. Hybrid families are only included with ``--features``.
"""

import argparse
import sys

from hybridcoffee.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ratings", help="path to ml-1m/ratings.dat")
    ap.add_argument("--features", help="item feature TSV (item_id, field, token)")
    ap.add_argument("--out", default="out/ml1m")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    models = ["most_popular", "pure_svd", "coffee"]
    if args.features:
        models += ["hybrid_svd", "hybrid_coffee", "content_based"]
    overrides = [
        f"data.path={args.ratings}",
        f"data.features={args.features or ''}",
        f"output.dir={args.out}",
        f"eval.models={','.join(models)}",
        f"eval.seed={args.seed}",
        f"model.seed={args.seed}",
        f"model.threads={args.threads}",
        "eval.tune=true",
    ]
    argv = ["-v", "evaluate", "--config", "configs/ml1m.ini"]
    for item in overrides:
        argv += ["--set", item]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
