"""One test per acceptance criterion; each records a PASS/FAIL line in the summary."""

import os
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from hybridcoffee.baselines import train_hybrid_svd, train_pure_svd
from hybridcoffee.cli import main
from hybridcoffee.data import dump_dataset, load_movielens
from hybridcoffee.evaluation import (auc, evaluate_fold, make_split, ndcg_at_n, ndcl_at_n,
                                     roc_points, run_experiment, tune)
from hybridcoffee.model import (PreferenceMatrix, TrainConfig, check_ranks, fold_in_user,
                                initial_factors, round_rank, train)
from hybridcoffee.recommenders import Recommender, make_recommender
from hybridcoffee.similarity import assemble, identity
from hybridcoffee.synthetic import make_clustered, side_information_lift
from hybridcoffee.tensor import from_arrays, reconstruct_dense

from oracles import (auxiliary_tensor, definitional_ndcg, dense_hooi, max_principal_angle,
                     projector_distance, random_s0, random_sparse, tucker_error)


def record(number, passed, detail):
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    conftest.ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {detail}")
    conftest.ACCEPTANCE_LINES.sort(key=lambda line: int(line.split("criterion ")[1].split(":")[0]))


def random_instance(seed):
    """Random sparse tensor (dims <= 10x9x5) with random SPD similarities and valid ranks <= (4,4,3)."""
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(4, 11)), int(rng.integers(4, 10)), int(rng.integers(2, 6)))
    while True:
        ranks = (int(rng.integers(1, min(4, shape[0]) + 1)), int(rng.integers(1, min(4, shape[1]) + 1)),
                 int(rng.integers(1, min(3, shape[2]) + 1)))
        try:
            check_ranks(shape, ranks)
            break
        except Exception:
            continue
    A = from_arrays(*random_sparse(rng, shape, float(rng.uniform(0.15, 0.5))), shape)
    weights = rng.uniform(0.0, 1.0, size=3)
    sims = tuple(assemble(random_s0(rng, n), w) for n, w in zip(shape, weights))
    return A, sims, ranks


def lower_ranks(ranks):
    """Valid rank triples reached by shrinking every mode by 0, 1 and 2."""
    out = []
    for k in (0, 1, 2):
        r1, r2, r3 = (max(1, r - k) for r in ranks)
        # keep each rank within the product of the other two
        r3 = min(r3, r1 * r2)
        r1, r2 = min(r1, r2 * r3), min(r2, r1 * r3)
        if (r1, r2, r3) not in out:
            out.append((r1, r2, r3))
    return out


def orthogonality_error(model):
    aux = max(np.max(np.abs(X.T @ X - np.eye(X.shape[1])))
              for X in (model.U_hat, model.V_hat, model.W_hat))
    orig = max(np.max(np.abs(X.T @ s.dense() @ X - np.eye(X.shape[1])))
               for X, s in zip((model.U, model.V, model.W), model.sims))
    return aux, orig


CRIT1_SEEDS = range(25)
_converged = {}


def test_criterion_1_dense_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in CRIT1_SEEDS:
        A, sims, ranks = random_instance(seed)
        model = train(A, sims, TrainConfig(ranks, seed=seed))
        _converged[f"random-{seed}"] = (model.converged, model.n_iters)
        Ahat = auxiliary_tensor(A.to_dense(), [s.L for s in sims])
        V0, W0 = initial_factors(A.shape, ranks, seed)
        core, factors, _ = dense_hooi(Ahat, ranks, V0, W0, model.n_iters)
        ref = tucker_error(Ahat, core, factors)
        ours = tucker_error(Ahat, model.core, [model.U_hat, model.V_hat, model.W_hat])
        worst = max(worst, abs(ours - ref) / max(ref, 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60
    record(1, ok, f"{len(CRIT1_SEEDS)} instances, worst relative error gap {worst:.2e} "
                  f"(<=1e-6), {elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_2_reduction_identities():
    rng = np.random.default_rng(2)
    # (a) zero weights equal plain HOOI
    shape, ranks = (10, 9, 5), (4, 4, 3)
    A = from_arrays(*random_sparse(rng, shape, 0.3), shape)
    sims = tuple(assemble(random_s0(rng, n), 0.0) for n in shape)
    model = train(A, sims, TrainConfig(ranks, tol=1e-14, max_iters=50, seed=3))
    V0, W0 = initial_factors(shape, ranks, 3)
    _, plain, _ = dense_hooi(A.to_dense(), ranks, V0, W0, model.n_iters)
    dist_a = max(projector_distance(a, b) for a, b in zip((model.U_hat, model.V_hat, model.W_hat), plain))
    # (b) one feedback slice, identity similarities: PureSVD subspaces
    M, N, r = 20, 15, 4
    X = rng.standard_normal((M, r)) @ np.diag([10.0, 7.0, 5.0, 3.0]) @ rng.standard_normal((r, N))
    X += 0.05 * rng.standard_normal((M, N))
    u, i = np.nonzero(np.ones((M, N), dtype=bool))
    T = from_arrays(u, i, np.zeros_like(u), X[u, i], (M, N, 1))
    tm = train(T, None, TrainConfig((r, r, 1), tol=1e-15, max_iters=300))
    svd = train_pure_svd(X, r)
    uu = np.linalg.svd(X)[0][:, :r]
    angle_b = max(max_principal_angle(tm.U_hat, uu), max_principal_angle(tm.V_hat, svd.V_hat))
    # (c) HybridSVD with identity factors is bitwise PureSVD
    import scipy.sparse
    R = scipy.sparse.random(30, 20, density=0.3, random_state=4, format="csr")
    p, h = train_pure_svd(R, 5), train_hybrid_svd(R, identity(30), identity(20), 5)
    bitwise = all(np.array_equal(getattr(p, n), getattr(h, n)) for n in ("V_hat", "sigma", "V", "V_S"))
    ok = dist_a <= 1e-6 and angle_b <= 1e-6 and bitwise
    record(2, ok, f"(a) projector distance {dist_a:.1e}; (b) max principal angle {angle_b:.1e}; "
                  f"(c) bitwise={bitwise}")
    assert ok


def test_criterion_3_orthogonality_suite():
    worst_aux = worst_orig = 0.0
    checks = 0
    for seed in range(30):
        A, sims, ranks = random_instance(100 + seed)
        model = train(A, sims, TrainConfig(ranks, seed=seed))
        models = [model] + [round_rank(model, r) for r in lower_ranks(ranks)]
        for m in models:
            aux, orig = orthogonality_error(m)
            worst_aux, worst_orig = max(worst_aux, aux), max(worst_orig, orig)
            checks += 1
    ok = worst_aux <= 1e-8 and worst_orig <= 1e-7
    record(3, ok, f"{checks} models: auxiliary {worst_aux:.1e} (<=1e-8), "
                  f"K/S/R-orthogonality {worst_orig:.1e} (<=1e-7)")
    assert ok


@pytest.fixture(scope="module")
def lift_runs():
    start = time.perf_counter()
    runs = [side_information_lift(seed) for seed in range(10)]
    return runs, time.perf_counter() - start


def test_criterion_4_hooi_ascent(lift_runs):
    worst_drop = 0.0
    status = dict(_converged)
    for seed in range(100):
        A, sims, ranks = random_instance(1000 + seed)
        model = train(A, sims, TrainConfig(ranks, seed=seed))
        status[f"random-{1000 + seed}"] = (model.converged, model.n_iters)
        worst_drop = max(worst_drop, max([a - b for a, b in zip(model.trace, model.trace[1:])], default=0.0))
    # desk-scale instances: the small random tensors above and in criterion 1, default tol and cap
    slow = sorted(name for name, (conv, _) in status.items() if not conv)
    runs, _ = lift_runs
    sweeps = [r.coffee.model.n_iters for r in runs] + [r.hybrid.model.n_iters for r in runs]
    ok = worst_drop <= 1e-9 and not slow
    record(4, ok, f"100 seeded runs, largest trace decrease {worst_drop:.1e} (<=1e-9); "
                  f"{len(status) - len(slow)}/{len(status)} desk-scale instances converged within 25 sweeps"
                  + (f" (not: {', '.join(slow)})" if slow else "")
                  + f"; synthetic 2000-user tensors took {min(sweeps)}-{max(sweeps)} sweeps")
    assert ok


def test_criterion_5_folding_in_algebra():
    worst = 0.0
    bitwise = True
    for seed in range(20):
        A, sims, ranks = random_instance(200 + seed)
        m = train(A, sims, TrainConfig(ranks, seed=seed))
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 5))
        P = PreferenceMatrix.from_history(rng.choice(A.shape[1], size=k, replace=False),
                                          rng.integers(0, A.shape[2], size=k), A.shape[1:],
                                          values=rng.uniform(0.5, 1.5, size=k))
        direct = m.V @ (m.V_S.T @ P.to_dense()) @ (m.W_R @ m.W.T)
        worst = max(worst, float(np.max(np.abs(fold_in_user(m, P) - direct))))
        plain = train(A, None, TrainConfig(ranks, seed=seed))
        eq2 = plain.V_hat @ ((plain.V_hat[P.items].T * P.values) @ plain.W_hat[P.feedback]) @ plain.W_hat.T
        bitwise &= bool(np.array_equal(fold_in_user(plain, P), eq2))
    ok = worst <= 1e-10 and bitwise
    record(5, ok, f"cached-factor vs direct max |diff| {worst:.1e} (<=1e-10); identity-similarity "
                  f"path bitwise equal to the plain formula: {bitwise}")
    assert ok


def test_criterion_6_tensor_rounding():
    worst_proj, monotone = 0.0, True
    for seed in range(20):
        A, sims, _ = random_instance(300 + seed)
        ranks = tuple(min(n, 3) for n in A.shape[:2]) + (min(A.shape[2], 2),)
        m = train(A, sims, TrainConfig(ranks, seed=seed))
        same = round_rank(m, ranks)
        worst_proj = max(worst_proj, *(projector_distance(a, b) for a, b in
                                       zip((m.U_hat, m.V_hat, m.W_hat), (same.U_hat, same.V_hat, same.W_hat))))
        Ahat = auxiliary_tensor(A.to_dense(), [s.L for s in sims])
        chain = [ranks] + [tuple(max(1, r - k) for r in ranks) for k in (1, 2)]
        errs = []
        for r in chain:
            mm = round_rank(m, r)
            errs.append(tucker_error(Ahat, mm.core, [mm.U_hat, mm.V_hat, mm.W_hat]))
        monotone &= all(b >= a - 1e-12 for a, b in zip(errs, errs[1:]))
    ds = make_clustered(n_users=120, n_clusters=8, items_per_cluster=6, clusters_per_user=3,
                        hidden_fraction=0.0, seed=3).train
    res = tune(ds, "coffee", {"rank": (4, 6, 8), "rank3": (2, 3)}, split=make_split(ds, seed=0))
    ok = worst_proj <= 1e-10 and monotone and res.train_calls == 1
    record(6, ok, f"same-rank projector change {worst_proj:.1e} (<=1e-10); error monotone in rank: "
                  f"{monotone}; rank sweep training calls {res.train_calls} (==1)")
    assert ok


class _Shuffled(Recommender):
    family = "shuffled"

    def __init__(self, seed):
        super().__init__()
        self.rng = np.random.default_rng(seed)

    def _fit(self, ds):
        pass

    def score(self, user, items, ratings):
        return self.rng.permutation(self.n_items).astype(float)


def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n_items = int(rng.integers(5, 60))
        ranked = rng.permutation(n_items).tolist()
        rel = set(rng.choice(n_items, size=int(rng.integers(0, min(12, n_items))), replace=False).tolist())
        n = int(rng.integers(1, 30))
        worst = max(worst, abs(ndcg_at_n(ranked, rel, n) - definitional_ndcg(ranked, rel, n)),
                    abs(ndcl_at_n(ranked, rel, n) - definitional_ndcg(ranked, rel, n)))
    ex1 = round(ndcg_at_n([0, 1, 2], {0, 2}, 3), 6)
    ex2 = round(ndcl_at_n([0, 1, 2], {1}, 3), 6)
    ds = make_clustered(n_users=200, n_clusters=10, items_per_cluster=6, clusters_per_user=3,
                        hidden_fraction=0.0, seed=5).train
    split = make_split(ds, seed=1)
    aucs = [evaluate_fold(_Shuffled(s), ds, split, s % 5).metrics["auc"] for s in range(10)]
    mean_auc = float(np.mean(aucs))
    ok = worst <= 1e-12 and ex1 == 0.919721 and ex2 == 0.630930 and abs(mean_auc - 0.5) <= 0.05
    record(7, ok, f"1000 rankings max |diff| {worst:.1e} (<=1e-12); examples {ex1:.6f}, {ex2:.6f}; "
                  f"random-ranking AUC over 10 seeds {mean_auc:.3f} (0.5+-0.05)")
    assert ok


def test_criterion_8_synthetic_side_information_lift(lift_runs):
    runs, elapsed = lift_runs
    wins = sum(r.hybrid_auc > r.coffee_auc for r in runs)
    coffee = float(np.mean([r.coffee_auc for r in runs]))
    hybrid = float(np.mean([r.hybrid_auc for r in runs]))
    ok = hybrid >= coffee and wins >= 8 and elapsed < 300
    record(8, ok, f"mean AUC hybrid {hybrid:.3f} vs coffee {coffee:.3f}; strict wins {wins}/10 (>=8); "
                  f"{elapsed:.0f}s (<300s)")
    assert ok


def _ml1m_path():
    env = os.environ.get("HCF_ML1M_PATH")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parents[1] / "data" / "ml-1m" / "ratings.dat")
    return next((p for p in candidates if p.is_file()), None)


@pytest.mark.slow
def test_criterion_9_ml1m_protocol():
    path = _ml1m_path()
    if path is None:
        record(9, "SKIP", "ML1M ratings not found (set HCF_ML1M_PATH or add data/ml-1m/ratings.dat)")
        pytest.skip("ML1M dataset not present")
    ds = load_movielens(path)
    split = make_split(ds, seed=0)
    holdouts_ok = all(h.size == 10 for h in split.holdout.values())
    grids = {"rank": (10, 20, 40), "rank3": (2, 3, 4), "weight": (0.1, 0.5, 0.9)}
    families = ["pure_svd", "coffee"]
    chosen = {f: tune(ds, f, grids, split=split).best for f in families}
    models = {"most_popular": lambda: make_recommender("most_popular")}
    models.update({f: (lambda f=f: make_recommender(f, chosen[f])) for f in families})
    reports = run_experiment(ds, models, split)
    finite = all(np.isfinite(v) and 0.0 <= v <= 1.0
                 for rep in reports.values() for vals in rep.per_fold.values() for v in vals)
    has_ci = all(np.isfinite(s["ci95"]) for rep in reports.values() for s in rep.summary.values())
    mp = reports["most_popular"].per_fold["ndcg@10"]
    best = np.max([reports[f].per_fold["ndcg@10"] for f in families], axis=0)
    below = int(np.sum(np.asarray(mp) < best))
    ok = holdouts_ok and finite and has_ci and below >= 4
    record(9, ok, f"holdout=10: {holdouts_ok}; metrics finite in [0,1]: {finite}; CIs: {has_ci}; "
                  f"MostPopular below best factorization on {below}/5 folds (>=4)")
    assert ok


def test_criterion_10_end_to_end_determinism(tmp_path):
    split = make_clustered(n_users=150, n_clusters=8, items_per_cluster=6, clusters_per_user=3,
                           hidden_fraction=0.0, seed=11)
    dump_dataset(split.train, tmp_path / "data")
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[data]\nformat = canonical\npath = {tmp_path / 'data'}\n\n"
                   "[model]\nranks = 6, 6, 2\nrank = 6\nbeta = 0.5\n\n"
                   "[eval]\nmodels = most_popular, pure_svd, hybrid_svd, coffee, hybrid_coffee, content_based\n"
                   "seed = 3\n")
    blobs = []
    for run in ("a", "b"):
        assert main(["evaluate", "--config", str(cfg), "--set", f"output.dir={tmp_path / run}"]) == 0
        blobs.append(((tmp_path / run / "report.csv").read_bytes(), (tmp_path / run / "roc.csv").read_bytes()))
    ok = blobs[0] == blobs[1] and len(blobs[0][0]) > 0
    record(10, ok, f"two seeded evaluate runs: report.csv and roc.csv byte-identical: {ok}")
    assert ok
