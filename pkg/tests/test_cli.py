import json

import pytest

from hybridcoffee.cli import main
from hybridcoffee.config import load_config
from hybridcoffee.data import dump_dataset
from hybridcoffee.errors import ConfigError
from hybridcoffee.synthetic import make_clustered


def write_config(tmp_path, dataset_dir, extra=""):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""[data]
format = canonical
path = {dataset_dir}

[model]
family = hybrid_coffee
ranks = 6, 6, 2
rank = 4
beta = 0.5

[eval]
models = most_popular, pure_svd, coffee, hybrid_coffee
cutoffs = 5, 10
seed = 7

[output]
dir = {tmp_path / "out"}
{extra}""")
    return cfg


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    ds = make_clustered(n_users=20, n_clusters=5, items_per_cluster=4, clusters_per_user=2,
                        hidden_fraction=0.0, seed=1).train
    dump_dataset(ds, root / "small")
    ds = make_clustered(n_users=100, n_clusters=8, items_per_cluster=6, clusters_per_user=3,
                        hidden_fraction=0.0, seed=2).train
    dump_dataset(ds, root / "medium")
    return root


def test_train_then_recommend_excludes_history(tmp_path, small_dataset, capsys):
    cfg = write_config(tmp_path, small_dataset / "small")
    assert main(["train", "--config", str(cfg)]) == 0
    trace = json.loads((tmp_path / "out" / "trace.json").read_text())
    assert trace["family"] == "hybrid_coffee" and trace["ranks"] == [6, 6, 2]
    history = tmp_path / "history.tsv"
    history.write_text("0\t5\n1\t4\n2\t1\n")
    assert main(["recommend", "--config", str(cfg), "--history", str(history),
                 "--set", "recommend.n=5"]) == 0
    rows = (tmp_path / "out" / "recommendations.tsv").read_text().splitlines()
    assert len(rows) == 5
    assert {r.split("\t")[0] for r in rows}.isdisjoint({"0", "1", "2"})
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2 and out[1].startswith("recommended 5 items")


@pytest.mark.parametrize("family", ["pure_svd", "most_popular", "content_based"])
def test_train_recommend_other_families(tmp_path, small_dataset, family):
    cfg = write_config(tmp_path, small_dataset / "small")
    assert main(["train", "--config", str(cfg), "--set", f"model.family={family}"]) == 0
    history = tmp_path / "history.tsv"
    history.write_text("3\t4\n")
    assert main(["recommend", "--config", str(cfg), "--history", str(history)]) == 0
    rows = (tmp_path / "out" / "recommendations.tsv").read_text().splitlines()
    assert len(rows) == 10 and "3" not in {r.split("\t")[0] for r in rows}


def test_empty_history_fails(tmp_path, small_dataset, capsys):
    cfg = write_config(tmp_path, small_dataset / "small")
    assert main(["train", "--config", str(cfg)]) == 0
    capsys.readouterr()
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    assert main(["recommend", "--config", str(cfg), "--history", str(empty)]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: EmptyHistory:")


def test_evaluate_is_byte_reproducible(tmp_path, small_dataset):
    cfg = write_config(tmp_path, small_dataset / "medium")
    outputs = []
    for run in ("a", "b"):
        assert main(["evaluate", "--config", str(cfg), "--set", f"output.dir={tmp_path / run}"]) == 0
        outputs.append({n: (tmp_path / run / n).read_bytes()
                        for n in ("report.csv", "roc.csv", "report.json")})
    assert outputs[0] == outputs[1]
    header = outputs[0]["report.csv"].decode().splitlines()[0]
    assert header == "model,fold,metric,n,value"
    report = json.loads(outputs[0]["report.json"])
    assert [r["model"] for r in report] == ["most_popular", "pure_svd", "coffee", "hybrid_coffee"]
    assert "ci95" in report[0]["summary"]["ndcg@10"]


def test_tune_and_prepare(tmp_path, small_dataset):
    cfg = write_config(tmp_path, small_dataset / "medium")
    assert main(["tune", "--config", str(cfg), "--set", "eval.models=coffee,hybrid_svd",
                 "--set", "eval.rank_grid=4,6", "--set", "eval.rank3_grid=2"]) == 0
    tuned = json.loads((tmp_path / "out" / "tune.json").read_text())
    assert tuned["coffee"]["train_calls"] == 1
    assert tuned["hybrid_svd"]["train_calls"] == 1 + 3
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "dataset" / "dataset.tsv").read_bytes() == \
        (small_dataset / "medium" / "dataset.tsv").read_bytes()


def test_unknown_key_is_config_error(tmp_path, small_dataset, capsys):
    cfg = write_config(tmp_path, small_dataset / "small")
    bad = tmp_path / "bad.ini"
    bad.write_text(cfg.read_text().replace("rank = 4", "rnak = 4"))
    assert main(["train", "--config", str(bad)]) == 2
    assert capsys.readouterr().err.startswith("error: ConfigError:")
    with pytest.raises(ConfigError):
        load_config(None, ["model.nope=1"])
    with pytest.raises(ConfigError):
        load_config(None, [], {"HCF_MODEL__NOPE": "1"})
    with pytest.raises(ConfigError):
        load_config(None, ["model.ranks=0,1,1"])


def test_override_layers(tmp_path, small_dataset):
    cfg = write_config(tmp_path, small_dataset / "small")
    c = load_config(cfg, [], {"HCF_MODEL__RANK": "7"})
    assert c.model["rank"] == 7 and c.model["ranks"] == (6, 6, 2)
    c = load_config(cfg, ["model.rank=9"], {"HCF_MODEL__RANK": "7"})
    assert c.model["rank"] == 9


def test_missing_data_is_io_error(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "nowhere")
    assert main(["train", "--config", str(cfg)]) == 2
    assert capsys.readouterr().err.startswith("error: IoError:")
