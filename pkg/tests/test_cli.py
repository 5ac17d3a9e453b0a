import json
import subprocess
import sys

import numpy as np
import pytest

from gaa import model as gm
from gaa.cli import main, pathway_report, rank_predictions

SMALL = ["--set", "n_nodes=80", "--set", "n_modules=8", "--set", "n_compounds=120", "--set", "positive_ratio=0.2"]
FAST = ["--quiet", "--set", "train.max_epochs=3", "--set", "model.heads=2", "--set", "model.head_width=4",
        "--set", "model.mlp_hidden=8", "--set", "train.batch_size=16"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--seed", "2", *SMALL]) == 0
    return root


@pytest.fixture(scope="module")
def trained(data):
    out = data / "run"
    assert main(["train", "--config", str(data / "data" / "config.json"), "--out", str(out), *FAST]) == 0
    return out


def test_synth_outputs(data):
    names = sorted(p.name for p in (data / "data").iterdir())
    assert names == ["config.json", "edges.tsv", "labels.tsv", "modules.gmt", "synth_spec.json", "targets.tsv"]
    assert json.loads((data / "data" / "synth_spec.json").read_text())["n_nodes"] == 80


def test_train_writes_provenance(trained):
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["train"]["max_epochs"] == 3 and cfg["model"]["heads"] == 2
    lines = (trained / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert {"epoch", "train_loss", "lc", "lr_loss", "val_acc", "val_f1", "val_aupr"} <= set(json.loads(lines[0]))


def test_evaluate_json_and_row(trained, capsys):
    assert main(["evaluate", "--checkpoint", str(trained / "model.ckpt"), "--out", str(trained / "e.json")]) == 0
    text = capsys.readouterr().out.splitlines()
    rep = json.loads((trained / "e.json").read_text())
    assert rep["n"] == 12 and set(rep["confusion"]) == {"tp", "fp", "tn", "fn"}
    assert text[-2].split() == ["Method", "ACC", "F1", "AUPR"]
    assert text[-1].split()[0] == "GAA"


def test_predict_matches_classifier_exactly(data, trained):
    out = trained / "pred.tsv"
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--threshold", "0.0", "--out", str(out)]) == 0
    rows = [line.split("\t") for line in out.read_text().splitlines()[1:]]
    assert [int(r[0]) for r in rows] == list(range(1, 121))
    assert all(r[3] == "1" for r in rows)
    probs = [float(r[2]) for r in rows]
    assert probs == sorted(probs, reverse=True)

    from gaa import checkpoint
    from gaa.cli import _Loaded, _load_compounds
    import argparse

    ck = _Loaded(trained / "model.ckpt", argparse.Namespace())
    comp = _load_compounds(ck.cfg, ck.graph, labeled=False)
    p, z = ck.predict(comp)
    direct = gm.classify(checkpoint.load(trained / "model.ckpt")[0], z)[:, 1]
    by_id = {r[1]: float(r[2]) for r in rows}
    assert [by_id[c] for c in comp.compound_ids] == direct.tolist()


def test_rank_ties_by_id():
    rows = rank_predictions(["b", "a", "c"], np.array([0.7, 0.7, 0.95]), 0.9)
    assert [(r[0], r[1], r[3]) for r in rows] == [(1, "c", True), (2, "a", False), (3, "b", False)]


def test_predict_rejects_other_graph(data, trained, tmp_path, capsys):
    edges = (data / "data" / "edges.tsv").read_text().splitlines()
    (tmp_path / "e.tsv").write_text("\n".join(edges[:-1]) + "\n")
    code = main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--edges", str(tmp_path / "e.tsv")])
    assert code == 2
    assert "hash" in capsys.readouterr().err


def test_report(trained, tmp_path):
    out = tmp_path / "r.tsv"
    assert main(["report", "--checkpoint", str(trained / "model.ckpt"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 8
    assert main(["report", "--checkpoint", str(trained / "model.ckpt"), "--pathways", "NOPE"]) == 2


def test_pathway_report_examples():
    z = np.array([[1.0, -2.0], [3.0, 0.5]])
    rows = pathway_report(z, np.array([1, 0]), ["p", "q"])
    assert rows == [("p", 1.0, 3.0, -2.0), ("q", 2.0, 0.5, 1.5)]
    same = pathway_report(np.ones((4, 2)), np.array([1, 0, 1, 0]), ["p", "q"], ["q"])
    assert same == [("q", 1.0, 1.0, 0.0)]


def test_baseline_path(data, tmp_path, capsys):
    out = tmp_path / "base"
    assert main(["train", "--config", str(data / "data" / "config.json"), "--model", "baseline",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(out / "model.ckpt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1].split()[0] == "Baseline"
    assert len(json.loads(lines[0])["assumptions"]) == 2


def test_diffuse_cache(data, tmp_path):
    d = data / "data"
    args = ["diffuse", "--edges", str(d / "edges.tsv"), "--features", str(d / "targets.tsv"),
            "--alphas", "0.2,0.5", "--out", str(tmp_path / "c")]
    assert main(args) == 0
    assert len(list((tmp_path / "c").glob("*.npy"))) == 120
    assert (tmp_path / "c" / "diffuse_config.json").exists()


def test_exit_codes(data, tmp_path):
    d = data / "data"
    assert main(["train", "--edges", str(tmp_path / "missing.tsv")]) == 2
    assert main(["diffuse", "--edges", str(d / "edges.tsv"), "--features", str(d / "targets.tsv"),
                 "--alphas", "2.0", "--out", str(tmp_path / "c")]) == 2
    # a tiny iteration cap cannot reach the tolerance: numerical failure
    assert main(["diffuse", "--edges", str(d / "edges.tsv"), "--features", str(d / "targets.tsv"),
                 "--alphas", "0.1", "--set", "max_iter=2", "--out", str(tmp_path / "c2")]) == 3
    rejected = tmp_path / "rejected"
    assert main(["train", "--config", str(d / "config.json"), "--set", "train.gamma=3", "--out", str(rejected)]) == 2
    assert not rejected.exists()
    assert main(["train", "--config", str(d / "config.json"), "--set", "nonsense=1"]) == 2


def test_deterministic_runs_are_byte_identical(data, tmp_path):
    def run(name):
        out = tmp_path / name
        base = [sys.executable, "-m", "gaa"]
        subprocess.run(base + ["train", "--config", str(data / "data" / "config.json"), "--out", str(out),
                               "--deterministic", *FAST], check=True, capture_output=True)
        subprocess.run(base + ["predict", "--checkpoint", str(out / "model.ckpt"), "--out", str(out / "p.tsv"),
                               "--deterministic"], check=True, capture_output=True)
        return out

    a, b = run("a"), run("b")
    for name in ("train_log.jsonl", "model.ckpt", "p.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
