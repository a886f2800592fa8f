import json
import subprocess
import sys

import numpy as np
import pytest

from threads_desk.cli import main
from threads_desk.store import read_store, write_store

DESK_TOML = """
[generator]
n_samples = 40
patch_dim = 8
bag_min = 3
bag_max = 6
n_genes = 4

[slide]
input_dim = 8
hidden_dim = 8
attention_dim = 8

[genomic]
n_genes = 4
hidden_dim = 16

[train]
batch_size = 8
patches_per_slide = 6
peak_lr = 1e-3
max_epochs = 3
warmup_epochs = 1

[splits]
folds = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "desk.toml").write_text(DESK_TOML)
    assert main(["gen-data", "--config", str(d / "desk.toml"), "--out", str(d / "data"), "--seed", "2"]) == 0
    assert main(["pretrain", "--data", str(d / "data"), "--config", str(d / "desk.toml"),
                 "--out-checkpoints", str(d / "ck"), "--seed", "2"]) == 0
    return d


def test_pretrain_outputs(workspace):
    ck = workspace / "ck"
    for name in ("model_init.npz", "best.npz", "final.npz", "train_log.jsonl", "config.json"):
        assert (ck / name).exists()
    log = [json.loads(line) for line in (ck / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2, 3]
    assert log[0]["rankme"] is None


def test_untrained_embed(workspace):
    out = workspace / "init.thds"
    assert main(["embed", "--checkpoint", str(workspace / "ck" / "model_init.npz"), "--data",
                 str(workspace / "data"), "--out", str(out)]) == 0
    X, meta = read_store(out)
    assert X.shape == (40, 1024) and len(meta["ids"]) == 40
    assert len(meta["labels"]) == 40 and len(meta["survival"]) == 40


@pytest.fixture(scope="module")
def stores(workspace):
    emb, mol = workspace / "emb.thds", workspace / "mol.thds"
    assert main(["embed", "--checkpoint", str(workspace / "ck" / "best.npz"), "--data", str(workspace / "data"),
                 "--out", str(emb), "--molecular-out", str(mol)]) == 0
    return emb, mol


@pytest.mark.parametrize("command", ["probe", "survival", "retrieve"])
def test_eval_commands(workspace, stores, command):
    out = workspace / f"{command}.json"
    assert main([command, "--embeddings", str(stores[0]), "--config", str(workspace / "desk.toml"),
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["scheme"] == "kfold" and "stderr" in res and np.isfinite(res["mean"])


def test_single_split_has_ci(workspace, stores):
    out = workspace / "single.json"
    assert main(["probe", "--embeddings", str(stores[0]), "--spec", "official-single", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["ci"]["n"] == 100 and res["ci"]["lo95"] <= res["ci"]["hi95"]


@pytest.mark.parametrize("task", ["classify", "survival"])
def test_prompt(workspace, stores, task):
    out = workspace / f"prompt_{task}.json"
    assert main(["prompt", "--task", task, "--embeddings", str(stores[0]), "--molecular", str(stores[1]),
                 "--out", str(out)]) == 0
    assert "mean" in json.loads(out.read_text())


def test_cluster(workspace, stores):
    out = workspace / "cluster.json"
    assert main(["cluster", "--embeddings", str(stores[0]), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert -1 <= res["ari"] <= 1 and res["mi"] >= 0


def test_split_fewshot_report(workspace, stores, capsys):
    sp, fs, res = workspace / "splits.json", workspace / "fs.json", workspace / "fs_probe.json"
    assert main(["split", "--embeddings", str(stores[0]), "--spec", "kfold", "--out", str(sp)]) == 0
    assert main(["fewshot", "--splits", str(sp), "--k", "2", "--embeddings", str(stores[0]), "--out", str(fs)]) == 0
    shots = json.loads(fs.read_text())
    assert all(len(s["train"]) == 8 for s in shots)
    assert main(["probe", "--embeddings", str(stores[0]), "--splits", str(fs), "--out", str(res)]) == 0
    assert main(["report", "--results", str(res), str(workspace / "cluster.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("task\tscheme") and len(lines) == 3


def test_missing_labels_exit_2(tmp_path, capsys):
    store = tmp_path / "nolabels.thds"
    write_store(store, np.zeros((4, 3)), {"ids": list("abcd")})
    assert main(["probe", "--embeddings", str(store), "--out", str(tmp_path / "r.json")]) == 2
    assert "labels missing" in capsys.readouterr().err
    assert not (tmp_path / "r.json").exists()


def test_validation_errors_exit_2(workspace, tmp_path):
    assert main(["probe", "--embeddings", str(tmp_path / "absent.thds"), "--out", str(tmp_path / "r.json")]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--set", "generator.bogus=1"]) == 2
    assert main(["pretrain", "--data", str(workspace / "data"), "--out-checkpoints", str(tmp_path / "ck")]) == 2


def test_runtime_error_exit_1(workspace, tmp_path):
    bad = tmp_path / "broken.npz"
    bad.write_bytes(b"not a zip")
    assert main(["embed", "--checkpoint", str(bad), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "e.thds")]) == 1


def test_thread_cap_env(workspace, stores, monkeypatch):
    monkeypatch.setenv("THREADS_DESK_THREADS", "1")
    assert main(["cluster", "--embeddings", str(stores[0]), "--out", str(workspace / "c1.json")]) == 0
    monkeypatch.setenv("THREADS_DESK_THREADS", "zero")
    assert main(["cluster", "--embeddings", str(stores[0]), "--out", str(workspace / "c2.json")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "threads_desk", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout
