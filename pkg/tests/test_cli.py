import csv
import json
import subprocess
import sys
import time

import pytest

from gclviews import cli
from gclviews.tensor import load_checkpoint

FAST = ["--set", "hidden=16", "--set", "layers=2", "--set", "gen_hidden=16", "--set", "gen_layers=2",
        "--set", "epochs=3", "--set", "batch_size=8", "--set", "probe_epochs=50"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    t0 = time.perf_counter()
    rc = cli.main(["train", "--dataset", "toy", "--out", str(out), "--folds", "4", "--seed", "0", *FAST])
    return rc, out, time.perf_counter() - t0


def _first_ckpt(out):
    return sorted((out / "checkpoints").glob("*.ckpt"))[0]


def test_train_toy_outputs(trained):
    rc, out, seconds = trained
    assert rc == cli.EXIT_OK and seconds < 60
    lines = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert lines[0]["type"] == "header" and lines[0]["config"]["epochs"] == 3
    assert lines[0]["notes"] and lines[0]["backend"] in ("cython", "python")
    runs = [l for l in lines if l.get("type") == "run"]
    assert len(runs) == 4 and all("test_acc" in r for r in runs)
    epochs = [l for l in lines if "epoch" in l and l.get("type") != "run"]
    assert epochs and all(e["l_cl"] is not None and e["l_cls"] is not None for e in epochs)
    assert lines[-1]["type"] == "summary"
    assert (out / "config.txt").read_text().count("epochs = 3") == 1
    assert json.loads((out / "summary.json").read_text())["config"]["hidden"] == 16
    assert len(list((out / "checkpoints").glob("*.ckpt"))) == 4


def test_checkpoint_carries_config(trained):
    _, out, _ = trained
    state, meta = load_checkpoint(_first_ckpt(out))
    assert meta["config"]["hidden"] == 16 and meta["arch"]["in_dim"] == 7
    assert {k.split(".")[0] for k in state} >= {"encoder", "gen1", "gen2", "cls"}


def test_eval(trained, tmp_path, capsys):
    _, out, _ = trained
    target = tmp_path / "eval.json"
    assert cli.main(["eval", "--checkpoint", str(_first_ckpt(out)), "--dataset", "toy", "--out", str(target)]) == 0
    rec = json.loads(target.read_text())
    assert 0 <= rec["all_acc"] <= 1 and "test_acc" in rec and rec["config"]["epochs"] == 3


def test_export_views_counts_and_config(trained, tmp_path):
    _, out, _ = trained
    dest = tmp_path / "views"
    assert cli.main(["export-views", "--checkpoint", str(_first_ckpt(out)), "--dataset", "toy",
                     "--n-samples", "3", "--out", str(dest)]) == 0
    files = sorted(dest.iterdir())
    assert len(files) == 3 * 3 * 2
    for f in files:
        text = f.read_text()
        if f.suffix == ".json":
            doc = json.loads(text)
            assert doc["config"]["hidden"] == 16
            if "view" in f.name:
                assert set(doc["choice_counts"]) == {"drop", "keep", "mask"}
        else:
            assert text.startswith("// config:") or "// config:" in text
            assert "digraph" in text or "graph" in text


def test_export_embeddings(trained, tmp_path):
    _, out, _ = trained
    dest = tmp_path / "emb.csv"
    assert cli.main(["export-embeddings", "--checkpoint", str(_first_ckpt(out)), "--dataset", "toy",
                     "--out", str(dest)]) == 0
    lines = dest.read_text().splitlines()
    assert lines[0].startswith("# ") and json.loads(lines[0][2:])["config"]["hidden"] == 16
    rows = list(csv.reader(lines[1:]))
    assert rows[0][:2] == ["graph_id", "label"] and len(rows) == 17
    assert len(rows[0]) == 2 + 16


def test_ablate_csv(tmp_path):
    rc = cli.main(["ablate", "--dataset", "toy", "--out", str(tmp_path), "--folds", "4", "--seed", "0", *FAST,
                   "--set", "ablation_ratios=0,0.2"])
    assert rc == 0
    text = (tmp_path / "ablation.csv").read_text().splitlines()
    assert any(l.startswith("# config:") for l in text)
    rows = list(csv.reader(l for l in text if not l.startswith("#")))
    assert rows[0] == ["dataset", "aug_ratio", "node_dropping", "edge_perturbation", "subgraph", "attribute_masking"]
    assert [r[1] for r in rows[1:]] == ["baseline", "0", "0.2"]
    assert rows[2][2:] == rows[1][2:]


def test_unsup_protocol(tmp_path):
    rc = cli.main(["train", "--dataset", "toy", "--out", str(tmp_path), "--protocol", "unsup", "--folds", "4",
                   "--seed", "0", *FAST])
    assert rc == 0
    runs = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert all(r["encoder_frozen"] for r in runs if r.get("type") == "run")


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--bogus"],
    ["train", "--dataset", "toy", "--set", "nope=1"],
    ["train", "--dataset", "toy", "--set", "epochs"],
    ["train", "--dataset", "toy", "--strategy", "magic"],
    ["train", "--dataset", "toy", "--set", "lr=-1"],
])
def test_usage_errors_exit_1(argv, tmp_path):
    assert cli.main(argv + (["--out", str(tmp_path)] if argv else [])) == cli.EXIT_USAGE


def test_bad_config_file_exit_1(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs = 3\nepochs = 4\n")
    assert cli.main(["train", "--dataset", "toy", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_data_errors_exit_2(tmp_path, trained):
    assert cli.main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path)]) == cli.EXIT_DATA
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--dataset", "toy"]) == cli.EXIT_DATA
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert cli.main(["eval", "--checkpoint", str(bad), "--dataset", "toy"]) == cli.EXIT_DATA
    _, out, _ = trained
    assert cli.main(["eval", "--checkpoint", str(_first_ckpt(out)), "--dataset", "data/MUTAG"]) in (cli.EXIT_OK,
                                                                                                  cli.EXIT_DATA)


def test_feature_width_mismatch_exit_2(trained, tmp_path):
    _, out, _ = trained
    other = tmp_path / "g.json"
    other.write_text(json.dumps({"graphs": [{"num_nodes": 1, "node_features": [[1.0, 0.0]], "edges": [], "label": 0}]}))
    assert cli.main(["eval", "--checkpoint", str(_first_ckpt(out)), "--dataset", str(other)]) == cli.EXIT_DATA


def test_selftest_exit_codes(monkeypatch):
    monkeypatch.setattr(cli, "run_selftest", lambda trials: False)
    assert cli.main(["selftest"]) == cli.EXIT_SELFTEST
    monkeypatch.setattr(cli, "run_selftest", lambda trials: True)
    assert cli.main(["selftest", "--trials", "2"]) == cli.EXIT_OK


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "gclviews.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "export-views" in r.stdout
