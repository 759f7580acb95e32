import csv
import json
import time

import pytest

from flowsense import __version__
from flowsense import flowgraph as fg
from flowsense.cli import default_config_text, main, sha256_file

TINY = """\
duration_h = 1.5
warmup_h = 2
hidden_dim = 8
embed_dim = 8
tf_model_dim = 8
tf_ff_dim = 8
tf_layers = 1
tf_heads = 2
head_hidden = 8
max_epochs = 5
patience = 5
n_seeds = 2
n_grid = 0,1,11
pretrain_epochs = 3
finetune_epochs = 2
finetune_patience = 2
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    for variant, seed in (("A", 1), ("B", 2)):
        rc = main(["simulate", variant, "--out", str(root / f"{variant}.json"), "--config", str(cfg),
                   "--seed", str(seed), "--quiet"])
        assert rc == 0
    return root, cfg


@pytest.fixture(scope="module")
def experiment(work):
    root, cfg = work
    out = root / "exp"
    rc = main(["experiment", str(root / "A.json"), str(root / "B.json"), "--config", str(cfg), "--out", str(out), "--quiet"])
    assert rc == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_print_config(capsys):
    assert main(["--print-config"]) == 0
    text = capsys.readouterr().out
    assert text == default_config_text()
    for key in ("duration_h = 80.0", "lookback = 5", "n_seeds = 9", "n_grid = 0,1,11,21,31,41,51", "finetune_freeze = gnn"):
        assert key in text


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["simulate", "C", "--out", "x.json"],
    ["simulate", "A"],
    ["train", "/nonexistent/data.json", "--out", "o"],
    ["experiment", "/nonexistent/a.json", "/nonexistent/b.json", "--out", "o"],
    ["report", "/nonexistent/report"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 3\n")
    assert main(["simulate", "A", "--out", str(tmp_path / "a.json"), "--config", str(bad)]) == 2
    bad.write_text("duration_h = soon\n")
    assert main(["simulate", "A", "--out", str(tmp_path / "a.json"), "--config", str(bad)]) == 2
    bad.write_text("tf_model_dim = 10\ntf_heads = 4\n")
    assert main(["train", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "o"), "--config", str(bad)]) == 2


def test_runtime_failure_exits_1(tmp_path):
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert main(["train", str(junk), "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_simulate_outputs(work):
    root, cfg = work
    d = fg.load_dataset(root / "A.json")
    assert len(d.frames) == 150 and d.meta["variant"] == "A"
    manifest = json.loads((root / "A.json.manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["seeds"] == [1]
    assert manifest["outputs"]["A.json"] == sha256_file(root / "A.json")
    assert manifest["tool_version"] == __version__


def test_simulate_is_byte_identical(work, tmp_path):
    root, cfg = work
    again = tmp_path / "A.json"
    assert main(["simulate", "A", "--out", str(again), "--config", str(cfg), "--seed", "1", "--quiet",
                 "--csv", str(tmp_path / "A.csv")]) == 0
    assert again.read_bytes() == (root / "A.json").read_bytes()
    assert len(_rows(tmp_path / "A.csv")) == 151


def test_train_smoke(work):
    root, cfg = work
    out = root / "train"
    start = time.perf_counter()
    assert main(["train", str(root / "A.json"), "--out", str(out), "--config", str(cfg), "--quiet"]) == 0
    assert time.perf_counter() - start < 60
    rows = _rows(out / "history.csv")
    assert rows[0] == ["epoch", "train_loss", "val_rmse"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4, 5]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["inputs"]["dataset"] == sha256_file(root / "A.json")
    assert manifest["outputs"]["checkpoint.fsta"] == sha256_file(out / "checkpoint.fsta")


def test_experiment_outputs(experiment):
    raw = _rows(experiment / "raw.csv")
    assert raw[0] == ["n", "seed", "arm", "rmse"] and len(raw) - 1 == 3 * 2 * 2
    assert len(_rows(experiment / "aggregate.csv")) - 1 == 3
    manifest = json.loads((experiment / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1]
    for name in ("raw.csv", "aggregate.csv", "series.csv", "summary.json"):
        assert manifest["outputs"][name] == sha256_file(experiment / name)


def test_experiment_resumes(work, experiment):
    root, cfg = work
    before = (experiment / "raw.csv").read_bytes()
    (experiment / "cells" / "n001_seed0.json").unlink()
    rc = main(["experiment", str(root / "A.json"), str(root / "B.json"), "--config", str(cfg),
               "--out", str(experiment), "--quiet"])
    assert rc == 0 and (experiment / "raw.csv").read_bytes() == before


def test_report(experiment, tmp_path):
    a, b = tmp_path / "r1", tmp_path / "r2"
    assert main(["report", str(experiment), "--out", str(a), "--quiet"]) == 0
    assert main(["report", str(experiment), "--out", str(b), "--quiet"]) == 0
    for name in ("curves.csv", "reduction_table.csv", "series.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    curves = _rows(a / "curves.csv")
    assert curves[1][0] == "0"
    table = _rows(a / "reduction_table.csv")
    assert table[0] == ["aggregation", "n=1", "n=11"]
    assert [r[0] for r in table[1:]] == ["per_seed_average", "of_means"]


def test_report_lists_missing_cells(experiment, tmp_path, capsys):
    broken = tmp_path / "broken"
    broken.mkdir()
    for name in ("summary.json", "series.csv"):
        (broken / name).write_bytes((experiment / name).read_bytes())
    lines = (experiment / "raw.csv").read_text().splitlines()
    (broken / "raw.csv").write_text("\n".join(l for l in lines if not l.startswith("11,1,")) + "\n")
    assert main(["report", str(broken)]) == 1
    err = capsys.readouterr().err
    assert "n=11 seed=1 arm=pretrained" in err and "n=11 seed=1 arm=scratch" in err
