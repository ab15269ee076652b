import csv
import json

import numpy as np
import pytest

from jiadf.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from jiadf.utils.checkpoint import load_checkpoint

SMALL_CONFIG = """
model:
  enc_hidden: 5
  d_img: 6
  d_meta: 6
  d_joint: 8
  heads: 2
  head_dim: 3
  gate_hidden: 8
train:
  epochs: 2
  lr: 0.01
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "data.csv"
    code = main(["gen-data", "--out", str(path), "--classes", "3", "--counts", "30,30,30", "--dc", "4",
                 "--dd", "4", "--dm", "3", "--snr", "4", "--seed", "1"])
    assert code == EXIT_OK
    return str(path)


def _rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_gen_data_counts_and_determinism(tmp_path, capsys):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (first, second):
        assert main(["gen-data", "--out", str(path), "--classes", "3", "--counts", "400,100,20",
                     "--seed", "7"]) == EXIT_OK
    rows = _rows(first)
    assert len(rows) == 520
    labels = [int(r["label"]) for r in rows]
    assert [labels.count(k) for k in range(3)] == [400, 100, 20]
    assert first.read_bytes() == second.read_bytes()
    assert "Wrote 520 records" in capsys.readouterr().out


def test_gen_data_rejects_empty_class(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "x.csv"), "--classes", "3", "--counts", "0,1,1"]) == EXIT_USAGE


def test_gen_data_preset(tmp_path):
    path = tmp_path / "milk.csv"
    assert main(["gen-data", "--out", str(path), "--preset", "milk10k", "--scale", "0.02", "--dc", "2",
                 "--dd", "2", "--dm", "2"]) == EXIT_OK
    assert len({r["label"] for r in _rows(path)}) == 11


def test_gradcheck_passes_and_fails_on_impossible_tolerance(capsys):
    assert main(["gradcheck", "--seed", "0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "gate" in out
    assert main(["gradcheck", "--seed", "0", "--tol", "1e-30"]) == EXIT_NUMERIC


def test_train_zero_epochs(tmp_path, config_file, data_file):
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out), "--epochs", "0"]) == EXIT_OK
    assert (out / "best" / "manifest.json").exists()
    assert (out / "last" / "params.bin").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["epochs"] == []
    assert report["best_epoch"] is None


def test_train_then_evaluate(tmp_path, config_file, data_file):
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert [e["epoch"] for e in report["epochs"]] == [1, 2]

    metrics_path = tmp_path / "metrics.json"
    assert main(["eval", "--ckpt", str(out / "best"), "--data", data_file, "--report", str(metrics_path),
                 "--dump-posteriors"]) == EXIT_OK
    document = json.loads(metrics_path.read_text())
    assert document["split"] == "test"
    assert "AUC, Sens > 80%" in document["panel"]
    assert len(document["reliability"]) == 15
    assert len(document["posteriors"]) == document["n_samples"] == 18
    for row in document["posteriors"]:
        assert sum(row["posterior"]) == pytest.approx(1.0, abs=1e-9)
        assert row["prediction"] == int(np.argmax(row["posterior"]))


def test_evaluation_is_reproducible(tmp_path, config_file, data_file, capsys):
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out), "--epochs", "1"]) == EXIT_OK
    capsys.readouterr()
    documents = []
    for _ in range(2):
        assert main(["eval", "--ckpt", str(out / "last"), "--data", data_file]) == EXIT_OK
        document = json.loads(capsys.readouterr().out)
        documents.append(document)
    assert documents[0] == documents[1]


def test_resume_continues_history(tmp_path, config_file, data_file):
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out), "--epochs", "1"]) == EXIT_OK
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out),
                 "--resume", str(out / "last"), "--epochs", "2"]) == EXIT_OK
    last = load_checkpoint(out / "last")
    assert last.manifest.epoch == 2
    assert [r.epoch for r in last.history] == [1, 2]


def test_eval_without_test_split_is_a_data_error(tmp_path, config_file):
    data = tmp_path / "no_test.csv"
    assert main(["gen-data", "--out", str(data), "--classes", "2", "--counts", "20,20", "--dc", "2", "--dd", "2",
                 "--dm", "2", "--test-fraction", "0"]) == EXIT_OK
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", str(data), "--out", str(out), "--epochs", "0"]) == EXIT_OK
    assert main(["eval", "--ckpt", str(out / "best"), "--data", str(data)]) == EXIT_DATA


def test_eval_rejects_mismatched_widths(tmp_path, config_file, data_file):
    out = tmp_path / "run"
    assert main(["--config", config_file, "train", "--data", data_file, "--out", str(out), "--epochs", "0"]) == EXIT_OK
    other = tmp_path / "wide.csv"
    assert main(["gen-data", "--out", str(other), "--classes", "3", "--counts", "5,5,5", "--dc", "5", "--dd", "4",
                 "--dm", "3"]) == EXIT_OK
    assert main(["eval", "--ckpt", str(out / "best"), "--data", str(other)]) == EXIT_DATA


def test_ablate_mmfa_suite(tmp_path, config_file, data_file):
    results = tmp_path / "ablation.csv"
    assert main(["--config", config_file, "ablate", "--suite", "mmfa", "--data", data_file, "--out", str(results),
                 "--epochs", "1"]) == EXIT_OK
    rows = _rows(results)
    assert [r["config"] for r in rows] == ["skip-only", "attention-only", "full"]
    assert all(r["split"] == "test" for r in rows)
    assert "macro_auc_sens80" in rows[0]


def test_schema(capsys):
    assert main(["schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "best_val_macro_f1" in schema["properties"]


def test_usage_errors_exit_one(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["bogus"])
    assert excinfo.value.code == EXIT_USAGE
    assert main(["--config", str(tmp_path / "absent.yaml"), "schema"]) == EXIT_USAGE
