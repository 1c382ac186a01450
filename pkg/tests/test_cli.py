import csv
import json

import pytest

from conftest import run_cli
from selfonn_ecg import metrics, wfdbio

DS2 = [[43868, 266, 43], [269, 1529, 36], [241, 36, 2941]]


def write_confusion(path, counts=DS2):
    path.write_text(metrics.confusion_to_csv(metrics.ConfusionMatrix3(counts)))
    return path


def test_dry_run_parameter_count(capsys):
    assert run_cli("train", "--dry-run") == 0
    assert "trainable parameters: 23619" in capsys.readouterr().out


def test_confusion_evaluation(tmp_path, capsys):
    cm = write_confusion(tmp_path / "cm.csv")
    assert run_cli("evaluate", "--confusion", cm, "--out", tmp_path / "out") == 0
    assert "98.19" in capsys.readouterr().out
    data = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert data["rounded"]["classes"]["S"]["spe"] == 99.36


def test_bad_confusion_is_usage_error(tmp_path):
    p = tmp_path / "cm.csv"
    p.write_text("truth\\pred,N,S,V\nN,1,2\n")
    assert run_cli("evaluate", "--confusion", p) == 2
    assert run_cli("evaluate", "--confusion", tmp_path / "missing.csv") == 2


def test_evaluate_needs_one_source(tmp_path):
    assert run_cli("evaluate") == 2


def test_force_guard(tmp_path):
    cm = write_confusion(tmp_path / "cm.csv")
    out = tmp_path / "out"
    assert run_cli("evaluate", "--confusion", cm, "--out", out) == 0
    assert run_cli("evaluate", "--confusion", cm, "--out", out) == 2
    assert run_cli("evaluate", "--confusion", cm, "--out", out, "--force") == 0


def test_missing_data_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("SELFONN_ECG_DATA", raising=False)
    assert run_cli("ingest", "--data-dir", tmp_path / "nope") == 2
    assert run_cli("ingest", "--data-dir", tmp_path) == 2  # empty directory


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": -1}}))
    assert run_cli("train", "--dry-run", "--config", p) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 2


def test_synth_ingest_preprocess_augment(tmp_path, capsys):
    data = tmp_path / "data"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_records": 3, "beats_per_record": 30}}))
    assert run_cli("synth", "--config", cfg, "--out", data, "--seed", 2) == 0
    assert run_cli("ingest", "--data-dir", data, "--out", tmp_path / "ingest.json") == 0
    assert "records: 3" in capsys.readouterr().out
    ds = tmp_path / "ds"
    assert run_cli("preprocess", "--data-dir", data, "--split", data / "split.json", "--out", ds) == 0
    assert run_cli("augment", "--data-dir", data, "--dataset", ds) == 0
    assert json.loads((ds / "manifest.json").read_text())["augmentation"] is not None


def test_training_run_outputs(synthetic_runs):
    run = synthetic_runs[0]
    for name in ("config.json", "folds.json", "history.csv", "model.json", "model.bin"):
        assert (run / name).exists(), name
    for name in ("predictions.csv", "roc_S.csv", "roc_V.csv", "confusion.csv", "metrics.json"):
        assert (run / "eval" / name).exists(), name
    folds = json.loads((run / "folds.json").read_text())
    flat = [p for f in folds["folds"] for p in f]
    assert len(flat) == len(set(flat))


def test_report(synthetic_runs, tmp_path):
    out = tmp_path / "fig"
    assert run_cli("report", "--run", synthetic_runs[0], "--out", out) == 0
    for name in ("confusion.png", "roc.png", "history.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert {"class", "metric", "value"} <= set(rows[0])


def test_report_missing_run(tmp_path):
    assert run_cli("report", "--run", tmp_path) != 0


def test_predict(synthetic_runs, tmp_path):
    run = synthetic_runs[0]
    rec = run / "data" / "s024"
    out = tmp_path / "pred.csv"
    assert run_cli("predict", "--checkpoint", run / "model.json", "--record", rec, "--out", out) == 0
    rows = list(csv.DictReader(open(out)))
    assert rows and {"sample_index", "pred", "score_N", "score_S", "score_V", "annotation"} <= set(rows[0])
    agree = sum(r["pred"] == r["annotation"] for r in rows) / len(rows)
    assert agree > 0.9
    peaks = tmp_path / "peaks.csv"
    all_peaks = [str(e.sample_index) for e in wfdbio.read_record(rec).annotations]
    peaks.write_text("sample\n" + "\n".join(all_peaks) + "\n")
    out2 = tmp_path / "pred2.csv"
    assert run_cli("predict", "--checkpoint", run / "model.json", "--record", rec,
                   "--peaks", peaks, "--out", out2) == 0
    assert [r["pred"] for r in csv.DictReader(open(out2))] == [r["pred"] for r in rows]
