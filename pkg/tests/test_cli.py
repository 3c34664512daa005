"""Command-line behavior: the full subcommand chain on a small corpus,
exit-code mapping, artifact metadata, and determinism across reruns and
thread counts.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from ossmm_kit import features, ml
from ossmm_kit.cli import main

SYNTH_CONFIG = '{"n_nights": 6, "epochs_range": [36, 44]}'
CV_GRID = ('{"grid": [{"kind": "random_forest", '
           '"params": {"n_estimators": 20, "max_depth": 8}}, '
           '{"kind": "svm"}]}')
SEED = "5"


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("clicorpus") / "corpus"
    assert main(["synth", "--out", str(root), "--seed", SEED,
                 "--config", SYNTH_CONFIG]) == 0
    return root


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("artifacts")
    c = str(corpus_dir)
    o = str(out)
    assert main(["extract", "--corpus", c, "--out", o, "--seed", SEED]) == 0
    assert main(["cv", "--corpus", c, "--out", o, "--seed", SEED,
                 "--folds", "3", "--config", CV_GRID]) == 0
    assert main(["train", "--corpus", c, "--out", o, "--seed", SEED]) == 0
    assert main(["eval", "--corpus", c, "--out", o, "--seed", SEED]) == 0
    return out


# --- global behavior ------------------------------------------------------

def test_version_flag():
    assert main(["--version"]) == 0


def test_no_subcommand_is_usage_error():
    assert main([]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["synth", "--out", "x", "--frobnicate"]) == 2


# --- synth ------------------------------------------------------------------

def test_synth_manifest(corpus_dir):
    manifest = json.loads((corpus_dir / "corpus.manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["n_nights"] == 6
    assert len(manifest["split"]["test_nights"]) == 3
    assert len(manifest["split"]["train_nights"]) == 3


def test_synth_rejects_unknown_config_key(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"),
                 "--config", '{"bogus": 1}']) == 2


def test_synth_rejects_malformed_config(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"),
                 "--config", "{not json"]) == 2


# --- ingest -----------------------------------------------------------------

def test_ingest_prints_census(corpus_dir, capsys):
    assert main(["ingest", "--corpus", str(corpus_dir)]) == 0
    out = capsys.readouterr().out
    assert "night01:" in out and "total:" in out
    assert "240 labels" in out           # 6 nights of 36-44 epochs, seed 5


def test_ingest_report_written(corpus_dir, tmp_path):
    assert main(["ingest", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "ingest_report.json").read_text())
    assert rep["total"]["labels_total"] == 240
    assert rep["total"]["excluded_short"] == 12      # 2 per night
    assert rep["meta"]["tool_version"]
    assert rep["meta"]["input_hashes"]


def test_missing_corpus_is_exit_3(tmp_path):
    assert main(["ingest", "--corpus", str(tmp_path / "nope")]) == 3


# --- extract ----------------------------------------------------------------

def test_extract_artifacts(artifacts):
    csv_path = artifacts / "features.csv"
    assert csv_path.is_file()
    meta = json.loads((artifacts / "features.csv.meta.json").read_text())
    assert meta["seed"] == 5
    assert meta["n_features"] == features.N_FEATURES
    assert meta["n_epochs"] == 225                   # 240 - 12 short - 3 dropout
    assert any(k.endswith("frames.csv") for k in meta["input_hashes"])
    table = features.FeatureTable.read_csv(csv_path)
    assert len(table) == 225


def test_extract_thread_count_does_not_change_bytes(corpus_dir, tmp_path,
                                                    monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("OSSMM_KIT_THREADS", "1")
    assert main(["extract", "--corpus", str(corpus_dir), "--out", str(a),
                 "--seed", SEED]) == 0
    monkeypatch.setenv("OSSMM_KIT_THREADS", "3")
    assert main(["extract", "--corpus", str(corpus_dir), "--out", str(b),
                 "--seed", SEED]) == 0
    assert (a / "features.csv").read_bytes() == (b / "features.csv").read_bytes()


def test_bad_thread_env_is_exit_2(corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("OSSMM_KIT_THREADS", "zero")
    assert main(["extract", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path)]) == 2


# --- cv ---------------------------------------------------------------------

def test_cv_report(artifacts):
    rep = json.loads((artifacts / "cv_report.json").read_text())
    assert rep["k_folds"] == 3
    assert len(rep["train_nights"]) == 3
    assert len(rep["results"]) == 2
    for res in rep["results"]:
        assert len(res["folds"]) == 3
        for fold in res["folds"]:
            assert set(fold["val_nights"]) <= set(rep["train_nights"])
    kinds = {res["config"]["kind"] for res in rep["results"]}
    assert rep["selected"]["kind"] in kinds


def test_cv_without_features_is_exit_3(corpus_dir, tmp_path):
    assert main(["cv", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path / "empty")]) == 3


# --- train ------------------------------------------------------------------

def test_train_uses_cv_selection(artifacts):
    cv_rep = json.loads((artifacts / "cv_report.json").read_text())
    train_rep = json.loads((artifacts / "train_report.json").read_text())
    assert train_rep["config"]["kind"] == cv_rep["selected"]["kind"]
    model = ml.load_model(artifacts / "model.json")
    assert model.kind == train_rep["config"]["kind"]
    saved = json.loads((artifacts / "model.json").read_text())
    assert saved["meta"]["seed"] == 5
    assert saved["meta"]["input_hashes"]


def test_train_rejects_multi_config_grid(corpus_dir, artifacts, tmp_path):
    assert main(["train", "--corpus", str(corpus_dir),
                 "--out", str(artifacts), "--model", str(tmp_path / "m.json"),
                 "--config", CV_GRID]) == 2


# --- eval -------------------------------------------------------------------

def test_eval_report(corpus_dir, artifacts):
    rep = json.loads((artifacts / "eval_report.json").read_text())
    assert rep["test_nights"] == json.loads(
        (corpus_dir / "corpus.manifest.json").read_text())["split"]["test_nights"]
    assert len(rep["confusion_counts"]) == 4
    assert sum(map(sum, rep["confusion_counts"])) == rep["n_epochs"]
    assert 0.0 < rep["accuracy"] <= 1.0
    assert rep["top_importances"] is not None and len(rep["top_importances"]) == 10

    # the chance baseline is recomputable from the test rows themselves
    table = features.FeatureTable.read_csv(artifacts / "features.csv")
    test_rows = table.select_nights(rep["test_nights"])
    _, counts = np.unique(test_rows.stages, return_counts=True)
    p = counts / counts.sum()
    assert math.isclose(rep["baselines"]["stratified_chance"],
                        float(np.sum(p * p)), rel_tol=0, abs_tol=1e-12)
    assert math.isclose(rep["baselines"]["majority"], float(p.max()),
                        rel_tol=0, abs_tol=1e-12)


def test_eval_prints_summary(corpus_dir, artifacts, capsys):
    assert main(["eval", "--corpus", str(corpus_dir),
                 "--out", str(artifacts), "--seed", SEED]) == 0
    out = capsys.readouterr().out
    for needle in ("accuracy:", "macro F1:", "baselines:", "confusion counts",
                   "top-10 feature importances"):
        assert needle in out, needle


def test_eval_without_model_is_exit_3(corpus_dir, artifacts, tmp_path):
    out = tmp_path / "nomodel"
    out.mkdir()
    (out / "features.csv").write_bytes(
        (artifacts / "features.csv").read_bytes())
    assert main(["eval", "--corpus", str(corpus_dir), "--out", str(out)]) == 3


# --- simulate ---------------------------------------------------------------

def test_simulate_streams_jsonlines(corpus_dir, artifacts, tmp_path, capsys):
    night = json.loads((corpus_dir / "corpus.manifest.json").read_text()
                       )["split"]["test_nights"][0]
    assert main(["simulate", "--corpus", str(corpus_dir), "--night", night,
                 "--model", str(artifacts / "model.json"),
                 "--out", str(tmp_path)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    events = [json.loads(l) for l in lines]
    assert {"epoch", "stage", "qualified"} <= set(events[0])
    assert events[0]["qualified"] is False and events[0]["stage"] is None
    assert events[-1]["qualified"] is False           # trimmed tail window
    for ev in events:
        if "trigger" in ev:
            assert ev["stage"] == "REM" and ev["qualified"]
    rep = json.loads((tmp_path / f"simulate_{night}.json").read_text())
    assert rep["n_epochs"] == len(events)
    assert rep["frames"]["fed"] == (rep["frames"]["emitted"]
                                    + rep["frames"]["dropped"])


def test_simulate_unknown_night_is_exit_3(corpus_dir, artifacts):
    assert main(["simulate", "--corpus", str(corpus_dir), "--night", "nope",
                 "--model", str(artifacts / "model.json")]) == 3


# --- inspect ----------------------------------------------------------------

def test_inspect_exports(corpus_dir, tmp_path, capsys):
    assert main(["inspect", "--corpus", str(corpus_dir), "--night", "night03",
                 "--epoch", "5", "--out", str(tmp_path)]) == 0
    stem = "inspect_night03_epoch005"
    ts = (tmp_path / f"{stem}_timeseries.csv").read_text().splitlines()
    assert ts[0] == "t_ms,eog,ppg,ax,ay,az,gx,gy,gz"
    assert len(ts) == 7501                            # header + full epoch
    psd = (tmp_path / f"{stem}_psd.csv").read_text().splitlines()
    assert psd[0] == "freq_hz,eog_power,ppg_power"
    spec = (tmp_path / f"{stem}_spectrogram.csv").read_text().splitlines()
    header = spec[0].split(",")
    assert header[0] == "t_s" and "f_14" in header
    for fname in (f"{stem}_timeseries.csv.meta.json",
                  f"{stem}_psd.csv.meta.json",
                  f"{stem}_spectrogram.csv.meta.json"):
        meta = json.loads((tmp_path / fname).read_text())
        assert meta["night"] == "night03" and meta["epoch_idx"] == 5
        assert meta["input_hashes"]


def test_inspect_epoch_out_of_range_is_exit_2(corpus_dir, tmp_path):
    assert main(["inspect", "--corpus", str(corpus_dir), "--night", "night03",
                 "--epoch", "999", "--out", str(tmp_path)]) == 2


# --- determinism through the CLI ---------------------------------------------

def test_synth_and_extract_rerun_identical(corpus_dir, artifacts, tmp_path):
    corpus2 = tmp_path / "corpus2"
    art2 = tmp_path / "art2"
    assert main(["synth", "--out", str(corpus2), "--seed", SEED,
                 "--config", SYNTH_CONFIG]) == 0
    assert main(["extract", "--corpus", str(corpus2), "--out", str(art2),
                 "--seed", SEED]) == 0
    assert ((art2 / "features.csv").read_bytes()
            == (artifacts / "features.csv").read_bytes())
    assert ((art2 / "features.csv.meta.json").read_bytes()
            == (artifacts / "features.csv.meta.json").read_bytes())
