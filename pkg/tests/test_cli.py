import csv
import hashlib
import json
from pathlib import Path

import pytest

from mdfnet.cli import main
from mdfnet.data import read_manifest
from mdfnet.metrics import write_detections
from mdfnet.structures import Detection

SMALL_SYNTH = {"n_train": 12, "n_test": 4, "image_size": 32, "min_size": 6, "max_size": 12}
SMALL_TRAIN = {"epochs": 1, "val_fraction": 0.25,
               "model": {"image_size": 32, "spatialisation_layers": 5, "spatialisation_channels": 4}}


def digest(d: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(d)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.json").write_text(json.dumps(SMALL_SYNTH))
    (root / "train.json").write_text(json.dumps(SMALL_TRAIN))
    assert main(["generate", "--config", str(root / "synth.json"), "--seed", "3", "--out", str(root / "data")]) == 0
    return root


def test_generate_default_is_1000_and_repeatable(tmp_path):
    assert main(["generate", "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert len(read_manifest(tmp_path / "a" / "manifest.jsonl")) == 1000
    assert main(["generate", "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_generate_bad_path_fails(tmp_path, capsys):
    (tmp_path / "file").write_text("x")
    assert main(["generate", "--out", str(tmp_path / "file" / "sub")]) != 0
    assert "error" in capsys.readouterr().err


def test_generate_bad_config_fails(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"kappa": 2.0}))
    assert main(["generate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) != 0
    (tmp_path / "c.json").write_text(json.dumps({"colour": "red"}))
    assert main(["generate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) != 0


def test_join_reproduces_generated_manifest(small, tmp_path):
    assert main(["join", "--data", str(small / "data"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "manifest.jsonl").read_bytes() == (small / "data" / "manifest.jsonl").read_bytes()
    assert (tmp_path / "exclusions.csv").read_text() == "dicom_id,reason\n"


def test_join_missing_directory_fails(tmp_path):
    assert main(["join", "--data", str(tmp_path / "nope")]) != 0


def _test_split_truth(small):
    return [i for i in read_manifest(small / "data" / "manifest.jsonl") if i.split == "test"]


def test_evaluate_oracle_and_empty_predictions(small, tmp_path):
    insts = _test_split_truth(small)
    oracle = [Detection(b.label, 1.0, b.x, b.y, b.w, b.h, image_id=i.keys.dicom_id) for i in insts for b in i.boxes]
    write_detections(oracle, tmp_path / "oracle.csv")
    assert main(["evaluate", "--data", str(small / "data"), "--predictions", str(tmp_path / "oracle.csv"),
                 "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["mean_ap"] == 1.0 and rep["mean_ar"] == 1.0
    assert len(rep["sweep"]) == 9
    assert rep["config"]["score_thresh"] == 0.05 and rep["config"]["iobb_thresh"] == 0.5
    with open(tmp_path / "o" / "report_sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 9

    write_detections([], tmp_path / "empty.csv")
    assert main(["evaluate", "--data", str(small / "data"), "--predictions", str(tmp_path / "empty.csv"),
                 "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["mean_ap"] == 0.0
    assert sum(c["fn"] for c in rep["classes"]) == sum(len(i.boxes) for i in insts)


def test_evaluate_needs_exactly_one_source(small, tmp_path):
    assert main(["evaluate", "--data", str(small / "data"), "--out", str(tmp_path)]) != 0


def test_train_then_evaluate_checkpoint(small, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--data", str(small / "data"), "--config", str(small / "train.json"), "--mode", "mdf",
                 "--seed", "5", "--out", str(out)]) == 0
    for name in ("best.ckpt", "metrics.csv", "val_report.json", "val_report.csv", "train_config.json"):
        assert (out / name).exists(), name
    cfg = json.loads((out / "val_report.json").read_text())["config"]
    assert cfg["train"]["seed"] == 5 and cfg["train"]["model"]["mode"] == "mdf"
    assert main(["evaluate", "--data", str(small / "data"), "--checkpoint", str(out / "best.ckpt"),
                 "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert rep["config"]["model"]["mode"] == "mdf" and rep["config"]["train"]["seed"] == 5


def test_evaluate_rejects_mismatched_image_size(small, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--data", str(small / "data"), "--config", str(small / "train.json"), "--mode",
                 "baseline", "--out", str(out)]) == 0
    (tmp_path / "s.json").write_text(json.dumps({**SMALL_SYNTH, "image_size": 16, "min_size": 4, "max_size": 8}))
    assert main(["generate", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path / "d16")]) == 0
    assert main(["evaluate", "--data", str(tmp_path / "d16"), "--checkpoint", str(out / "best.ckpt"),
                 "--out", str(tmp_path / "x")]) != 0


def test_baseline_with_feature_subset_is_rejected(small, tmp_path):
    assert main(["train", "--data", str(small / "data"), "--config", str(small / "train.json"), "--mode",
                 "baseline", "--features", "gender", "--out", str(tmp_path)]) != 0


def test_ablate_fusion_four_rows(small, tmp_path):
    assert main(["ablate-fusion", "--data", str(small / "data"), "--config", str(small / "train.json"),
                 "--max-steps", "2", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "ablate_fusion.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["sum", "concat-linear", "concat-conv", "hadamard"]
    table = json.loads((tmp_path / "ablate_fusion.json").read_text())
    assert set(table["config"]["train"]) == {"sum", "concat-linear", "concat-conv", "hadamard"}


def test_ablate_features_three_rows(small, tmp_path):
    assert main(["ablate-features", "--data", str(small / "data"), "--config", str(small / "train.json"),
                 "--max-steps", "2", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "ablate_features.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["gender+heartrate", "gender+resprate", "gender+temperature"]


def test_singleton_ablation_matches_train_plus_evaluate(small, tmp_path):
    common = ["--data", str(small / "data"), "--config", str(small / "train.json"), "--seed", "9"]
    assert main(["ablate-fusion", *common, "--methods", "hadamard", "--out", str(tmp_path / "abl")]) == 0
    assert main(["train", *common, "--fusion", "hadamard", "--out", str(tmp_path / "tr")]) == 0
    assert main(["evaluate", "--data", str(small / "data"), "--checkpoint", str(tmp_path / "tr" / "best.ckpt"),
                 "--out", str(tmp_path / "ev")]) == 0
    with open(tmp_path / "abl" / "ablate_fusion.csv") as fh:
        row = next(csv.DictReader(fh))
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert float(row["mean_ap"]) == pytest.approx(rep["mean_ap"], abs=1e-6)
    assert float(row["mean_ar"]) == pytest.approx(rep["mean_ar"], abs=1e-6)
    assert (tmp_path / "abl" / "hadamard" / "best.ckpt").read_bytes() == (tmp_path / "tr" / "best.ckpt").read_bytes()


def test_report_collects_tables(small, tmp_path):
    insts = _test_split_truth(small)
    oracle = [Detection(b.label, 1.0, b.x, b.y, b.w, b.h, image_id=i.keys.dicom_id) for i in insts for b in i.boxes]
    write_detections(oracle, tmp_path / "oracle.csv")
    write_detections([], tmp_path / "empty.csv")
    for name in ("oracle", "empty"):
        assert main(["evaluate", "--data", str(small / "data"), "--predictions", str(tmp_path / f"{name}.csv"),
                     "--out", str(tmp_path / name)]) == 0
    assert main(["report", str(tmp_path / "oracle"), str(tmp_path / "empty" / "report.json"),
                 "--out", str(tmp_path / "sum")]) == 0
    with open(tmp_path / "sum" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["oracle", "report"]
    assert float(rows[0]["mean_ap"]) == 1.0 and float(rows[1]["mean_ap"]) == 0.0
    assert main(["report", str(tmp_path / "missing"), "--out", str(tmp_path / "s2")]) != 0
