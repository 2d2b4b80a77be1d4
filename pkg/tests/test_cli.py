import argparse
import csv
import json

import pytest

from structunc.cli import main, read_config_file, resolve_settings
from structunc.pipeline import ConfigError


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ph")
    rc = main([
        "phantom", "--out-dir", str(root), "--n-patients", "4", "--shape", "32", "32", "32",
        "--n-lesions", "3", "--radius", "2", "3", "--members", "3", "--suffix", ".vol",
    ])
    assert rc == 0
    return root


def ns(**kw):
    return argparse.Namespace(**kw)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nalpha = 0.4\ntau: 0.005\nmin-lesion-voxels = 5  # trailing\nmember_alphas = 0.3, 0.6\n")
    assert read_config_file(cfg)["min_lesion_voxels"] == "5"
    settings, extras = resolve_settings(ns(config=str(cfg), alpha=0.7, out_dir="o"))
    assert settings.alpha == 0.7
    assert settings.tau == 0.005
    assert settings.min_lesion_voxels == 5
    assert settings.member_alphas == (0.3, 0.6)
    assert extras == {"out_dir": "o"}


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpah = 0.5\n")
    with pytest.raises(ConfigError):
        read_config_file(cfg)
    assert main(["evaluate", "--config", str(cfg), "--manifest", "m.json"]) == 2


def test_missing_manifest_is_config_error(tmp_path, capsys):
    assert main(["evaluate", "--out-dir", str(tmp_path), "--alpha", "0.5"]) == 2
    assert "--manifest is required" in capsys.readouterr().err


def test_empty_manifest(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"dataset_id": "e", "patients": []}))
    assert main(["evaluate", "--manifest", str(tmp_path / "m.json"), "--alpha", "0.5"]) == 2


def test_infeasible_phantom_exits_cleanly(tmp_path):
    assert main(["phantom", "--out-dir", str(tmp_path), "--shape", "12", "12", "12", "--n-lesions", "30"]) == 2


def test_full_chain(dataset, tmp_path, capsys):
    manifest = str(dataset / "manifest.json")
    assert (dataset / "truth_ledger.json").exists()
    out = tmp_path / "out"
    assert main(["tune", "--manifest", manifest, "--out-dir", str(out)]) == 0
    tuned = json.loads((out / "thresholds.json").read_text())
    assert 0 < tuned["alpha"] < 1 and len(tuned["member_alphas"]) == 3
    with (out / "threshold_sweep.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) > 19

    common = ["--manifest", manifest, "--thresholds", str(out / "thresholds.json"), "--n-bootstrap", "150"]
    assert main(["evaluate", *common, "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["alpha"] == tuned["alpha"]
    assert report["config"]["member_alphas_tuned"]
    assert "patient-scale retention AUC" in capsys.readouterr().out

    assert main(["evaluate", *common, "--out-dir", str(tmp_path / "again"), "--jobs", "2"]) == 0
    for name in ("report.json", "patient_metrics.csv", "lesions.csv", "correlations.csv"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes(), name

    assert main(["curves", *common, "--out-dir", str(tmp_path / "curves")]) == 0
    assert (tmp_path / "curves" / "patient_PSU_phantom.json").read_bytes() == (out / "curves" / "patient_PSU_phantom.json").read_bytes()

    assert main(["measure", "--manifest", manifest, "--alpha", "0.5", "--out-dir", str(tmp_path / "m"), "--map-suffix", ".vol"]) == 0
    assert sorted(p.name for p in (tmp_path / "m" / "maps" / "P000").iterdir()) == ["EoE.vol", "ExE.vol", "MI.vol", "NC.vol"]
    assert (tmp_path / "m" / "lesions.csv").exists()

    assert main(["report", str(out / "report.json"), str(out / "report.json"), "--out-dir", str(tmp_path / "r")]) == 0
    with (tmp_path / "r" / "correlations.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["dataset"] for r in rows} == {"phantom", "joint"}
