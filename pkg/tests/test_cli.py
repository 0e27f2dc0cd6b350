"""Command-line surface: subcommands, sidecars, config precedence, exit codes."""

import json

import numpy as np
import pytest

from octangle.cli import _parse_factors, _parse_shifts, main
from octangle.imagecore import read_manifest
from octangle.mldn import load_model
from octangle.svr import load_svr

EPOCHS = "3"
INPUT = "32"


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--n", "10", "--seed", "4", "--out", str(data)]) == 0
    manifest = data / "manifest.jsonl"
    svr = root / "loc.osvr"
    assert main(["train-svr", "--manifest", str(manifest), "--out", str(svr), "--max-iter", "60"]) == 0
    mldn = root / "clf.omld"
    rc = main(
        ["train-mldn", "--manifest", str(manifest), "--svr-model", str(svr), "--out", str(mldn),
         "--epochs", EPOCHS, "--input-size", INPUT, "--lr", "1e-3", "--seed", "0"]
    )
    assert rc == 0
    return root, manifest, svr, mldn


def test_synth_layout_and_sidecar(artifacts):
    root, manifest, _, _ = artifacts
    man = read_manifest(manifest)
    assert len(man) == 10
    sidecar = json.loads((manifest.parent / "manifest.jsonl.sidecar.json").read_text())
    assert sidecar["command"] == "synth"
    assert sidecar["config"]["seed"] == 4 and sidecar["config"]["n"] == 10
    assert "timestamp" in sidecar and "version" in sidecar


def test_synth_is_seed_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--n", "4", "--seed", "2", "--out", str(a)]) == 0
    assert main(["synth", "--n", "4", "--seed", "2", "--out", str(b)]) == 0
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
    assert (a / "img_0000.pgm").read_bytes() == (b / "img_0000.pgm").read_bytes()


def test_detect_boundary_stdout_and_debug_dir(artifacts, tmp_path, capsys):
    _, manifest, _, _ = artifacts
    dbg = tmp_path / "dbg"
    assert main(["detect-boundary", "--manifest", str(manifest), "--debug-dir", str(dbg)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert len(lines) == 10
    row = json.loads(lines[0])
    assert set(row) == {"image_path", "upper", "bottom", "upper_domain", "bottom_domain"}
    assert len(row["bottom"]) == 5
    assert (dbg / "img_0000_gradient.pgm").exists() and (dbg / "img_0000_overlay.pgm").exists()


def test_train_svr_artifact_loads(artifacts):
    root, _, svr, _ = artifacts
    model = load_svr(svr)
    assert model.w.shape == (7056,)
    sidecar = json.loads((root / "loc.osvr.sidecar.json").read_text())
    assert sidecar["command"] == "train-svr"
    assert sidecar["config"]["max_iter"] == 60


def test_detect_aca_reports_distances(artifacts, capsys):
    _, manifest, svr, _ = artifacts
    assert main(["detect-aca", "--manifest", str(manifest), "--svr-model", str(svr)]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l]
    assert len(rows) == 10
    assert all({"ss_u", "ss_v", "score", "truth_v", "abs_dv"} <= set(r) for r in rows)
    assert np.median([r["abs_dv"] for r in rows]) <= 10


def test_train_mldn_artifacts(artifacts):
    root, _, _, mldn = artifacts
    model = load_model(mldn)
    assert model.config.subnet_global.input_size == int(INPUT)
    log = json.loads((root / "clf.omld.train_log.json").read_text())
    assert {e["phase"] for e in log} == {1, 2}
    assert sum(e["phase"] == 1 for e in log) == 3 * int(EPOCHS)
    sidecar = json.loads((root / "clf.omld.sidecar.json").read_text())
    assert sidecar["config"]["augment"] == "off" and sidecar["config"]["epochs"] == int(EPOCHS)


def test_train_mldn_augmented_path(artifacts, tmp_path):
    _, manifest, svr, _ = artifacts
    out = tmp_path / "aug.omld"
    rc = main(
        ["train-mldn", "--manifest", str(manifest), "--svr-model", str(svr), "--out", str(out),
         "--epochs", "1", "--input-size", INPUT, "--augment", "on",
         "--factors", "0.5,1.0", "--shifts", "0,0;4,-4"]
    )
    assert rc == 0
    assert load_model(out).config.subnet_global.input_size == int(INPUT)


def test_infer_threshold_labels(artifacts, capsys):
    _, manifest, svr, mldn = artifacts
    base = ["infer", "--manifest", str(manifest), "--svr-model", str(svr), "--mldn-model", str(mldn)]
    assert main(base + ["--threshold", "0.0"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l]
    assert all(r["label"] == "closure" for r in rows)
    assert all(0.0 <= r["p_closure"] <= 1.0 for r in rows)
    assert main(base + ["--threshold", "1.1"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l]
    assert all(r["label"] == "open" for r in rows)


def test_eval_report_roc_and_byte_determinism(artifacts, tmp_path):
    _, manifest, svr, mldn = artifacts
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    roc = tmp_path / "roc.csv"
    base = ["eval", "--manifest", str(manifest), "--svr-model", str(svr), "--mldn-model", str(mldn),
            "--resamples", "150"]
    assert main(base + ["--out", str(out_a), "--roc-csv", str(roc)]) == 0
    assert main(base + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    report = json.loads(out_a.read_text())
    assert report["seed"] == 0
    assert report["localization"]["n"] == 10
    assert {"auc", "auc_ci", "threshold", "sen", "spe", "bacc", "fm"} <= set(report["classification"])
    assert roc.read_text().splitlines()[0] == "threshold,fpr,tpr"
    assert (tmp_path / "a.json.sidecar.json").exists() and (tmp_path / "roc.csv.sidecar.json").exists()


def test_eval_intensity_perturbation_runs(artifacts, tmp_path):
    _, manifest, svr, mldn = artifacts
    out = tmp_path / "k.json"
    base = ["eval", "--manifest", str(manifest), "--svr-model", str(svr), "--mldn-model", str(mldn),
            "--resamples", "150", "--intensity-k", "0.5", "--out", str(out)]
    assert main(base) == 0
    assert 0.0 <= json.loads(out.read_text())["classification"]["auc"] <= 1.0


def test_config_file_fills_unset_flags(artifacts, tmp_path, capsys):
    _, manifest, svr, mldn = artifacts
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tol-px": 5, "resamples": 120}))
    base = ["eval", "--manifest", str(manifest), "--svr-model", str(svr), "--mldn-model", str(mldn),
            "--config", str(cfg)]
    assert main(base) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["localization"]["tol_px"] == 5
    # explicit flags beat config values
    assert main(base + ["--tol-px", "7"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["localization"]["tol_px"] == 7


def test_config_file_rejects_unknown_keys(artifacts, tmp_path, capsys):
    _, manifest, svr, mldn = artifacts
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not-a-flag": 1}))
    rc = main(["eval", "--manifest", str(manifest), "--svr-model", str(svr),
               "--mldn-model", str(mldn), "--config", str(cfg)])
    assert rc == 1
    assert "not-a-flag" in capsys.readouterr().err


def test_exit_codes(artifacts, tmp_path, capsys):
    _, manifest, svr, _ = artifacts
    assert main(["no-such-command"]) == 2
    assert main(["train-svr", "--manifest", str(manifest)]) == 2  # --out missing
    assert main(["detect-aca", "--manifest", str(manifest), "--svr-model", str(tmp_path / "nope.osvr")]) == 1
    assert "error:" in capsys.readouterr().err


def test_threads_flag_accepted(artifacts, capsys):
    _, manifest, svr, _ = artifacts
    rc = main(["detect-aca", "--manifest", str(manifest), "--svr-model", str(svr), "--threads", "2"])
    assert rc == 0
    capsys.readouterr()


def test_parse_helpers():
    assert _parse_factors("0.5,1.0,1.5") == (0.5, 1.0, 1.5)
    assert _parse_factors(" 1.0, ") == (1.0,)
    assert _parse_shifts("0,0;-8,8") == ((0, 0), (-8, 8))
    assert _parse_shifts("") == ()
