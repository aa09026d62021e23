import json
import subprocess
import sys

import numpy as np
import pytest

from splitlab import channel as channel_mod
from splitlab import cli as cli_mod
from splitlab import vae as vae_mod
from splitlab.cli import main

PIPE_SEED = 5


def _write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end CLI run; tests assert on its artifacts."""
    root = tmp_path_factory.mktemp("cli_run")
    dirs = {name: root / name for name in
            ("data", "model", "cap9", "cap6", "vae", "eval", "feas",
             "feas_class")}

    data_cfg = _write_config(root / "data.json",
                             {"n_train": 400, "n_test": 120})
    assert main(["make-data", "--config", data_cfg, "--seed", str(PIPE_SEED),
                 "--out", str(dirs["data"])]) == 0

    model_cfg = _write_config(root / "model.json", {
        "model": "tinynet",
        "train_data": str(dirs["data"] / "train.bin"),
        "test_data": str(dirs["data"] / "test.bin"),
        "epochs": 2,
    })
    assert main(["train-model", "--config", model_cfg, "--seed",
                 str(PIPE_SEED), "--out", str(dirs["model"])]) == 0

    ckpt = dirs["model"] / "model"
    for name, cut in (("cap9", 9), ("cap6", 6)):
        cap_cfg = _write_config(root / f"{name}.json", {
            "checkpoint": str(ckpt),
            "data": str(dirs["data"] / "train.bin"),
            "cut_index": cut,
            "count": 300,
        })
        assert main(["capture", "--config", cap_cfg, "--seed", str(PIPE_SEED),
                     "--out", str(dirs[name])]) == 0

    vae_cfg = _write_config(root / "vae.json", {
        "capture": str(dirs["cap9"] / "capture.advr"),
        "hidden_size": 200,
        "latent_dim": 16,
        "epochs": 3,
    })
    assert main(["train-vae", "--config", vae_cfg, "--seed", str(PIPE_SEED),
                 "--out", str(dirs["vae"])]) == 0

    eval_cfg = _write_config(root / "eval.json", {
        "checkpoint": str(ckpt),
        "vae": str(dirs["vae"] / "vae"),
        "test_data": str(dirs["data"] / "test.bin"),
        "capture": str(dirs["cap9"] / "capture.advr"),
        "alphas": [0.0, 1.0],
        "vae_train": {"hidden_size": 200, "latent_dim": 16, "epochs": 2},
    })
    assert main(["attack-eval", "--config", eval_cfg, "--seed",
                 str(PIPE_SEED), "--out", str(dirs["eval"]),
                 "--interpolation", "both", "--budget", "60,120"]) == 0

    feas_cfg = _write_config(root / "feas.json", {"k_max": 4})
    assert main(["feasibility", "--config", feas_cfg, "--seed",
                 str(PIPE_SEED), "--out", str(dirs["feas"]),
                 "--captures",
                 f"{dirs['cap9'] / 'capture.advr'},"
                 f"{dirs['cap6'] / 'capture.advr'}",
                 "--tags", "cut9,cut6"]) == 0

    assert main(["feasibility", "--seed", str(PIPE_SEED),
                 "--out", str(dirs["feas_class"]),
                 "--captures", str(dirs["cap9"] / "capture.advr"),
                 "--by-class",
                 "--labels", str(dirs["cap9"] / "capture.labels.csv")]) == 0

    return {"root": root, "dirs": dirs, "ckpt": ckpt,
            "configs": {"data": data_cfg, "model": model_cfg}}


def test_make_data_artifacts_and_determinism(pipeline, tmp_path):
    data_dir = pipeline["dirs"]["data"]
    assert (data_dir / "train.bin").exists()
    assert (data_dir / "test.bin").exists()
    resolved = json.loads((data_dir / "make-data.config.json").read_text())
    assert resolved["seed"] == PIPE_SEED
    assert "_sha256" in resolved
    # same config + seed into a fresh directory: identical bytes
    assert main(["make-data", "--config", pipeline["configs"]["data"],
                 "--seed", str(PIPE_SEED), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "train.bin").read_bytes() == \
        (data_dir / "train.bin").read_bytes()


def test_train_model_manifest_and_rerun_identical(pipeline, tmp_path):
    ckpt = pipeline["ckpt"]
    manifest = json.loads((ckpt / "manifest.json").read_text())
    assert manifest["model_id"] == "tinynet"
    resolved = json.loads(
        (pipeline["dirs"]["model"] / "train-model.config.json").read_text())
    assert resolved["seed"] == PIPE_SEED
    assert main(["train-model", "--config", pipeline["configs"]["model"],
                 "--seed", str(PIPE_SEED), "--out", str(tmp_path)]) == 0
    for blob in sorted(ckpt.glob("*.bin")):
        assert (tmp_path / "model" / blob.name).read_bytes() == \
            blob.read_bytes()


def test_train_model_missing_data_fails_before_work(tmp_path, capsys):
    cfg = _write_config(tmp_path / "bad.json",
                        {"train_data": str(tmp_path / "nope.bin")})
    out_dir = tmp_path / "run"
    assert main(["train-model", "--config", cfg, "--out", str(out_dir)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigurationError"
    assert not out_dir.exists()  # no partial artifacts


def test_capture_frames_and_labels(pipeline):
    cap_dir = pipeline["dirs"]["cap9"]
    dataset = channel_mod.read_capture(cap_dir / "capture.advr")
    assert dataset.count == 300
    assert dataset.shape == (4, 4, 64)
    lines = (cap_dir / "capture.labels.csv").read_text().strip().splitlines()
    assert lines[0] == "sample_index,label"
    assert len(lines) == 301
    cut6 = channel_mod.read_capture(
        pipeline["dirs"]["cap6"] / "capture.advr")
    assert cut6.shape == (8, 8, 32)


def test_capture_write_once(pipeline, capsys):
    cfg = _write_config(pipeline["root"] / "cap_again.json", {
        "checkpoint": str(pipeline["ckpt"]),
        "data": str(pipeline["dirs"]["data"] / "train.bin"),
        "count": 10,
    })
    assert main(["capture", "--config", cfg,
                 "--out", str(pipeline["dirs"]["cap9"])]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "write-once" in err["message"]


def test_capture_empty_warns(pipeline, tmp_path, capsys):
    cfg = _write_config(tmp_path / "cap0.json", {
        "checkpoint": str(pipeline["ckpt"]),
        "data": str(pipeline["dirs"]["data"] / "train.bin"),
        "count": 0,
    })
    assert main(["capture", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "warning" in capsys.readouterr().err
    assert channel_mod.read_capture(tmp_path / "capture.advr").count == 0


def test_capture_count_exceeds_dataset(pipeline, tmp_path, capsys):
    cfg = _write_config(tmp_path / "toobig.json", {
        "checkpoint": str(pipeline["ckpt"]),
        "data": str(pipeline["dirs"]["data"] / "test.bin"),
        "count": 5000,
    })
    assert main(["capture", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "DataError"


def test_train_vae_artifacts(pipeline):
    vae_dir = pipeline["dirs"]["vae"] / "vae"
    model = vae_mod.load_vae(vae_dir)
    assert len(model.loss_trace) == 3  # one entry per epoch
    assert model.config.hidden_size == 200
    assert model.pool is not None and len(model.pool) == 300


def test_attack_eval_artifacts(pipeline):
    eval_dir = pipeline["dirs"]["eval"] / "eval"
    for name in ("report_lerp.json", "records_lerp.csv",
                 "report_slerp.json", "records_slerp.csv",
                 "accuracy_vs_alpha.png", "confidence_vs_alpha.png",
                 "asr_vs_alpha.png", "contact_sheet.png",
                 "budget_study.json"):
        assert (eval_dir / name).exists(), name
    lerp_rep = json.loads((eval_dir / "report_lerp.json").read_text())
    slerp_rep = json.loads((eval_dir / "report_slerp.json").read_text())
    assert [p["alpha"] for p in lerp_rep["points"]] == [0.0, 1.0]
    # paired study: endpoints coincide across operators
    assert lerp_rep["points"][0]["accuracy"] == \
        slerp_rep["points"][0]["accuracy"]
    assert lerp_rep["points"][-1]["accuracy"] == \
        slerp_rep["points"][-1]["accuracy"]
    budget = json.loads((eval_dir / "budget_study.json").read_text())
    assert [b["budget"] for b in budget] == [60, 120]


def test_feasibility_artifacts(pipeline):
    feas_dir = pipeline["dirs"]["feas"] / "feasibility"
    payload = json.loads((feas_dir / "feasibility.json").read_text())
    assert payload["k"] == 2
    assert -1.0 <= payload["silhouette"] <= 1.0
    assert 0.0 <= payload["purity"] <= 1.0
    assert sorted(payload["tags"]) == ["cut6", "cut9"]
    assert payload["elbow_k"] >= 2
    assert (feas_dir / "projection.png").exists()
    assert (feas_dir / "inertia.png").exists()
    header = (feas_dir / "projection.csv").read_text().splitlines()[0]
    assert header == "pc1,pc2,pc3,tag"


def test_feasibility_by_class_artifacts(pipeline):
    feas_dir = pipeline["dirs"]["feas_class"] / "feasibility"
    payload = json.loads((feas_dir / "feasibility.json").read_text())
    assert payload["k"] == 10
    assert all(t.startswith("class_") for t in payload["tags"])


def test_feasibility_single_capture_rejected(pipeline, tmp_path, capsys):
    assert main(["feasibility", "--out", str(tmp_path),
                 "--captures",
                 str(pipeline["dirs"]["cap9"] / "capture.advr")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigurationError"


def test_feasibility_no_captures_rejected(tmp_path, capsys):
    assert main(["feasibility", "--out", str(tmp_path / "x")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigurationError"


def test_stage_seed_is_stable_and_distinct():
    assert cli_mod.stage_seed(0, "train") == cli_mod.stage_seed(0, "train")
    assert cli_mod.stage_seed(0, "train") != cli_mod.stage_seed(0, "vae")
    assert cli_mod.stage_seed(0, "train") != cli_mod.stage_seed(1, "train")


def test_bad_config_json_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["make-data", "--config", str(bad),
                 "--out", str(tmp_path / "run")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigurationError"


def test_module_entrypoint_help():
    proc = subprocess.run(
        [sys.executable, "-m", "splitlab.cli", "--help"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("make-data", "train-model", "capture", "train-vae",
                "attack-eval", "feasibility"):
        assert sub in proc.stdout
