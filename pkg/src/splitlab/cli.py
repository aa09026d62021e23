"""Pipeline orchestrator.

Subcommands: make-data, train-model, capture, train-vae, attack-eval,
feasibility. Each takes --config (JSON), --seed (override), --out (run
directory), writes its artifacts under the run directory exactly once,
and drops a resolved-config echo with a content hash so runs cannot
silently mix settings. Failures print a machine-readable JSON error to
stderr and exit nonzero.

Stage seeds derive from the global seed by hashing "<seed>:<stage>", so
every stage is deterministic but no two stages share a stream.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import channel as channel_mod
from . import datasets as datasets_mod
from . import evaluation as eval_mod
from . import feasibility as feas_mod
from . import models as models_mod
from . import plots as plots_mod
from . import vae as vae_mod
from .errors import ConfigurationError, DataError, SplitLabError

DEFAULT_ALPHAS = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


def stage_seed(global_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return config


def _resolve_seed(args, config: dict) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(config.get("seed", 0))


def _require_new(path: Path, what: str):
    if path.exists():
        raise ConfigurationError(
            f"{what} already exists at {path}; outputs are write-once")


def _write_resolved(out_dir: Path, stage: str, resolved: dict) -> Path:
    canonical = json.dumps(resolved, sort_keys=True)
    payload = dict(resolved)
    payload["_sha256"] = hashlib.sha256(canonical.encode()).hexdigest()
    path = out_dir / f"{stage}.config.json"
    _require_new(path, f"{stage} resolved config")
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _require_path(config: dict, key: str) -> Path:
    if key not in config:
        raise ConfigurationError(f"config key {key!r} is required")
    path = Path(config[key])
    if not path.exists():
        raise ConfigurationError(f"{key} path {path} does not exist")
    return path


def cmd_make_data(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    resolved = {
        "stage": "make-data",
        "n_train": int(config.get("n_train", 4000)),
        "n_test": int(config.get("n_test", 1000)),
        "noise_std": float(config.get("noise_std", 0.30)),
        "seed": seed,
    }
    train_path = out_dir / "train.bin"
    test_path = out_dir / "test.bin"
    _require_new(train_path, "train split")
    _require_new(test_path, "test split")
    _write_resolved(out_dir, "make-data", resolved)
    full = datasets_mod.make_synthetic(
        resolved["n_train"] + resolved["n_test"],
        seed=stage_seed(seed, "make-data"),
        noise_std=resolved["noise_std"])
    train, test = full.split(resolved["n_train"])
    datasets_mod.save_batch(train, train_path)
    datasets_mod.save_batch(test, test_path)
    print(train_path)
    print(test_path)
    return 0


def cmd_train_model(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    train_path = _require_path(config, "train_data")
    test_path = Path(config["test_data"]) if "test_data" in config else None
    if test_path is not None and not test_path.exists():
        raise ConfigurationError(f"test_data path {test_path} does not exist")
    resolved = {
        "stage": "train-model",
        "model": config.get("model", "tinynet"),
        "train_data": str(train_path),
        "test_data": str(test_path) if test_path else None,
        "epochs": int(config.get("epochs", 8)),
        "batch_size": int(config.get("batch_size", 64)),
        "learning_rate": float(config.get("learning_rate", 1e-3)),
        "seed": seed,
    }
    ckpt_dir = out_dir / "model"
    _require_new(ckpt_dir, "model checkpoint")
    _write_resolved(out_dir, "train-model", resolved)
    model = models_mod.build_model(resolved["model"],
                                   stage_seed(seed, "init"))
    train_data = datasets_mod.load_dataset(train_path)
    test_data = datasets_mod.load_dataset(test_path) if test_path else None
    trained = models_mod.train_model(
        model, train_data, epochs=resolved["epochs"],
        seed=stage_seed(seed, "train"), test_data=test_data,
        batch_size=resolved["batch_size"],
        learning_rate=resolved["learning_rate"])
    models_mod.save_checkpoint(trained, ckpt_dir)
    if trained.baseline_accuracy is not None:
        print(f"baseline_accuracy {trained.baseline_accuracy:.4f}")
    print(ckpt_dir)
    return 0


def cmd_capture(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    ckpt = _require_path(config, "checkpoint")
    data_path = _require_path(config, "data")
    resolved = {
        "stage": "capture",
        "checkpoint": str(ckpt),
        "data": str(data_path),
        "cut_index": int(config.get("cut_index", 9)),
        "count": int(config.get("count", 2000)),
        "seed": seed,
    }
    capture_path = out_dir / f"capture{channel_mod.CAPTURE_SUFFIX}"
    labels_path = out_dir / "capture.labels.csv"
    _require_new(capture_path, "capture file")
    _write_resolved(out_dir, "capture", resolved)

    model = models_mod.load_checkpoint(ckpt)
    part = models_mod.partition(model, resolved["cut_index"])
    data = datasets_mod.load_dataset(data_path)
    count = resolved["count"]
    if count > len(data):
        raise DataError(
            f"capture count {count} exceeds dataset size {len(data)}")
    if count == 0:
        print("warning: empty capture requested", file=sys.stderr)
    tap = channel_mod.ChannelTap(mode="passive")
    heads = models_mod.forward_head_batch(part, data.images[:count])
    for i in range(count):
        channel_mod.transmit(
            tap, models_mod.ActivationTensor(heads[i],
                                             source_layer=part.cut_index))
    collected = channel_mod.collect(tap, count)
    channel_mod.write_capture(collected.samples, capture_path)
    # trusted-side ground truth, kept apart from the eavesdropped bytes
    with open(labels_path, "w") as fh:
        fh.write("sample_index,label\n")
        for i in range(count):
            fh.write(f"{i},{int(data.labels[i])}\n")
    print(capture_path)
    print(labels_path)
    return 0


def _vae_config_from(config: dict, input_shape, seed: int) -> vae_mod.VaeConfig:
    return vae_mod.VaeConfig(
        input_shape=tuple(input_shape),
        hidden_size=int(config.get("hidden_size", 1000)),
        latent_dim=int(config.get("latent_dim", 32)),
        epochs=int(config.get("epochs", 30)),
        learning_rate=float(config.get("learning_rate", 1e-3)),
        kl_weight=float(config.get("kl_weight", 1.0)),
        seed=int(config.get("seed", seed)),
        batch_size=int(config.get("batch_size", 64)),
    )


def cmd_train_vae(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    capture_path = _require_path(config, "capture")
    vae_dir = out_dir / "vae"
    _require_new(vae_dir, "VAE checkpoint")
    dataset = channel_mod.read_capture(capture_path)
    if "count" in config:
        dataset = dataset.take(int(config["count"]))
    vae_config = _vae_config_from(config, dataset.shape,
                                  stage_seed(seed, "vae"))
    resolved = {
        "stage": "train-vae",
        "capture": str(capture_path),
        "count": len(dataset),
        "hidden_size": vae_config.hidden_size,
        "latent_dim": vae_config.latent_dim,
        "epochs": vae_config.epochs,
        "learning_rate": vae_config.learning_rate,
        "kl_weight": vae_config.kl_weight,
        "batch_size": vae_config.batch_size,
        "vae_seed": vae_config.seed,
        "seed": seed,
    }
    _write_resolved(out_dir, "train-vae", resolved)
    model = vae_mod.train_vae(dataset, vae_config)
    vae_mod.save_vae(model, vae_dir)
    print(f"final_loss {model.loss_trace[-1]:.4f}")
    print(vae_dir)
    return 0


def _attack_config_from(config: dict, seed: int,
                        interpolation: str) -> attack_mod.AttackConfig:
    section = config.get("attack", {})
    return attack_mod.AttackConfig(
        alpha=1.0,
        interpolation=interpolation,
        target_pool_size=int(section.get("target_pool_size", 10)),
        distance=section.get("distance", "symmetric-gaussian-kl"),
        seed=int(section.get("seed", seed)),
        latent_noise_std=float(section.get("latent_noise_std", 0.0)),
    )


def _contact_sheet(part, vae, testset, alphas, config, out_path, n_rows=4):
    images = testset.images[:n_rows]
    heads = models_mod.forward_head_batch(part, images)
    mu, logvar = vae_mod.encode_batch(vae, heads)
    z_origin, z_target = eval_mod._attack_latents(vae, mu, logvar, config)
    rows = []
    for i in range(len(images)):
        tiles = [heads[i]]
        for alpha in alphas:
            z = attack_mod.interpolate(z_origin[i], z_target[i], alpha,
                                       config.interpolation)
            tiles.append(vae_mod.decode_batch(
                vae, np.asarray(z, dtype=np.float32)[None])[0])
        rows.append(tiles)
    col_labels = ["h"] + [f"a={a:g}" for a in alphas]
    row_labels = [f"sample {i}" for i in range(len(images))]
    plots_mod.contact_sheet(rows, col_labels, row_labels, out_path)


def cmd_attack_eval(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    ckpt = _require_path(config, "checkpoint")
    vae_path = _require_path(config, "vae")
    test_path = _require_path(config, "test_data")
    eval_dir = out_dir / "eval"
    _require_new(eval_dir, "evaluation output")

    alphas = [float(a) for a in config.get("alphas", DEFAULT_ALPHAS)]
    interpolation = args.interpolation or config.get("interpolation", "lerp")
    baseline_mode = config.get("baseline_mode", "clean-accuracy")
    attack_seed = stage_seed(seed, "attack")
    resolved = {
        "stage": "attack-eval",
        "checkpoint": str(ckpt),
        "vae": str(vae_path),
        "test_data": str(test_path),
        "cut_index": int(config.get("cut_index", 9)),
        "alphas": alphas,
        "interpolation": interpolation,
        "baseline_mode": baseline_mode,
        "attack": config.get("attack", {}),
        "budgets": args.budget,
        "seed": seed,
    }
    _write_resolved(out_dir, "attack-eval", resolved)
    eval_dir.mkdir(parents=True)

    model = models_mod.load_checkpoint(ckpt)
    part = models_mod.partition(model, resolved["cut_index"])
    vae = vae_mod.load_vae(vae_path)
    testset = datasets_mod.load_dataset(test_path)

    if interpolation == "both":
        base = _attack_config_from(config, attack_seed, "lerp")
        lerp_rep, slerp_rep = eval_mod.interpolation_study(
            part, vae, testset, alphas, attack_seed, base_config=base,
            baseline_mode=baseline_mode)
        labeled = [("lerp", lerp_rep), ("slerp", slerp_rep)]
    else:
        atk = _attack_config_from(config, attack_seed, interpolation)
        labeled = [(interpolation,
                    eval_mod.sweep(part, vae, testset, alphas, atk,
                                   baseline_mode=baseline_mode))]
    for label, report in labeled:
        eval_mod.write_report(report, eval_dir / f"report_{label}.json",
                              eval_dir / f"records_{label}.csv")
    plots_mod.plot_metric_curves(labeled, eval_dir)
    sheet_config = _attack_config_from(config, attack_seed,
                                       labeled[0][0])
    _contact_sheet(part, vae, testset, alphas, sheet_config,
                   eval_dir / "contact_sheet.png")

    if args.budget:
        budgets = [int(b) for b in args.budget.split(",")]
        capture_path = _require_path(config, "capture")
        captures = channel_mod.read_capture(capture_path)
        vae_train = config.get("vae_train", {})
        vae_config = _vae_config_from(vae_train, captures.shape,
                                      stage_seed(seed, "vae"))
        atk = _attack_config_from(config, attack_seed,
                                  "lerp" if interpolation == "both"
                                  else interpolation)
        results = eval_mod.budget_study(part, captures, testset, budgets,
                                        vae_config, atk,
                                        baseline_mode=baseline_mode)
        payload = [
            {"budget": budget,
             "misclassified_confidence":
                 report.points[-1].misclassified_confidence,
             "report": eval_mod.report_to_dict(report)}
            for budget, report in results
        ]
        (eval_dir / "budget_study.json").write_text(
            json.dumps(payload, indent=2))
    for label, report in labeled:
        last = report.points[-1]
        print(f"{label}: clean={report.clean_accuracy:.4f} "
              f"alpha0={report.alpha0_accuracy:.4f} "
              f"acc(a={last.alpha:g})={last.accuracy:.4f} "
              f"asr={last.asr:.2f}")
    print(eval_dir)
    return 0


def _load_capture_features(path, tag) -> feas_mod.FeatureMatrix:
    dataset = channel_mod.read_capture(path)
    return feas_mod.activation_features(dataset.stacked(), tag=tag)


def _read_labels_csv(path) -> np.ndarray:
    import csv as _csv

    with open(path, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    return np.asarray([int(r["label"]) for r in rows])


def cmd_feasibility(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = Path(args.out)
    study_dir = out_dir / "feasibility"
    _require_new(study_dir, "feasibility output")

    by_class = args.by_class or bool(config.get("by_class", False))
    capture_args = []
    if args.captures:
        paths = args.captures.split(",")
        tags = (args.tags.split(",") if args.tags
                else [f"capture{i}" for i in range(len(paths))])
        if len(tags) != len(paths):
            raise ConfigurationError("--tags must match --captures in length")
        capture_args = list(zip(paths, tags))
    else:
        for entry in config.get("captures", []):
            capture_args.append((entry["path"], entry.get("tag",
                                                          entry["path"])))
    if not capture_args:
        raise ConfigurationError("no capture files given")
    for path, _ in capture_args:
        if not Path(path).exists():
            raise ConfigurationError(f"capture path {path} does not exist")

    resolved = {
        "stage": "feasibility",
        "captures": [{"path": str(p), "tag": t} for p, t in capture_args],
        "by_class": by_class,
        "labels": args.labels or config.get("labels"),
        "k_max": config.get("k_max"),
        "seed": seed,
    }
    _write_resolved(out_dir, "feasibility", resolved)
    study_dir.mkdir(parents=True)
    feas_seed = stage_seed(seed, "feasibility")

    if by_class:
        if len(capture_args) != 1:
            raise ConfigurationError(
                "--by-class expects exactly one capture file")
        labels_path = resolved["labels"]
        if not labels_path:
            raise ConfigurationError(
                "--by-class requires --labels (trusted-side capture labels)")
        labels = _read_labels_csv(labels_path)
        dataset = channel_mod.read_capture(capture_args[0][0])
        if len(labels) != len(dataset):
            raise DataError(
                f"{len(labels)} labels for {len(dataset)} captured frames")
        features = feas_mod.activation_features(dataset.stacked())
        tagged = []
        for label in sorted(set(labels.tolist())):
            rows = features.rows[labels == label]
            tagged.append((feas_mod.FeatureMatrix(rows), f"class_{label}"))
    else:
        if len(capture_args) < 2:
            raise ConfigurationError(
                "need at least two capture files (or --by-class)")
        matrices = [_load_capture_features(p, t) for p, t in capture_args]
        pooled = feas_mod.pool_to_common(matrices)
        tagged = [(m, t) for m, (_, t) in zip(pooled, capture_args)]

    report = feas_mod.differentiability_study(tagged, seed=feas_seed)
    payload = report.to_dict()
    if resolved["k_max"]:
        pooled_features = feas_mod.FeatureMatrix(
            np.concatenate([m.rows for m, _ in tagged]))
        curve = feas_mod.inertia_curve(pooled_features, 1,
                                       int(resolved["k_max"]) + 1,
                                       seed=feas_seed)
        payload["elbow_k"] = feas_mod.elbow_select(
            pooled_features, int(resolved["k_max"]), seed=feas_seed)
        payload["inertia_curve"] = curve
        plots_mod.plot_inertia_curve(curve, study_dir / "inertia.png")
    (study_dir / "feasibility.json").write_text(json.dumps(payload, indent=2))

    all_rows = feas_mod.FeatureMatrix(
        np.concatenate([m.rows for m, _ in tagged]))
    points = feas_mod.project_3d(all_rows)
    with open(study_dir / "projection.csv", "w") as fh:
        fh.write("pc1,pc2,pc3,tag\n")
        for row, tag in zip(points, report.row_tags):
            fh.write(f"{row[0]:.9g},{row[1]:.9g},{row[2]:.9g},{tag}\n")
    plots_mod.plot_projection(points, report.row_tags,
                              study_dir / "projection.png")
    print(f"silhouette {report.silhouette:.4f} purity {report.purity:.4f}")
    print(study_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitlab",
        description="Split-inference interception and latent-attack lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--out", required=True, help="run directory")

    common(sub.add_parser("make-data", help="write synthetic train/test splits"))
    common(sub.add_parser("train-model", help="train a registered classifier"))
    common(sub.add_parser("capture",
                          help="eavesdrop activations into a capture file"))
    common(sub.add_parser("train-vae", help="fit the attack VAE on a capture"))
    p_eval = sub.add_parser("attack-eval",
                            help="run attack sweeps and write reports/plots")
    common(p_eval)
    p_eval.add_argument("--interpolation", choices=["lerp", "slerp", "both"],
                        help="interpolation operator (default from config)")
    p_eval.add_argument("--budget",
                        help="comma-separated capture budgets to compare")
    p_feas = sub.add_parser("feasibility",
                            help="clustering separability study on captures")
    common(p_feas)
    p_feas.add_argument("--captures",
                        help="comma-separated capture files to compare")
    p_feas.add_argument("--tags", help="comma-separated tags for --captures")
    p_feas.add_argument("--by-class", action="store_true",
                        help="cluster one capture against its class labels")
    p_feas.add_argument("--labels",
                        help="trusted-side labels CSV for --by-class")
    return parser


COMMANDS = {
    "make-data": cmd_make_data,
    "train-model": cmd_train_model,
    "capture": cmd_capture,
    "train-vae": cmd_train_vae,
    "attack-eval": cmd_attack_eval,
    "feasibility": cmd_feasibility,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SplitLabError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
