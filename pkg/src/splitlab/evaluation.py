"""Attack metrics and end-to-end evaluation sweeps.

A sweep replays a labeled test split through the split pipeline: device
head, latent-space attack in transit, server tail. Per-sample outcomes
are kept as raw records so every aggregate in a report can be recomputed
from disk.

The ASR baseline is configurable: "clean-accuracy" compares against the
unattacked split pipeline (so reconstruction loss alone shows up as
nonzero ASR at alpha = 0), "alpha0-accuracy" compares against the
reconstruction pass (so ASR isolates the interpolation effect).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import models as models_mod
from . import vae as vae_mod
from .attack import AttackConfig
from .datasets import ImageDataset
from .errors import ConfigurationError, DataError
from .models import ClassificationResult, ModelPartition
from .vae import LatentCode, VaeModel

BASELINE_MODES = ("clean-accuracy", "alpha0-accuracy")


@dataclass
class EvalPoint:
    alpha: float
    accuracy: float
    mean_confidence: float
    asr: float
    n_samples_evaluated: int
    misclassified_confidence: float | None = None


@dataclass
class SampleRecord:
    alpha: float
    sample_index: int
    true_label: int
    predicted_class: int
    confidence: float


@dataclass
class EvalReport:
    model_id: str
    cut_index: int
    baseline_mode: str
    baseline_value: float
    clean_accuracy: float
    alpha0_accuracy: float
    interpolation: str
    config: dict
    points: list[EvalPoint] = field(default_factory=list)
    records: list[SampleRecord] = field(default_factory=list)


def _as_pairs(results):
    pairs = []
    for item in results:
        if isinstance(item, ClassificationResult):
            pairs.append((item, None))
        else:
            res, label = item
            pairs.append((res, label))
    return pairs


def accuracy(results) -> float:
    """Fraction of (ClassificationResult, true_label) pairs scored correct."""
    pairs = _as_pairs(results)
    if not pairs:
        raise DataError("accuracy of an empty result list is undefined")
    correct = sum(1 for res, label in pairs
                  if label is not None and res.predicted_class == int(label))
    return correct / len(pairs)


def mean_confidence(results, which: str = "all") -> float:
    """Mean max-probability; 'misclassified-only' needs labeled results."""
    if which not in ("all", "misclassified-only"):
        raise ConfigurationError(
            f"filter must be 'all' or 'misclassified-only', got {which!r}")
    pairs = _as_pairs(results)
    if which == "misclassified-only":
        if any(label is None for _, label in pairs):
            raise DataError("misclassified-only filter requires true labels")
        pairs = [(res, label) for res, label in pairs
                 if res.predicted_class != int(label)]
    if not pairs:
        raise DataError(f"no results left after {which!r} filter")
    return float(np.mean([res.confidence for res, _ in pairs]))


def asr(baseline: float, attacked: float) -> float:
    """Accuracy-drop percentage relative to baseline, clamped at 0."""
    if not (0.0 <= baseline <= 1.0 and 0.0 <= attacked <= 1.0):
        raise DataError("accuracies must lie in [0, 1]")
    if baseline <= 0.0:
        raise DataError("ASR undefined for zero baseline accuracy")
    return max(0.0, (baseline - attacked) / baseline) * 100.0


def _check_alphas(alphas):
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigurationError("need at least one alpha")
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ConfigurationError(f"alphas outside [0, 1]: {alphas}")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError(f"alphas must be strictly ascending: {alphas}")
    return alphas


def _batch_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float((probs.argmax(axis=1) == labels).mean())


def _point_metrics(alpha, preds, confs, labels, baseline_value, n):
    preds = np.asarray(preds)
    confs = np.asarray(confs, dtype=np.float64)
    labels = np.asarray(labels)
    acc = float((preds == labels).mean())
    wrong = preds != labels
    mis_conf = float(confs[wrong].mean()) if wrong.any() else None
    return EvalPoint(
        alpha=float(alpha),
        accuracy=acc,
        mean_confidence=float(confs.mean()),
        asr=asr(baseline_value, acc),
        n_samples_evaluated=n,
        misclassified_confidence=mis_conf,
    )


def _attack_latents(vae: VaeModel, mu: np.ndarray, logvar: np.ndarray,
                    config: AttackConfig):
    """Per-sample origin codes and target codes, alpha-independent.

    Each sample owns a child seed derived from config.seed, so target
    draws are reproducible and unaffected by grid or batch ordering.
    """
    pool = vae.pool
    n = mu.shape[0]
    seeds = np.random.default_rng(config.seed).integers(
        0, 2 ** 63, size=n, dtype=np.uint64)
    z_origin = mu.copy()
    z_target = np.empty_like(mu)
    for i in range(n):
        rng = np.random.default_rng(int(seeds[i]))
        if config.latent_noise_std > 0:
            z_origin[i] += rng.normal(
                0.0, config.latent_noise_std,
                size=z_origin[i].shape).astype(np.float32)
        code = LatentCode(mu=mu[i], logvar=logvar[i], z=z_origin[i])
        idx = attack_mod.select_target_index(code, pool, config, rng=rng)
        z_target[i] = pool.mu[idx]
    return z_origin, z_target


def _interp_rows(z_origin, z_target, alpha, mode):
    if mode == "lerp":
        return (1.0 - alpha) * z_origin + alpha * z_target
    out = np.empty_like(z_origin)
    for i in range(z_origin.shape[0]):
        out[i] = attack_mod.slerp(z_origin[i], z_target[i], alpha)
    return out


def sweep(part: ModelPartition, vae: VaeModel, testset: ImageDataset,
          alphas, config: AttackConfig,
          baseline_mode: str = "clean-accuracy") -> EvalReport:
    """One EvalPoint per alpha over the full attack pipeline."""
    alphas = _check_alphas(alphas)
    if baseline_mode not in BASELINE_MODES:
        raise ConfigurationError(
            f"baseline_mode must be one of {BASELINE_MODES}")
    if vae.pool is None:
        raise ConfigurationError("VAE carries no cached latent pool")
    labels = np.asarray(testset.labels)

    heads = models_mod.forward_head_batch(part, testset.images)
    clean_probs = models_mod.forward_tail_batch(part, heads)
    clean_accuracy = _batch_accuracy(clean_probs, labels)

    mu, logvar = vae_mod.encode_batch(vae, heads)
    recon = vae_mod.decode_batch(vae, mu)
    alpha0_probs = models_mod.forward_tail_batch(part, recon)
    alpha0_accuracy = _batch_accuracy(alpha0_probs, labels)

    baseline_value = (clean_accuracy if baseline_mode == "clean-accuracy"
                      else alpha0_accuracy)

    z_origin, z_target = _attack_latents(vae, mu, logvar, config)

    report = EvalReport(
        model_id=part.model_id,
        cut_index=part.cut_index,
        baseline_mode=baseline_mode,
        baseline_value=baseline_value,
        clean_accuracy=clean_accuracy,
        alpha0_accuracy=alpha0_accuracy,
        interpolation=config.interpolation,
        config={
            "interpolation": config.interpolation,
            "target_pool_size": config.target_pool_size,
            "distance": config.distance,
            "seed": config.seed,
            "latent_noise_std": config.latent_noise_std,
            "alphas": alphas,
        },
    )
    n = len(testset)
    for alpha in alphas:
        z_alpha = _interp_rows(z_origin, z_target, alpha,
                               config.interpolation)
        decoded = vae_mod.decode_batch(vae, z_alpha.astype(np.float32))
        probs = models_mod.forward_tail_batch(part, decoded)
        preds = probs.argmax(axis=1)
        confs = probs.max(axis=1)
        report.points.append(
            _point_metrics(alpha, preds, confs, labels, baseline_value, n))
        report.records.extend(
            SampleRecord(alpha=float(alpha), sample_index=i,
                         true_label=int(labels[i]),
                         predicted_class=int(preds[i]),
                         confidence=float(confs[i]))
            for i in range(n))
    return report


def budget_study(part: ModelPartition, captures, testset: ImageDataset,
                 budgets, vae_config, attack_config: AttackConfig,
                 alphas=(0.0, 1.0),
                 baseline_mode: str = "clean-accuracy"):
    """Train one VAE per capture budget and sweep each.

    Returns a list of (budget, EvalReport); the misclassified-only
    confidence of each report's last point traces how the attack
    strengthens, then settles, as the eavesdropping budget grows.
    """
    budgets = [int(b) for b in budgets]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ConfigurationError(f"budgets must be ascending: {budgets}")
    if budgets[-1] > len(captures):
        raise DataError(
            f"largest budget {budgets[-1]} exceeds {len(captures)} captures")
    out = []
    for budget in budgets:
        trained = vae_mod.train_vae(captures.take(budget), vae_config)
        report = sweep(part, trained, testset, alphas, attack_config,
                       baseline_mode=baseline_mode)
        out.append((budget, report))
    return out


def interpolation_study(part: ModelPartition, vae: VaeModel,
                        testset: ImageDataset, alphas, seed: int,
                        base_config: AttackConfig | None = None,
                        baseline_mode: str = "clean-accuracy"):
    """Paired lerp/slerp sweeps differing only in the interpolation op."""
    if base_config is None:
        base_config = AttackConfig(seed=seed)
    if base_config.seed != seed:
        raise ConfigurationError(
            f"paired design requires matching seeds; config carries "
            f"{base_config.seed}, study got {seed}")
    lerp_report = sweep(part, vae, testset, alphas,
                        replace(base_config, interpolation="lerp"),
                        baseline_mode=baseline_mode)
    slerp_report = sweep(part, vae, testset, alphas,
                         replace(base_config, interpolation="slerp"),
                         baseline_mode=baseline_mode)
    return lerp_report, slerp_report


# -- persistence --------------------------------------------------------------

def report_to_dict(report: EvalReport) -> dict:
    return {
        "model_id": report.model_id,
        "cut_index": report.cut_index,
        "baseline_mode": report.baseline_mode,
        "baseline_value": report.baseline_value,
        "clean_accuracy": report.clean_accuracy,
        "alpha0_accuracy": report.alpha0_accuracy,
        "interpolation": report.interpolation,
        "config": report.config,
        "points": [
            {"alpha": p.alpha, "accuracy": p.accuracy,
             "mean_confidence": p.mean_confidence, "asr": p.asr,
             "n_samples_evaluated": p.n_samples_evaluated,
             "misclassified_confidence": p.misclassified_confidence}
            for p in report.points
        ],
    }


def write_report(report: EvalReport, json_path, csv_path=None) -> Path:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report_to_dict(report), indent=2))
    if csv_path is not None:
        write_records(report.records, csv_path)
    return json_path


def write_records(records, csv_path) -> Path:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "sample_index", "true_label",
                         "predicted_class", "confidence"])
        for r in records:
            # full float precision so aggregates recompute bit-identically
            writer.writerow([r.alpha, r.sample_index, r.true_label,
                             r.predicted_class, f"{r.confidence:.17g}"])
    return csv_path


def read_records(csv_path) -> list[SampleRecord]:
    with open(csv_path, newline="") as fh:
        return [
            SampleRecord(alpha=float(row["alpha"]),
                         sample_index=int(row["sample_index"]),
                         true_label=int(row["true_label"]),
                         predicted_class=int(row["predicted_class"]),
                         confidence=float(row["confidence"]))
            for row in csv.DictReader(fh)
        ]


def point_from_records(records, alpha: float, baseline_value: float,
                       tol: float = 1e-9) -> EvalPoint:
    """Recompute one EvalPoint from raw per-sample records."""
    rows = [r for r in records if abs(r.alpha - alpha) <= tol]
    if not rows:
        raise DataError(f"no records at alpha = {alpha}")
    preds = np.array([r.predicted_class for r in rows])
    confs = np.array([r.confidence for r in rows])
    labels = np.array([r.true_label for r in rows])
    return _point_metrics(alpha, preds, confs, labels, baseline_value,
                          len(rows))
