"""Figure rendering for sweep reports and qualitative sample grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _curve(ax, reports, attr, ylabel):
    for label, report in reports:
        xs = [p.alpha for p in report.points]
        ys = [getattr(p, attr) for p in report.points]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("attack strength alpha")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if len(reports) > 1:
        ax.legend()


def plot_metric_curves(reports, out_dir) -> list[Path]:
    """accuracy/confidence/ASR vs alpha, one PNG each.

    reports: list of (label, EvalReport) drawn on shared axes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for attr, ylabel, fname in [
        ("accuracy", "accuracy", "accuracy_vs_alpha.png"),
        ("mean_confidence", "mean confidence", "confidence_vs_alpha.png"),
        ("asr", "attack success rate (%)", "asr_vs_alpha.png"),
    ]:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        _curve(ax, reports, attr, ylabel)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def plot_inertia_curve(curve, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ks = [k for k, _ in curve]
    vals = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, vals, marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("inertia")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_projection(points3d, tags, out_path) -> Path:
    """3-D scatter of projected features, colored by tag."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tags = np.asarray(tags)
    fig = plt.figure(figsize=(5, 4))
    ax = fig.add_subplot(projection="3d")
    for tag in np.unique(tags):
        sel = tags == tag
        ax.scatter(points3d[sel, 0], points3d[sel, 1], points3d[sel, 2],
                   s=8, alpha=0.6, label=str(tag))
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _tile_image(activation: np.ndarray) -> np.ndarray:
    """2-D view of an activation: channel-mean map, or a bar for flat ones."""
    if activation.ndim == 3:
        return activation.mean(axis=2)
    flat = activation.reshape(-1)
    side = int(np.ceil(np.sqrt(flat.size)))
    padded = np.zeros(side * side, dtype=flat.dtype)
    padded[:flat.size] = flat
    return padded.reshape(side, side)


def contact_sheet(rows, col_labels, row_labels, out_path) -> Path:
    """Grid of activation tiles: one row per sample, one column per alpha."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_rows = len(rows)
    n_cols = len(col_labels)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(1.6 * n_cols, 1.6 * n_rows),
                             squeeze=False)
    for i, row in enumerate(rows):
        for j, activation in enumerate(row):
            ax = axes[i][j]
            ax.imshow(_tile_image(np.asarray(activation)), cmap="viridis")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(str(col_labels[j]), fontsize=8)
            if j == 0:
                ax.set_ylabel(str(row_labels[i]), fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
