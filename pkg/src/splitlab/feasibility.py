"""Clustering study: can an eavesdropper tell models, layers, classes apart?

Features are per-channel spatial means of intercepted activations,
block-pooled to a common length when channel counts differ. Clustering
is plain Lloyd k-means with greedy farthest-point seeding and restarts;
scores are silhouette and majority-vote purity. Tags ride along for
scoring only; the clustering path never sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, ShapeError

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 100


@dataclass
class FeatureMatrix:
    rows: np.ndarray  # (N, D)
    source_tags: np.ndarray | None = None  # scoring only

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ShapeError(f"feature rows must be 2-D, got {self.rows.shape}")
        if not np.isfinite(self.rows).all():
            raise DataError("feature matrix contains NaN or Inf")
        if self.source_tags is not None:
            self.source_tags = np.asarray(self.source_tags)
            if self.source_tags.shape != (self.rows.shape[0],):
                raise ShapeError("one tag per row required")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class ClusterReport:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    silhouette: float
    inertia: float
    inertia_curve: list[tuple[int, float]] = field(default_factory=list)


def activation_features(stacked: np.ndarray, tag=None) -> FeatureMatrix:
    """Per-channel spatial means; channels-last feature maps expected."""
    stacked = np.asarray(stacked, dtype=np.float64)
    if stacked.ndim < 2:
        raise ShapeError("need a batch of activations")
    if stacked.ndim == 2:
        rows = stacked  # already flat: one feature per unit
    else:
        spatial_axes = tuple(range(1, stacked.ndim - 1))
        rows = stacked.mean(axis=spatial_axes)
    tags = None if tag is None else np.asarray([tag] * stacked.shape[0])
    return FeatureMatrix(rows, tags)


def pool_to_common(matrices: list[FeatureMatrix]) -> list[FeatureMatrix]:
    """Block-mean each matrix down to the smallest feature length."""
    target = min(m.dim for m in matrices)
    out = []
    for m in matrices:
        if m.dim == target:
            out.append(m)
            continue
        if m.dim % target:
            raise ShapeError(
                f"cannot pool {m.dim} features to {target}: not divisible")
        rows = m.rows.reshape(m.n, target, m.dim // target).mean(axis=2)
        out.append(FeatureMatrix(rows, m.source_tags))
    return out


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (N, K) squared Euclidean distances
    d2 = ((points * points).sum(axis=1)[:, None]
          + (centers * centers).sum(axis=1)[None, :]
          - 2.0 * points @ centers.T)
    return np.maximum(d2, 0.0)


def _farthest_point_seeds(points: np.ndarray, k: int,
                          rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    first = int(rng.integers(0, n))
    chosen = [first]
    min_d2 = _sq_distances(points, points[first:first + 1])[:, 0]
    for _ in range(1, k):
        nxt = int(min_d2.argmax())
        chosen.append(nxt)
        min_d2 = np.minimum(
            min_d2, _sq_distances(points, points[nxt:nxt + 1])[:, 0])
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centers: np.ndarray):
    assignments = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = _sq_distances(points, centers)
        new_assign = d2.argmin(axis=1)
        for c in range(centers.shape[0]):
            mask = new_assign == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
            else:
                # revive an empty cluster at the worst-served point
                worst = int(d2[np.arange(len(points)), new_assign].argmax())
                centers[c] = points[worst]
                new_assign[worst] = c
        if assignments is not None and np.array_equal(assignments, new_assign):
            break
        assignments = new_assign
    d2 = _sq_distances(points, centers)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(points)), assignments].sum())
    return assignments, centers, inertia


def kmeans(features: FeatureMatrix, k: int, seed: int = 0,
           restarts: int = KMEANS_RESTARTS,
           with_silhouette: bool = True) -> ClusterReport:
    """Best-of-restarts Lloyd k-means, deterministic given seed."""
    points = features.rows
    n = points.shape[0]
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > n:
        raise DataError(f"k = {k} exceeds sample count {n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _farthest_point_seeds(points, k, rng)
        assignments, centers, inertia = _lloyd(points, centers)
        if best is None or inertia < best[2]:
            best = (assignments, centers, inertia)
    assignments, centers, inertia = best
    score = silhouette_score(features, assignments) if with_silhouette else float("nan")
    return ClusterReport(k=k, assignments=assignments, centroids=centers,
                         silhouette=score, inertia=inertia,
                         inertia_curve=[(k, inertia)])


def silhouette_score(features, assignments) -> float:
    """Mean of (b - a)/max(a, b); singletons and 0/0 score 0."""
    rows = features.rows if isinstance(features, FeatureMatrix) else \
        np.asarray(features, dtype=np.float64)
    assignments = np.asarray(assignments)
    if assignments.shape != (rows.shape[0],):
        raise ShapeError("one assignment per row required")
    labels = np.unique(assignments)
    if labels.size < 2:
        raise DataError("silhouette needs at least two clusters")
    # exact pairwise distances; the gemm shortcut loses ~1e-11 to cancellation
    d = cdist(rows, rows)
    n = rows.shape[0]
    sums = np.stack([d[:, assignments == c].sum(axis=1) for c in labels],
                    axis=1)  # (N, k) total distance to each cluster
    counts = np.array([(assignments == c).sum() for c in labels])
    own_col = np.searchsorted(labels, assignments)
    own_count = counts[own_col]
    scores = np.zeros(n)
    multi = own_count > 1
    a = np.zeros(n)
    a[multi] = sums[np.arange(n), own_col][multi] / (own_count[multi] - 1)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(n), own_col] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    ok = multi & (denom > 0)
    scores[ok] = (b[ok] - a[ok]) / denom[ok]
    return float(scores.mean())


def inertia_curve(features: FeatureMatrix, k_lo: int, k_hi: int,
                  seed: int = 0) -> list[tuple[int, float]]:
    """Inertia for k in [k_lo, k_hi]; k = 1 handled without clustering."""
    curve = []
    for k in range(k_lo, k_hi + 1):
        if k == 1:
            centroid = features.rows.mean(axis=0, keepdims=True)
            inertia = float(((features.rows - centroid) ** 2).sum())
        else:
            inertia = kmeans(features, k, seed=seed,
                             with_silhouette=False).inertia
        curve.append((k, inertia))
    return curve


def elbow_select(features: FeatureMatrix, k_max: int, seed: int = 0) -> int:
    """k in [2, k_max] with the largest second difference of inertia."""
    if k_max < 3:
        raise DataError(f"k_max must be >= 3, got {k_max}")
    if k_max > features.n:
        raise DataError(f"k_max = {k_max} exceeds sample count {features.n}")
    k_hi = min(k_max + 1, features.n)
    curve = inertia_curve(features, 1, k_hi, seed=seed)
    inertias = {k: v for k, v in curve}
    best_k, best_curv = None, -np.inf
    for k in range(2, k_hi):
        curv = inertias[k - 1] - 2.0 * inertias[k] + inertias[k + 1]
        if curv > best_curv:
            best_k, best_curv = k, curv
    return int(best_k)


def project_3d(features: FeatureMatrix) -> np.ndarray:
    """Top-3 principal components, deterministic sign convention."""
    if features.dim < 3:
        raise ShapeError(f"need >= 3 feature dims, got {features.dim}")
    centered = features.rows - features.rows.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:3]
    # fix sign: largest-magnitude loading of each component is positive
    for i in range(3):
        j = int(np.abs(components[i]).argmax())
        if components[i, j] < 0:
            components[i] = -components[i]
    return centered @ components.T


@dataclass
class StudyReport:
    k: int
    n_samples: int
    silhouette: float
    purity: float
    tags: list
    assignments: np.ndarray
    row_tags: np.ndarray

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_samples": self.n_samples,
            "silhouette": self.silhouette,
            "purity": self.purity,
            "tags": [str(t) for t in self.tags],
            "assignments": self.assignments.tolist(),
            "row_tags": [str(t) for t in self.row_tags],
        }


def differentiability_study(datasets: list[tuple[FeatureMatrix, object]],
                            seed: int = 0) -> StudyReport:
    """Pool tagged feature sets, cluster blind, score against the tags."""
    if len(datasets) < 2:
        raise DataError("need at least two tagged datasets")
    dims = {m.dim for m, _ in datasets}
    if len(dims) > 1:
        raise ShapeError(
            f"feature dims differ ({sorted(dims)}); pool_to_common first")
    rows = np.concatenate([m.rows for m, _ in datasets])
    row_tags = np.concatenate(
        [np.asarray([tag] * m.n) for m, tag in datasets])
    tags = sorted({tag for _, tag in datasets})
    k = len(tags)
    if k < 2:
        raise DataError("tags must name at least two groups")
    pooled = FeatureMatrix(rows)  # tags deliberately left off the matrix
    report = kmeans(pooled, k, seed=seed)
    purity = cluster_purity(report.assignments, row_tags)
    return StudyReport(k=k, n_samples=pooled.n, silhouette=report.silhouette,
                       purity=purity, tags=tags,
                       assignments=report.assignments, row_tags=row_tags)


def cluster_purity(assignments, row_tags) -> float:
    """Fraction of rows covered by each cluster's majority tag."""
    assignments = np.asarray(assignments)
    row_tags = np.asarray(row_tags)
    covered = 0
    for c in np.unique(assignments):
        tags_in = row_tags[assignments == c]
        _, counts = np.unique(tags_in, return_counts=True)
        covered += int(counts.max())
    return covered / len(row_tags)
