"""The known-behavior filter: k-means over infrequent flows, silhouette
driven choice of k, per-cluster distance thresholds and the tanh
abnormality score.

k-means uses k-means++ seeding with ten seeded restarts and Lloyd's
iteration (centroid-shift tolerance 1e-4, at most 300 iterations); the
restart with the lowest inertia wins. Empty clusters are reseeded to the
point farthest from its nearest centroid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import ClusteringFeatures, DistanceMode, PipelineConfig
from .encode import FeatureMatrix, PcaBasis
from .errors import DataError, DegenerateDataError, SchemaError
from .stats import (
    TAG_KMEANS,
    TAG_SILHOUETTE_SAMPLE,
    derive_rng,
    nearest_rank_percentile,
    pairwise_dists,
    pairwise_sq_dists,
    seed_sequence,
)

FILTER2_SCHEMA_VERSION = 1

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_SHIFT_TOL = 1e-4

_SILHOUETTE_CHUNK = 512
# Below this row count distances come from direct differences, which are
# exact where the squared-norm expansion suffers cancellation.
_SILHOUETTE_EXACT_N = 2048


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float]


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=float)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    closest_sq = pairwise_sq_dists(x, centroids[:1])[:, 0]
    for i in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=closest_sq / total))
        centroids[i] = x[choice]
        np.minimum(closest_sq, pairwise_sq_dists(x, centroids[i : i + 1])[:, 0], out=closest_sq)
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> KMeansResult:
    n, _ = x.shape
    k = centroids.shape[0]
    centroids = centroids.copy()
    assignments = np.zeros(n, dtype=int)
    history: list[float] = []
    for _ in range(KMEANS_MAX_ITER):
        sq = pairwise_sq_dists(x, centroids)
        assignments = sq.argmin(axis=1)
        closest_sq = sq[np.arange(n), assignments]
        counts = np.bincount(assignments, minlength=k)
        if (counts == 0).any():
            # Reseed each empty cluster to the point farthest from its
            # nearest centroid, excluding points already chosen.
            spare = closest_sq.copy()
            for empty in np.flatnonzero(counts == 0):
                farthest = int(spare.argmax())
                centroids[empty] = x[farthest]
                spare[farthest] = -1.0
            sq = pairwise_sq_dists(x, centroids)
            assignments = sq.argmin(axis=1)
            closest_sq = sq[np.arange(n), assignments]
            counts = np.bincount(assignments, minlength=k)
        history.append(float(closest_sq.sum()))
        new_centroids = centroids.copy()
        for c in range(k):
            if counts[c] > 0:
                new_centroids[c] = x[assignments == c].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < KMEANS_SHIFT_TOL:
            break
    sq = pairwise_sq_dists(x, centroids)
    assignments = sq.argmin(axis=1)
    inertia = float(sq[np.arange(n), assignments].sum())
    return KMeansResult(centroids, assignments, inertia, history)


def kmeans_fit(
    matrix: Union[FeatureMatrix, np.ndarray], k: int, seed: int, restarts: int = KMEANS_RESTARTS
) -> KMeansResult:
    """Best of `restarts` seeded k-means++/Lloyd runs by inertia."""
    x = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)
    n = x.shape[0]
    if k < 2:
        raise DataError("k must be at least 2")
    if n < k:
        raise DataError(f"cannot fit {k} clusters on {n} rows")
    best: Optional[KMeansResult] = None
    for child in seed_sequence(seed, TAG_KMEANS).spawn(restarts):
        rng = np.random.default_rng(child)
        result = _lloyd(x, _plus_plus_init(x, k, rng))
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


def silhouette_mean(
    matrix: Union[FeatureMatrix, np.ndarray], assignments: np.ndarray
) -> float:
    """Mean silhouette over all points.

    Per point: a = mean distance to co-cluster points (excluding itself),
    b = smallest mean distance to any other cluster, s = (b-a)/max(a,b).
    Points in singleton clusters score zero. Raises on fewer than two
    non-empty clusters, or when every non-singleton point has zero
    distances in both terms (indistinguishable input).
    """
    x = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)
    assignments = np.asarray(assignments)
    labels, relabeled = np.unique(assignments, return_inverse=True)
    k = labels.shape[0]
    if k < 2:
        raise DataError("silhouette requires at least two non-empty clusters")
    n = x.shape[0]
    counts = np.bincount(relabeled, minlength=k).astype(float)
    membership = np.zeros((n, k))
    membership[np.arange(n), relabeled] = 1.0

    scores = np.zeros(n)
    any_positive = False
    has_non_singleton = bool((counts[relabeled] > 1).any())
    for start in range(0, n, _SILHOUETTE_CHUNK):
        stop = min(start + _SILHOUETTE_CHUNK, n)
        if n <= _SILHOUETTE_EXACT_N:
            diff = x[start:stop, None, :] - x[None, :, :]
            dists = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        else:
            dists = pairwise_dists(x[start:stop], x)
        cluster_sums = dists @ membership  # (chunk, k)
        own = relabeled[start:stop]
        rows = np.arange(stop - start)
        own_counts = counts[own]
        with np.errstate(invalid="ignore", divide="ignore"):
            a = cluster_sums[rows, own] / np.maximum(own_counts - 1.0, 1.0)
            mean_other = cluster_sums / counts[None, :]
            mean_other[rows, own] = np.inf
            b = mean_other.min(axis=1)
            denom = np.maximum(a, b)
            s = np.where(denom > 0.0, (b - a) / np.where(denom > 0.0, denom, 1.0), 0.0)
        s = np.where(own_counts > 1.0, s, 0.0)  # singleton convention
        any_positive = any_positive or bool((denom[own_counts > 1.0] > 0.0).any())
        scores[start:stop] = s
    if has_non_singleton and not any_positive:
        raise DegenerateDataError("silhouette undefined: all pairwise distances are zero")
    return float(scores.mean())


@dataclass
class Filter2Model:
    """Known-behavior filter: centroids, thresholds and the feature space."""

    k_star: int
    centroids: np.ndarray
    per_cluster_thresholds: Optional[list[float]]
    distance_mode: DistanceMode
    feature_space: ClusteringFeatures
    per_cluster_mean: Optional[np.ndarray] = None
    per_cluster_std: Optional[np.ndarray] = None
    pca_basis: Optional[PcaBasis] = None
    silhouette_by_k: dict[int, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return int(self.centroids.shape[1])

    def to_dict(self) -> dict:
        return {
            "schema_version": FILTER2_SCHEMA_VERSION,
            "k_star": self.k_star,
            "centroids": self.centroids.tolist(),
            "per_cluster_thresholds": self.per_cluster_thresholds,
            "distance_mode": self.distance_mode.value,
            "feature_space": self.feature_space.value,
            "per_cluster_mean": None if self.per_cluster_mean is None else self.per_cluster_mean.tolist(),
            "per_cluster_std": None if self.per_cluster_std is None else self.per_cluster_std.tolist(),
            "pca_basis": None if self.pca_basis is None else self.pca_basis.to_dict(),
            "silhouette_by_k": {str(k): v for k, v in self.silhouette_by_k.items()},
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Filter2Model":
        version = data.get("schema_version")
        if version != FILTER2_SCHEMA_VERSION:
            raise SchemaError(f"unsupported cluster-filter schema version: {version!r}")
        return cls(
            k_star=int(data["k_star"]),
            centroids=np.asarray(data["centroids"], dtype=float),
            per_cluster_thresholds=data.get("per_cluster_thresholds"),
            distance_mode=DistanceMode(data["distance_mode"]),
            feature_space=ClusteringFeatures(data["feature_space"]),
            per_cluster_mean=None
            if data.get("per_cluster_mean") is None
            else np.asarray(data["per_cluster_mean"], dtype=float),
            per_cluster_std=None
            if data.get("per_cluster_std") is None
            else np.asarray(data["per_cluster_std"], dtype=float),
            pca_basis=None if data.get("pca_basis") is None else PcaBasis.from_dict(data["pca_basis"]),
            silhouette_by_k={int(k): float(v) for k, v in data.get("silhouette_by_k", {}).items()},
            notes=list(data.get("notes", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Filter2Model":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_filter2(matrix: Union[FeatureMatrix, np.ndarray], config: PipelineConfig) -> Filter2Model:
    """Fit k-means for every k in [k_min, k_max], keep the k with the best
    mean silhouette (ties break to the smallest k) and refit at it.

    When fewer rows than k_max are available, k_max shrinks to the row
    count with a warning recorded in the model.
    """
    x = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)
    n = x.shape[0]
    notes: list[str] = []
    if n < 2:
        raise DataError(f"cannot cluster {n} rows")
    if not (x != x[0]).any():
        raise DegenerateDataError("all rows are identical; silhouette undefined for every k")
    k_max = config.k_max
    if n < k_max:
        k_max = n
        notes.append(f"k_max shrunk to {n}: fewer rows than the configured maximum")
    if k_max < config.k_min:
        raise DataError(f"only {n} rows available, k_min={config.k_min} not reachable")

    sample_cap = config.silhouette_sample_max
    silhouette_by_k: dict[int, float] = {}
    best_k: Optional[int] = None
    best_score = -math.inf
    for k in range(config.k_min, k_max + 1):
        result = kmeans_fit(x, k, seed_for_k(config.rng_seed, k))
        if n > sample_cap:
            rng = derive_rng(config.rng_seed, TAG_SILHOUETTE_SAMPLE, k)
            sample = rng.choice(n, size=sample_cap, replace=False)
            sub_assign = result.assignments[sample]
            if np.unique(sub_assign).shape[0] >= 2:
                score = silhouette_mean(x[sample], sub_assign)
            else:
                score = silhouette_mean(x, result.assignments)
        else:
            score = silhouette_mean(x, result.assignments)
        silhouette_by_k[k] = score
        if score > best_score:
            best_score = score
            best_k = k
    assert best_k is not None
    if n > sample_cap:
        notes.append(f"silhouette scored on a seeded sample of {sample_cap} rows")

    final = kmeans_fit(x, best_k, seed_for_k(config.rng_seed, best_k))
    model = Filter2Model(
        k_star=best_k,
        centroids=final.centroids,
        per_cluster_thresholds=None,
        distance_mode=config.distance_mode,
        feature_space=config.clustering_features,
        silhouette_by_k=silhouette_by_k,
        notes=notes,
    )
    if config.distance_mode is DistanceMode.NORMALIZED_EUCLIDEAN:
        _attach_cluster_scales(model, x, final.assignments)
    return model


def seed_for_k(seed: int, k: int) -> int:
    # Stable per-k derivation so the refit at k* reuses the trial's stream.
    return (seed * 1_000_003 + k) & 0xFFFFFFFFFFFFFFFF


def _attach_cluster_scales(model: Filter2Model, x: np.ndarray, assignments: np.ndarray) -> None:
    k, d = model.centroids.shape
    means = np.zeros((k, d))
    stds = np.zeros((k, d))
    for c in range(k):
        members = x[assignments == c]
        if members.shape[0] > 0:
            means[c] = members.mean(axis=0)
            stds[c] = members.std(axis=0)
    # Degenerate-variance guard: a zero std cannot divide; substitute the
    # smallest positive std of the same cluster, then of any cluster.
    global_positive = stds[stds > 0.0]
    global_floor = float(global_positive.min()) if global_positive.size else 1.0
    replaced = []
    for c in range(k):
        zero_dims = np.flatnonzero(stds[c] <= 0.0)
        if zero_dims.size:
            row_positive = stds[c][stds[c] > 0.0]
            fill = float(row_positive.min()) if row_positive.size else global_floor
            stds[c, zero_dims] = fill
            replaced.append((c, len(zero_dims)))
    if replaced:
        detail = ", ".join(f"cluster {c}: {m} dims" for c, m in replaced)
        model.notes.append(f"zero-variance guard replaced stds ({detail})")
    model.per_cluster_mean = means
    model.per_cluster_std = stds


def assign_and_distance(model: Filter2Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row, with the distance of the configured mode
    used both for the assignment and as the abnormality measure."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.dimension:
        raise DataError(
            f"vector dimension {x.shape[1]} does not match cluster space {model.dimension}"
        )
    if model.distance_mode is DistanceMode.RAW_EUCLIDEAN:
        dists = pairwise_dists(x, model.centroids)
    else:
        if model.per_cluster_std is None:
            raise DataError("normalized distances require per-cluster scales")
        d = model.dimension
        k = model.centroids.shape[0]
        dists = np.empty((x.shape[0], k))
        for c in range(k):
            z = (x - model.centroids[c]) / model.per_cluster_std[c]
            dists[:, c] = np.sqrt(np.einsum("ij,ij->i", z, z) / d)
    assignments = dists.argmin(axis=1)
    return assignments, dists[np.arange(x.shape[0]), assignments]


def set_cluster_thresholds(
    model: Filter2Model, validation: Union[FeatureMatrix, np.ndarray], pctl_known: float
) -> list[float]:
    """Per-cluster nearest-rank percentile of the validation distances.

    Clusters without validation members get threshold zero: with no
    evidence that membership is benign, any future member counts as
    unknown.
    """
    x = validation.values if isinstance(validation, FeatureMatrix) else np.asarray(validation, dtype=float)
    if x.shape[0] == 0:
        raise DataError("cannot calibrate cluster thresholds on an empty validation set")
    assignments, distances = assign_and_distance(model, x)
    thresholds = []
    for c in range(model.centroids.shape[0]):
        member_distances = distances[assignments == c]
        if member_distances.size == 0:
            thresholds.append(0.0)
        else:
            thresholds.append(nearest_rank_percentile(member_distances, pctl_known))
    return thresholds


def with_thresholds(model: Filter2Model, thresholds: list[float]) -> Filter2Model:
    return replace(model, per_cluster_thresholds=list(thresholds))


@dataclass(frozen=True)
class PerClusterThreshold:
    """Compare each flow's distance against its cluster's threshold."""


@dataclass(frozen=True)
class GlobalTanh:
    """Compare tanh(distance) against one global threshold."""

    tau: float = 0.75


ClassifyMode = Union[PerClusterThreshold, GlobalTanh]


@dataclass(frozen=True)
class ClusterScore:
    assigned_cluster: int
    distance: float
    tanh_score: float
    known: bool


def score_and_classify(
    vectors: np.ndarray, model: Filter2Model, mode: ClassifyMode
) -> list[ClusterScore]:
    """Assign flows to their nearest cluster and decide known vs unknown.

    Both modes use a strict comparison: a flow exactly at the threshold is
    unknown.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=float))
    assignments, distances = assign_and_distance(model, x)
    tanh_scores = np.tanh(distances)
    if isinstance(mode, GlobalTanh):
        known_flags = tanh_scores < mode.tau
    else:
        if model.per_cluster_thresholds is None:
            raise DataError("per-cluster classification requires calibrated thresholds")
        th = np.asarray(model.per_cluster_thresholds, dtype=float)
        known_flags = distances < th[assignments]
    return [
        ClusterScore(int(a), float(d), float(t), bool(k))
        for a, d, t, k in zip(assignments, distances, tanh_scores, known_flags)
    ]
