"""One-step novelty detectors benchmarked against the two-step pipeline.

Each baseline emits one finite anomaly score per test row (higher = more
anomalous), so the same average-precision machinery applies to all of
them. All baselines consume the same encoding as the pipeline; this is
recorded in the benchmark report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autoencoder, clustering
from .config import PipelineConfig
from .encode import FeatureMatrix
from .errors import DataError
from .stats import TAG_FOREST, pairwise_dists, seed_sequence

EULER_GAMMA = 0.5772156649015329

LOF_DEFAULT_NEIGHBORS = 20
IF_DEFAULT_TREES = 100
IF_DEFAULT_SUBSAMPLE = 256

_REACHABILITY_FLOOR = 1e-12


def _values(matrix: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    return matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)


def score_ae_one_step(
    train: Union[FeatureMatrix, np.ndarray],
    validation: Union[FeatureMatrix, np.ndarray],
    test: Union[FeatureMatrix, np.ndarray],
    config: PipelineConfig,
) -> np.ndarray:
    """Reconstruction MSE of a frequency-filter-style autoencoder, trained
    identically but used without the second filter."""
    model = autoencoder.train_filter1(train, validation, config)
    return autoencoder.compute_mse(model, _values(test))


def score_kmeans_one_step(
    train: Union[FeatureMatrix, np.ndarray],
    test: Union[FeatureMatrix, np.ndarray],
    config: PipelineConfig,
) -> np.ndarray:
    """tanh of the raw Euclidean distance to the nearest centroid; k is
    selected by mean silhouette on the full (unfiltered) training encoding."""
    model = clustering.train_filter2(train, config)
    dists = pairwise_dists(_values(test), model.centroids).min(axis=1)
    return np.tanh(dists)


_KNN_CHUNK = 1024


def _knn_among_train(
    queries: np.ndarray, train: np.ndarray, k: int, exclude_self: bool
) -> tuple[np.ndarray, np.ndarray]:
    """k nearest training rows per query; ties break by training index.

    Queries are processed in chunks so the full pairwise matrix is never
    materialized.
    """
    n_queries = queries.shape[0]
    order = np.empty((n_queries, k), dtype=int)
    ordered_dists = np.empty((n_queries, k))
    for start in range(0, n_queries, _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, n_queries)
        dists = pairwise_dists(queries[start:stop], train)
        if exclude_self:
            rows = np.arange(start, stop)
            dists[rows - start, rows] = np.inf
        # Sort by (distance, index): argsort is stable, index is the tiebreak.
        chunk_order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        chunk_rows = np.arange(stop - start)[:, None]
        order[start:stop] = chunk_order
        ordered_dists[start:stop] = dists[chunk_rows, chunk_order]
    return order, ordered_dists


def score_lof(
    train: Union[FeatureMatrix, np.ndarray],
    test: Union[FeatureMatrix, np.ndarray],
    n_neighbors: int = LOF_DEFAULT_NEIGHBORS,
) -> np.ndarray:
    """Local outlier factor in novelty mode: test points are scored against
    their training neighbors only. Higher means more anomalous."""
    x_train = _values(train)
    x_test = _values(test)
    n = x_train.shape[0]
    if n_neighbors < 1:
        raise DataError("n_neighbors must be at least 1")
    if n_neighbors >= n:
        raise DataError(f"n_neighbors={n_neighbors} must be smaller than the training size {n}")

    train_nn, train_nn_dists = _knn_among_train(x_train, x_train, n_neighbors, exclude_self=True)
    k_distance = train_nn_dists[:, -1]

    # Local reachability density of every training point.
    reach = np.maximum(k_distance[train_nn], train_nn_dists)
    lrd_train = 1.0 / np.maximum(reach.mean(axis=1), _REACHABILITY_FLOOR)

    test_nn, test_nn_dists = _knn_among_train(x_test, x_train, n_neighbors, exclude_self=False)
    reach_test = np.maximum(k_distance[test_nn], test_nn_dists)
    lrd_test = 1.0 / np.maximum(reach_test.mean(axis=1), _REACHABILITY_FLOOR)
    return lrd_train[test_nn].mean(axis=1) / lrd_test


def _average_path_length(m: float) -> float:
    """Expected path length of an unsuccessful BST search over m points."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * (math.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m


@dataclass
class _IsolationNode:
    size: int
    feature: int = -1
    cut: float = 0.0
    left: Optional["_IsolationNode"] = None
    right: Optional["_IsolationNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _grow_tree(x: np.ndarray, rng: np.random.Generator, depth: int, limit: int) -> _IsolationNode:
    size = x.shape[0]
    if size <= 1 or depth >= limit:
        return _IsolationNode(size=size)
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    splittable = np.flatnonzero(maxs > mins)
    if splittable.size == 0:
        return _IsolationNode(size=size)
    feature = int(rng.choice(splittable))
    cut = float(rng.uniform(mins[feature], maxs[feature]))
    mask = x[:, feature] < cut
    if not mask.any() or mask.all():
        return _IsolationNode(size=size)
    return _IsolationNode(
        size=size,
        feature=feature,
        cut=cut,
        left=_grow_tree(x[mask], rng, depth + 1, limit),
        right=_grow_tree(x[~mask], rng, depth + 1, limit),
    )


def _path_length(node: _IsolationNode, row: np.ndarray) -> float:
    depth = 0
    while not node.is_leaf:
        node = node.left if row[node.feature] < node.cut else node.right
        depth += 1
    return depth + _average_path_length(node.size)


def score_if(
    train: Union[FeatureMatrix, np.ndarray],
    test: Union[FeatureMatrix, np.ndarray],
    n_trees: int = IF_DEFAULT_TREES,
    subsample: int = IF_DEFAULT_SUBSAMPLE,
    seed: int = 42,
) -> np.ndarray:
    """Isolation-forest anomaly score 2^(-E[h(x)] / c(s)) in (0, 1).

    Trees split on a uniformly random feature at a uniformly random cut in
    the node's subsample range, height-limited at ceil(log2 s).
    """
    x_train = _values(train)
    x_test = _values(test)
    if n_trees < 1:
        raise DataError("n_trees must be at least 1")
    n = x_train.shape[0]
    if n == 0:
        raise DataError("empty training matrix")
    s = min(subsample, n)
    limit = max(1, math.ceil(math.log2(max(s, 2))))
    trees = []
    for child in seed_sequence(seed, TAG_FOREST).spawn(n_trees):
        rng = np.random.default_rng(child)
        sample = x_train[rng.choice(n, size=s, replace=False)]
        trees.append(_grow_tree(sample, rng, depth=0, limit=limit))
    normalizer = _average_path_length(s)
    scores = np.empty(x_test.shape[0])
    for i, row in enumerate(x_test):
        mean_path = sum(_path_length(tree, row) for tree in trees) / n_trees
        scores[i] = 2.0 ** (-mean_path / normalizer)
    return scores


# Reference values from a prior published evaluation on the public
# dataset; the kernel-SVM detector itself is out of scope here.
OCSVM_REFERENCE_ROW = {
    "being scanned by Nmap": 0.885,
    "is executing cryptomining": 0.129,
    "macro": 0.507,
    "note": "reference values from a prior published evaluation; not reproduced by this package",
}


@dataclass
class BenchmarkReport:
    rows: dict[str, dict]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "rows": self.rows, "notes": list(self.notes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
