"""End-to-end glue: train both filters, calibrate thresholds and classify.

Stage order: encode (recipe fitted on training flows only), train the
frequency filter, calibrate its threshold on validation, select the
clustering feature space, train the known-behavior filter on the
infrequent training rows, calibrate its per-cluster thresholds on the
infrequent validation rows.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autoencoder, clustering, encode
from .clustering import ClassifyMode, Filter2Model, GlobalTanh, PerClusterThreshold
from .config import ClusteringFeatures, PipelineConfig
from .encode import EncodingRecipe, FeatureMatrix
from .errors import DataError
from .metrics import EvalReport, build_eval_report
from .records import FlowRecord, Verdict


@dataclass
class TrainedPipeline:
    config: PipelineConfig
    recipe: EncodingRecipe
    filter1: autoencoder.Filter1Model
    filter2: Filter2Model
    runtime_seconds: dict[str, float]

    @property
    def th_frequent(self) -> float:
        assert self.filter1.th_frequent is not None
        return self.filter1.th_frequent


def _project_for_clustering(
    pipeline_or_parts, matrix: FeatureMatrix
) -> FeatureMatrix:
    """Project an encoded matrix into the trained clustering feature space."""
    filter1 = pipeline_or_parts.filter1
    filter2 = pipeline_or_parts.filter2
    mode = filter2.feature_space
    if mode is ClusteringFeatures.PCA:
        return encode.project_features(matrix, mode, aux=filter2.pca_basis)
    if mode is ClusteringFeatures.AE_BOTTLENECK:
        return encode.project_features(matrix, mode, aux=filter1)
    return encode.project_features(matrix, mode)


def train_pipeline(
    training_flows: Sequence[FlowRecord],
    validation_flows: Sequence[FlowRecord],
    config: PipelineConfig,
) -> TrainedPipeline:
    if not training_flows:
        raise DataError("empty training partition")
    if not validation_flows:
        raise DataError("empty validation partition")
    runtime: dict[str, float] = {}

    t0 = time.perf_counter()
    recipe = encode.fit_recipe(list(training_flows), config)
    train_matrix = encode.apply_recipe(list(training_flows), recipe)
    val_matrix = encode.apply_recipe(list(validation_flows), recipe)
    runtime["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    filter1 = autoencoder.train_filter1(train_matrix, val_matrix, config)
    th_frequent = autoencoder.set_frequency_threshold(filter1, val_matrix, config.pctl_frequent)
    filter1 = autoencoder.with_threshold(filter1, th_frequent)
    runtime["filter1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_mse = autoencoder.compute_mse(filter1, train_matrix)
    val_mse = autoencoder.compute_mse(filter1, val_matrix)
    infrequent_train = train_matrix.take(~autoencoder.classify_frequent_rows(train_mse, th_frequent))
    infrequent_val = val_matrix.take(~autoencoder.classify_frequent_rows(val_mse, th_frequent))
    if infrequent_train.n_rows == 0:
        raise DataError("no infrequent training rows below the configured percentile")

    pca_basis = None
    if config.clustering_features is ClusteringFeatures.PCA:
        pca_basis = encode.fit_pca(infrequent_train)
        train_proj = encode.project_features(infrequent_train, ClusteringFeatures.PCA, aux=pca_basis)
        val_proj = encode.project_features(infrequent_val, ClusteringFeatures.PCA, aux=pca_basis)
    elif config.clustering_features is ClusteringFeatures.AE_BOTTLENECK:
        train_proj = encode.project_features(
            infrequent_train, ClusteringFeatures.AE_BOTTLENECK, aux=filter1
        )
        val_proj = encode.project_features(
            infrequent_val, ClusteringFeatures.AE_BOTTLENECK, aux=filter1
        )
    else:
        train_proj = encode.project_features(infrequent_train, config.clustering_features)
        val_proj = encode.project_features(infrequent_val, config.clustering_features)

    filter2 = clustering.train_filter2(train_proj, config)
    filter2.pca_basis = pca_basis
    thresholds = clustering.set_cluster_thresholds(filter2, val_proj, config.pctl_known)
    filter2 = clustering.with_thresholds(filter2, thresholds)
    runtime["filter2"] = time.perf_counter() - t0

    return TrainedPipeline(
        config=config,
        recipe=recipe,
        filter1=filter1,
        filter2=filter2,
        runtime_seconds=runtime,
    )


def recalibrate(
    pipeline: TrainedPipeline, validation_flows: Sequence[FlowRecord], config: Optional[PipelineConfig] = None
) -> TrainedPipeline:
    """Recompute both thresholds on (new) validation flows."""
    config = config or pipeline.config
    val_matrix = encode.apply_recipe(list(validation_flows), pipeline.recipe)
    th_frequent = autoencoder.set_frequency_threshold(
        pipeline.filter1, val_matrix, config.pctl_frequent
    )
    filter1 = autoencoder.with_threshold(pipeline.filter1, th_frequent)
    val_mse = autoencoder.compute_mse(filter1, val_matrix)
    infrequent_val = val_matrix.take(~autoencoder.classify_frequent_rows(val_mse, th_frequent))
    parts = TrainedPipeline(config, pipeline.recipe, filter1, pipeline.filter2, dict(pipeline.runtime_seconds))
    val_proj = _project_for_clustering(parts, infrequent_val)
    thresholds = clustering.set_cluster_thresholds(pipeline.filter2, val_proj, config.pctl_known)
    filter2 = clustering.with_thresholds(pipeline.filter2, thresholds)
    return TrainedPipeline(config, pipeline.recipe, filter1, filter2, dict(pipeline.runtime_seconds))


def default_mode(config: PipelineConfig) -> ClassifyMode:
    if config.global_tanh_threshold is None:
        return PerClusterThreshold()
    return GlobalTanh(config.global_tanh_threshold)


def classify_matrix(
    pipeline: TrainedPipeline, matrix: FeatureMatrix, mode: Optional[ClassifyMode] = None
) -> list[Verdict]:
    """One verdict per row, in row order."""
    mode = mode if mode is not None else default_mode(pipeline.config)
    mses = autoencoder.compute_mse(pipeline.filter1, matrix)
    frequent = autoencoder.classify_frequent_rows(mses, pipeline.th_frequent)
    verdicts: list[Optional[Verdict]] = [None] * matrix.n_rows
    for row in np.flatnonzero(frequent):
        verdicts[row] = Verdict.for_frequent(int(matrix.row_indices[row]), float(mses[row]))
    infrequent_rows = np.flatnonzero(~frequent)
    if infrequent_rows.size:
        projected = _project_for_clustering(pipeline, matrix.take(infrequent_rows))
        scores = clustering.score_and_classify(projected.values, pipeline.filter2, mode)
        for row, score in zip(infrequent_rows, scores):
            verdicts[row] = Verdict.for_infrequent(
                int(matrix.row_indices[row]),
                float(mses[row]),
                score.assigned_cluster,
                score.distance,
                score.tanh_score,
                score.known,
            )
    assert all(v is not None for v in verdicts)
    return verdicts  # type: ignore[return-value]


def classify_flows(
    pipeline: TrainedPipeline, flows: Sequence[FlowRecord], mode: Optional[ClassifyMode] = None
) -> list[Verdict]:
    matrix = encode.apply_recipe(list(flows), pipeline.recipe)
    return classify_matrix(pipeline, matrix, mode)


def evaluate_pipeline(
    pipeline: TrainedPipeline,
    test_flows: Sequence[FlowRecord],
    mode: Optional[ClassifyMode] = None,
) -> tuple[EvalReport, list[Verdict]]:
    """Classify the test flows and build the evaluation report."""
    mode = mode if mode is not None else default_mode(pipeline.config)
    t0 = time.perf_counter()
    verdicts = classify_flows(pipeline, test_flows, mode)
    detect_seconds = time.perf_counter() - t0
    labels = [flow.actual_label for flow in test_flows]
    thresholds = {
        "th_frequent": pipeline.th_frequent,
        "per_cluster_thresholds": pipeline.filter2.per_cluster_thresholds,
        "global_tanh_threshold": mode.tau if isinstance(mode, GlobalTanh) else None,
        "mode": "global_tanh" if isinstance(mode, GlobalTanh) else "per_cluster",
    }
    runtime = dict(pipeline.runtime_seconds)
    runtime["detect"] = detect_seconds
    report = build_eval_report(
        verdicts,
        labels,
        config_snapshot=pipeline.config.to_dict(),
        thresholds=thresholds,
        runtime_seconds=runtime,
    )
    return report, verdicts
