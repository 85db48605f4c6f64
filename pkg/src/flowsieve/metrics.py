"""Evaluation: confusion accounting, FPR/precision/recall/F1, average
precision over the score sweep, and macro-averaging across attack
scenarios.

Undefined ratios (0/0) surface as None rather than silently becoming
zero, so degenerate runs fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .records import ATTACK_CLASSES, FinalLabel, LabelClass, Verdict

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScenarioOutcome:
    scenario: LabelClass
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def in_scope(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(
    verdicts: Sequence[Verdict], labels: Sequence[LabelClass], scenario: LabelClass
) -> ScenarioOutcome:
    """Confusion counts for one attack scenario.

    Positives are the flows of the scenario's attack class, negatives the
    assumed-benign flows; flows of other attack classes stay out of scope.
    """
    if not scenario.is_attack:
        raise DataError("a scenario must be an attack class")
    if len(verdicts) != len(labels):
        raise DataError(
            f"verdict/label count mismatch: {len(verdicts)} vs {len(labels)}"
        )
    tp = fp = tn = fn = 0
    for verdict, label in zip(verdicts, labels):
        malicious = verdict.final_label is FinalLabel.MALICIOUS
        if label is scenario:
            if malicious:
                tp += 1
            else:
                fn += 1
        elif label is LabelClass.ASSUMED_BENIGN:
            if malicious:
                fp += 1
            else:
                tn += 1
    return ScenarioOutcome(scenario, tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class ScenarioMetrics:
    fpr: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    if denominator == 0:
        return None
    return numerator / denominator


def scenario_metrics(outcome: ScenarioOutcome) -> ScenarioMetrics:
    fpr = _ratio(outcome.fp, outcome.fp + outcome.tn)
    precision = _ratio(outcome.tp, outcome.tp + outcome.fp)
    recall = _ratio(outcome.tp, outcome.tp + outcome.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return ScenarioMetrics(fpr=fpr, precision=precision, recall=recall, f1=f1)


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP = sum over descending unique score thresholds of (R_n - R_{n-1}) * P_n,
    ties processed together."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    total_pos = int(positives.sum())
    if total_pos == 0:
        raise DataError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order]
    ap = 0.0
    previous_recall = 0.0
    tp = 0
    seen = 0
    n = scores.shape[0]
    i = 0
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        tp += int(sorted_pos[i:j].sum())
        seen = j
        precision = tp / seen
        recall = tp / total_pos
        ap += (recall - previous_recall) * precision
        previous_recall = recall
        i = j
    return ap


def auprc(
    scores: Sequence[float], labels: Sequence[LabelClass], scenario: LabelClass
) -> float:
    """Average precision of the scenario's attack flows against benign flows."""
    scores = np.asarray(scores, dtype=float)
    labels = list(labels)
    if scores.shape[0] != len(labels):
        raise DataError("score/label count mismatch")
    mask = np.array(
        [label is scenario or label is LabelClass.ASSUMED_BENIGN for label in labels]
    )
    positives = np.array([label is scenario for label in labels])
    if not positives.any():
        raise DataError(f"no flows labeled {scenario.value!r}")
    return average_precision(scores[mask], positives[mask])


def pr_curve(
    scores: Sequence[float], labels: Sequence[LabelClass], scenario: LabelClass
) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) points over descending unique scores."""
    scores = np.asarray(scores, dtype=float)
    labels = list(labels)
    mask = np.array(
        [label is scenario or label is LabelClass.ASSUMED_BENIGN for label in labels]
    )
    positives = np.array([label is scenario for label in labels])[mask]
    sel = scores[mask]
    total_pos = int(positives.sum())
    if total_pos == 0:
        raise DataError(f"no flows labeled {scenario.value!r}")
    order = np.argsort(-sel, kind="stable")
    points = []
    tp = 0
    seen = 0
    i = 0
    n = sel.shape[0]
    while i < n:
        threshold = sel[order[i]]
        j = i
        while j < n and sel[order[j]] == threshold:
            tp += int(positives[order[j]])
            j += 1
        seen = j
        points.append((float(threshold), tp / seen, tp / total_pos))
        i = j
    return points


def macro_average(values: Sequence[Optional[float]]) -> Optional[float]:
    """Arithmetic mean over scenarios; any undefined value stays undefined."""
    values = list(values)
    if not values:
        raise DataError("macro average of zero scenarios")
    if any(v is None for v in values):
        return None
    return float(sum(values) / len(values))


def verdict_scores(verdicts: Sequence[Verdict]) -> np.ndarray:
    """Anomaly score per flow: frequent flows score zero, infrequent flows
    their tanh cluster distance."""
    return np.array(
        [0.0 if v.frequent else float(v.tanh_score) for v in verdicts], dtype=float
    )


@dataclass
class ScenarioReport:
    outcome: ScenarioOutcome
    metrics: ScenarioMetrics
    auprc: Optional[float]

    def to_dict(self) -> dict:
        return {
            "tp": self.outcome.tp,
            "fp": self.outcome.fp,
            "tn": self.outcome.tn,
            "fn": self.outcome.fn,
            "fpr": self.metrics.fpr,
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "f1": self.metrics.f1,
            "auprc": self.auprc,
        }


@dataclass
class EvalReport:
    """Per-scenario metrics, macro-averages and the run's configuration.

    Stage runtimes are kept in memory for operators but excluded from the
    serialized artifact, which must be byte-identical across reruns with
    the same seed.
    """

    scenarios: dict[str, ScenarioReport]
    macro: dict[str, Optional[float]]
    config_snapshot: dict
    thresholds: dict
    runtime_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scenarios": {name: report.to_dict() for name, report in self.scenarios.items()},
            "macro": dict(self.macro),
            "config": dict(self.config_snapshot),
            "thresholds": dict(self.thresholds),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_eval_report(
    verdicts: Sequence[Verdict],
    labels: Sequence[LabelClass],
    config_snapshot: dict,
    thresholds: dict,
    runtime_seconds: Optional[dict[str, float]] = None,
) -> EvalReport:
    """Assemble the full report for every attack scenario present."""
    scores = verdict_scores(verdicts)
    scenario_reports: dict[str, ScenarioReport] = {}
    for scenario in ATTACK_CLASSES:
        if not any(label is scenario for label in labels):
            continue
        outcome = confusion(verdicts, labels, scenario)
        scenario_reports[scenario.value] = ScenarioReport(
            outcome=outcome,
            metrics=scenario_metrics(outcome),
            auprc=auprc(scores, labels, scenario),
        )
    if not scenario_reports:
        raise DataError("no attack-labeled flows to evaluate")
    reports = list(scenario_reports.values())
    macro = {
        "fpr": macro_average([r.metrics.fpr for r in reports]),
        "precision": macro_average([r.metrics.precision for r in reports]),
        "recall": macro_average([r.metrics.recall for r in reports]),
        "f1": macro_average([r.metrics.f1 for r in reports]),
        "auprc": macro_average([r.auprc for r in reports]),
    }
    return EvalReport(
        scenarios=scenario_reports,
        macro=macro,
        config_snapshot=config_snapshot,
        thresholds=thresholds,
        runtime_seconds=dict(runtime_seconds or {}),
    )
