import numpy as np
import pytest

from flowsieve import metrics
from flowsieve.errors import DataError
from flowsieve.records import FinalLabel, LabelClass, Verdict

NMAP = LabelClass.BEING_SCANNED_BY_NMAP
CRYPTO = LabelClass.EXECUTING_CRYPTOMINING
BENIGN = LabelClass.ASSUMED_BENIGN


def _verdict(malicious: bool, index=0, tanh=None) -> Verdict:
    if tanh is None:
        tanh = 0.9 if malicious else 0.1
    return Verdict.for_infrequent(index, 0.5, 0, np.arctanh(tanh), tanh, known=not malicious)


class TestConfusion:
    def test_counts_by_scenario(self):
        labels = [NMAP, NMAP, CRYPTO, BENIGN, BENIGN, BENIGN]
        verdicts = [
            _verdict(True),
            _verdict(False),
            _verdict(True),  # other attack class: out of scope for NMAP
            _verdict(True),
            _verdict(False),
            _verdict(False),
        ]
        outcome = metrics.confusion(verdicts, labels, NMAP)
        assert (outcome.tp, outcome.fn, outcome.fp, outcome.tn) == (1, 1, 1, 2)
        assert outcome.in_scope == 5  # crypto flow excluded

    def test_all_benign_verdicts(self):
        labels = [NMAP, BENIGN]
        verdicts = [_verdict(False), _verdict(False)]
        outcome = metrics.confusion(verdicts, labels, NMAP)
        assert outcome.tp == 0 and outcome.fp == 0

    def test_count_mismatch_errors(self):
        with pytest.raises(DataError):
            metrics.confusion([_verdict(True)], [NMAP, BENIGN], NMAP)

    def test_benign_scenario_rejected(self):
        with pytest.raises(DataError):
            metrics.confusion([], [], BENIGN)

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        labels = [rng.choice([NMAP, CRYPTO, BENIGN]) for _ in range(200)]
        verdicts = [_verdict(bool(rng.integers(2)), index=i) for i in range(200)]
        for scenario in (NMAP, CRYPTO):
            outcome = metrics.confusion(verdicts, labels, scenario)
            in_scope = sum(1 for l in labels if l is scenario or l is BENIGN)
            assert outcome.in_scope == in_scope


class TestScenarioMetrics:
    def test_published_nmap_counts(self):
        outcome = metrics.ScenarioOutcome(NMAP, tp=3032, fp=315, tn=22157, fn=48)
        m = metrics.scenario_metrics(outcome)
        assert m.precision == pytest.approx(0.906, abs=1e-3)
        assert m.recall == pytest.approx(0.984, abs=1e-3)
        assert m.f1 == pytest.approx(0.944, abs=1e-3)
        assert m.fpr == pytest.approx(0.014, abs=1e-3)

    def test_published_crypto_counts(self):
        outcome = metrics.ScenarioOutcome(CRYPTO, tp=1703, fp=315, tn=22157, fn=0)
        m = metrics.scenario_metrics(outcome)
        assert m.precision == pytest.approx(0.844, abs=1e-3)
        assert m.recall == pytest.approx(1.000, abs=1e-3)
        assert m.f1 == pytest.approx(0.915, abs=1e-3)

    def test_zero_over_zero_is_undefined(self):
        outcome = metrics.ScenarioOutcome(NMAP, tp=0, fp=0, tn=5, fn=2)
        m = metrics.scenario_metrics(outcome)
        assert m.precision is None
        assert m.recall == 0.0
        assert m.f1 is None

    def test_all_zero_recall_denominator(self):
        outcome = metrics.ScenarioOutcome(NMAP, tp=0, fp=1, tn=5, fn=0)
        m = metrics.scenario_metrics(outcome)
        assert m.recall is None


def brute_force_average_precision(scores, positives):
    """Exhaustive enumeration: recompute the confusion at every distinct
    threshold from scratch."""
    scores = list(scores)
    positives = list(positives)
    total_pos = sum(positives)
    thresholds = sorted(set(scores), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for threshold in thresholds:
        tp = sum(1 for s, p in zip(scores, positives) if s >= threshold and p)
        predicted = sum(1 for s in scores if s >= threshold)
        precision = tp / predicted
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


class TestAveragePrecision:
    def test_hand_example(self):
        # thresholds 0.9, 0.8, 0.1 -> AP = (1/2)(1) + 0 + (1/2)(2/3)
        scores = np.array([0.9, 0.8, 0.1])
        positives = np.array([True, False, True])
        assert metrics.average_precision(scores, positives) == pytest.approx(
            0.8333333333, abs=1e-9
        )

    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        positives = np.array([True, True, False, False])
        assert metrics.average_precision(scores, positives) == 1.0

    def test_no_positives_errors(self):
        with pytest.raises(DataError):
            metrics.average_precision(np.array([0.5]), np.array([False]))

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 101))
            # quantized scores force plenty of ties
            scores = rng.integers(0, 10, size=n) / 10.0
            positives = rng.random(n) < 0.4
            if not positives.any():
                positives[int(rng.integers(n))] = True
            got = metrics.average_precision(scores, positives)
            want = brute_force_average_precision(scores, positives)
            assert got == want

    def test_uniform_scores_give_prevalence(self):
        scores = np.zeros(10)
        positives = np.array([True] * 3 + [False] * 7)
        assert metrics.average_precision(scores, positives) == pytest.approx(0.3)


class TestAuprcScenario:
    def test_excludes_other_attack_class(self):
        labels = [NMAP, CRYPTO, BENIGN, BENIGN]
        scores = [0.9, 0.95, 0.1, 0.2]
        # crypto flow is out of scope; nmap perfectly separated from benign
        assert metrics.auprc(scores, labels, NMAP) == 1.0

    def test_missing_positives_error(self):
        with pytest.raises(DataError):
            metrics.auprc([0.5], [BENIGN], NMAP)


class TestMacroAverage:
    def test_published_f1_pair(self):
        assert metrics.macro_average([0.944, 0.915]) == pytest.approx(0.929, abs=5e-4)

    def test_published_auprc_pair(self):
        assert metrics.macro_average([0.827, 0.855]) == pytest.approx(0.841, abs=1e-9)

    def test_single_scenario_identity(self):
        assert metrics.macro_average([0.7]) == 0.7

    def test_undefined_propagates(self):
        assert metrics.macro_average([0.9, None]) is None

    def test_empty_errors(self):
        with pytest.raises(DataError):
            metrics.macro_average([])


class TestThresholdMonotonicity:
    def test_raising_tau_never_increases_recall(self):
        rng = np.random.default_rng(2)
        n = 300
        labels = [NMAP if rng.random() < 0.3 else BENIGN for _ in range(n)]
        tanh_scores = rng.random(n)
        taus = np.linspace(0.05, 0.95, 10)
        recalls = []
        benign_predictions = []
        for tau in taus:
            verdicts = [
                Verdict.for_infrequent(i, 0.5, 0, np.arctanh(t), t, known=bool(t < tau))
                for i, t in enumerate(tanh_scores)
            ]
            outcome = metrics.confusion(verdicts, labels, NMAP)
            m = metrics.scenario_metrics(outcome)
            recalls.append(m.recall)
            benign_predictions.append(
                sum(1 for v in verdicts if v.final_label is FinalLabel.BENIGN)
            )
        assert all(b <= a + 1e-12 for a, b in zip(recalls, recalls[1:]))
        assert all(b >= a for a, b in zip(benign_predictions, benign_predictions[1:]))


class TestEvalReport:
    def test_report_assembly_and_serialization(self):
        labels = [NMAP, NMAP, CRYPTO, BENIGN, BENIGN]
        verdicts = [
            _verdict(True, 0, 0.9),
            _verdict(True, 1, 0.85),
            _verdict(True, 2, 0.95),
            Verdict.for_frequent(3, 0.0001),
            _verdict(False, 4, 0.2),
        ]
        report = metrics.build_eval_report(
            verdicts, labels, config_snapshot={"rng_seed": 1}, thresholds={"th_frequent": 0.1}
        )
        payload = report.to_dict()
        assert payload["schema_version"] == 1
        assert set(payload["scenarios"]) == {NMAP.value, CRYPTO.value}
        assert payload["macro"]["recall"] == 1.0
        assert "runtime" not in str(payload)  # volatile data never serialized

    def test_verdict_scores_convention(self):
        verdicts = [Verdict.for_frequent(0, 0.001), _verdict(True, 1, 0.8)]
        scores = metrics.verdict_scores(verdicts)
        assert scores[0] == 0.0
        assert scores[1] == pytest.approx(0.8)
