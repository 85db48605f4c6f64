"""Operator command line: ingest, train, calibrate, detect, eval, bench,
grid, sweep and synth.

Exit codes: 0 success, 1 usage/configuration, 2 data or schema problem,
3 numeric failure. Output files are staged with a .tmp suffix and renamed
only after every write succeeded, so partial outputs are never left in
place. Artifacts contain no timestamps; reruns with the same seed and
inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import ingest, pipeline
from .autoencoder import Filter1Model
from .clustering import Filter2Model, GlobalTanh, PerClusterThreshold
from .config import PipelineConfig, load_config_file
from .errors import ConfigError, DataError, FlowSieveError, NumericError, SchemaError
from .experiments import run_benchmark, run_grid, sensitivity_sweep
from .metrics import ScenarioOutcome, build_eval_report, pr_curve, scenario_metrics, verdict_scores
from .records import ATTACK_CLASSES, FlowRecord, LabelClass
from .synth import SynthConfig, generate

DEFAULT_SEED = 42

TRAINING_CSV = "training.csv"
VALIDATION_CSV = "validation.csv"
TEST_CSV = "test.csv"
CLEANSING_REPORT = "cleansing_report.json"
FILTER1_FILE = "filter1.json"
FILTER2_FILE = "filter2.json"


class UsageError(FlowSieveError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse from exiting with its own code
        raise UsageError(message)


class _StagedWriter:
    """Write every output to <name>.tmp, rename all on success.

    Used as a context manager: leaving the block without commit() (e.g.
    on an exception) removes every staged file.
    """

    def __init__(self) -> None:
        self.staged: list[tuple[Path, Path]] = []

    def __enter__(self) -> "_StagedWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.abort()

    def write_text(self, path: Path, text: str) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text, encoding="utf-8")
        self.staged.append((tmp, path))

    def commit(self) -> None:
        for tmp, final in self.staged:
            os.replace(tmp, final)
        self.staged.clear()

    def abort(self) -> None:
        for tmp, _ in self.staged:
            tmp.unlink(missing_ok=True)
        self.staged.clear()


def _build_config(args) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = load_config_file(args.config, base=config)
    updates = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        updates[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        updates["rng_seed"] = args.seed
    if updates:
        config = config.with_updates(updates)
    return config


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one configuration field (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")


def _load_partitions(data_dir: Path) -> tuple[list[FlowRecord], list[FlowRecord], list[FlowRecord]]:
    parts = []
    for name in (TRAINING_CSV, VALIDATION_CSV, TEST_CSV):
        path = data_dir / name
        if not path.exists():
            raise DataError(f"missing partition file: {path}")
        records, _ = ingest.parse_dataset(path)
        parts.append(records)
    return parts[0], parts[1], parts[2]


def _csv_text(rows: list[list[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    return buffer.getvalue()


def _dataset_text(records) -> str:
    buffer = io.StringIO()
    ingest.write_dataset(records, buffer)
    return buffer.getvalue()


def _cmd_synth(args) -> int:
    split = tuple(int(v) for v in args.split.split(","))
    if len(split) != 3:
        raise UsageError("--split expects three comma-separated day counts")
    config = SynthConfig(
        n_homes=args.homes,
        days=sum(split),
        split_days=split,  # type: ignore[arg-type]
        seed=args.seed if args.seed is not None else DEFAULT_SEED,
    )
    flows = generate(config)
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), _dataset_text(flows))
        writer.commit()
    print(f"wrote {len(flows)} synthetic flows to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    config = _build_config(args)
    split = tuple(int(v) for v in args.split.split(","))
    if len(split) != 3:
        raise UsageError("--split expects three comma-separated day counts")
    records, parse_report = ingest.parse_dataset(Path(args.input))
    if not records:
        raise DataError("no parseable rows in input")
    needs_iat = any(r.inter_arrival_time_milliseconds is None for r in records)
    if needs_iat:
        records = ingest.compute_iat(records)
    needs_pool = any(
        r.same_dest_port_count_pool is None or r.same_dest_ip_count_pool is None for r in records
    )
    if needs_pool and any(r.destination_port is not None for r in records):
        records = ingest.compute_pool_features(records)
    cleansed, cleanse_report = ingest.preprocess(records)
    if not cleansed:
        raise DataError("preprocessing dropped every row")
    partitions = ingest.partition_chronologically(
        cleansed, split_days=split, lab_network_id=args.lab_network  # type: ignore[arg-type]
    )
    training, sanitized_count = ingest.sanitize_training(
        partitions.training, config.sanitize_min_port_count
    )

    report = {
        "schema_version": 1,
        "rows_read": parse_report.rows_read,
        "rows_rejected": parse_report.rows_rejected,
        "reject_reasons": dict(sorted(parse_report.reject_reasons.items())),
        "rows_dropped_by_reason": {
            **cleanse_report.to_dict()["rows_dropped_by_reason"],
            **partitions.to_dict()["rows_dropped_by_reason"],
        },
        "pool_zero_filled": cleanse_report.pool_zero_filled,
        "sanitized_count": sanitized_count,
        "sanitize_min_port_count": config.sanitize_min_port_count,
        "partition_rows": {
            "training": len(training),
            "validation": len(partitions.validation),
            "test": len(partitions.test),
        },
        "notes": cleanse_report.notes,
    }
    outdir = Path(args.outdir)
    with _StagedWriter() as writer:
        writer.write_text(outdir / TRAINING_CSV, _dataset_text(training))
        writer.write_text(outdir / VALIDATION_CSV, _dataset_text(partitions.validation))
        writer.write_text(outdir / TEST_CSV, _dataset_text(partitions.test))
        writer.write_text(outdir / CLEANSING_REPORT, json.dumps(report, indent=2, sort_keys=True) + "\n")
        writer.commit()
    print(
        f"ingested {parse_report.rows_read} rows -> "
        f"{len(training)}/{len(partitions.validation)}/{len(partitions.test)} "
        f"training/validation/test"
    )
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    training, validation, _ = _load_partitions(Path(args.data))
    trained = pipeline.train_pipeline(training, validation, config)
    outdir = Path(args.outdir)
    with _StagedWriter() as writer:
        writer.write_text(outdir / FILTER1_FILE, json.dumps(trained.filter1.to_dict()) + "\n")
        writer.write_text(outdir / FILTER2_FILE, json.dumps(trained.filter2.to_dict()) + "\n")
        writer.commit()
    print(
        f"trained: d={trained.recipe.dimension}, epochs={len(trained.filter1.training_history)}, "
        f"th_frequent={trained.th_frequent:.6g}, k*={trained.filter2.k_star}"
    )
    return 0


def _load_models(models_dir: Path) -> tuple[Filter1Model, Filter2Model]:
    f1_path = models_dir / FILTER1_FILE
    f2_path = models_dir / FILTER2_FILE
    if not f1_path.exists() or not f2_path.exists():
        raise DataError(f"missing model files under {models_dir}")
    return Filter1Model.load(f1_path), Filter2Model.load(f2_path)


def _pipeline_from_models(config: PipelineConfig, filter1: Filter1Model, filter2: Filter2Model):
    if filter1.recipe is None:
        raise SchemaError("frequency-filter artifact lacks its encoding recipe")
    if filter1.th_frequent is None:
        raise DataError("frequency filter is not calibrated (missing threshold)")
    config = config.replace(
        ip_treatment=filter1.recipe.ip_treatment,
        numeric_treatment=filter1.recipe.numeric_treatment,
        clustering_features=filter2.feature_space,
        distance_mode=filter2.distance_mode,
    )
    return pipeline.TrainedPipeline(
        config=config,
        recipe=filter1.recipe,
        filter1=filter1,
        filter2=filter2,
        runtime_seconds={},
    )


def _cmd_calibrate(args) -> int:
    config = _build_config(args)
    filter1, filter2 = _load_models(Path(args.models))
    _, validation, _ = _load_partitions(Path(args.data))
    trained = _pipeline_from_models(config, filter1, filter2)
    recalibrated = pipeline.recalibrate(trained, validation, trained.config)
    with _StagedWriter() as writer:
        writer.write_text(Path(args.models) / FILTER1_FILE, json.dumps(recalibrated.filter1.to_dict()) + "\n")
        writer.write_text(Path(args.models) / FILTER2_FILE, json.dumps(recalibrated.filter2.to_dict()) + "\n")
        writer.commit()
    thresholds = recalibrated.filter2.per_cluster_thresholds or []
    print(
        f"calibrated: th_frequent={recalibrated.th_frequent:.6g}, "
        f"{len(thresholds)} cluster thresholds"
    )
    return 0


def _detect_mode(args, config: PipelineConfig):
    if args.mode == "per-cluster":
        return PerClusterThreshold()
    tau = args.tau if args.tau is not None else (config.global_tanh_threshold or 0.75)
    return GlobalTanh(tau)


VERDICT_HEADER = [
    "flow_index",
    "device_id",
    "flow_start_ms",
    "mse",
    "frequent",
    "assigned_cluster",
    "distance",
    "tanh_score",
    "final_label",
    "actual_label",
]


def _cmd_detect(args) -> int:
    config = _build_config(args)
    filter1, filter2 = _load_models(Path(args.models))
    trained = _pipeline_from_models(config, filter1, filter2)
    records, _ = ingest.parse_dataset(Path(args.input))
    if not records:
        raise DataError("no parseable rows in input")
    verdicts = pipeline.classify_flows(trained, records, _detect_mode(args, trained.config))
    rows = [VERDICT_HEADER]
    for record, verdict in zip(records, verdicts):
        rows.append(
            [
                str(verdict.flow_index),
                str(record.device_id),
                str(record.flow_start),
                repr(verdict.mse),
                "true" if verdict.frequent else "false",
                "" if verdict.assigned_cluster is None else str(verdict.assigned_cluster),
                "" if verdict.distance is None else repr(verdict.distance),
                "" if verdict.tanh_score is None else repr(verdict.tanh_score),
                verdict.final_label.value,
                record.actual_label.value,
            ]
        )
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), _csv_text(rows))
        writer.commit()
    malicious = sum(1 for v in verdicts if v.final_label.value == "malicious")
    print(f"classified {len(verdicts)} flows, {malicious} malicious")
    return 0


def _parse_confusion_tokens(tokens: Sequence[str]) -> ScenarioOutcome:
    values = {}
    for token in tokens:
        if "=" not in token:
            raise UsageError(f"--from-confusion expects tp=/fn=/fp=/tn= tokens, got {token!r}")
        key, _, value = token.partition("=")
        key = key.strip().lower()
        if key not in {"tp", "fn", "fp", "tn"}:
            raise UsageError(f"unknown confusion field {key!r}")
        try:
            values[key] = int(value)
        except ValueError:
            raise UsageError(f"confusion counts must be integers, got {token!r}") from None
    missing = {"tp", "fn", "fp", "tn"} - values.keys()
    if missing:
        raise UsageError(f"--from-confusion is missing {', '.join(sorted(missing))}")
    return ScenarioOutcome(
        scenario=LabelClass.BEING_SCANNED_BY_NMAP,
        tp=values["tp"],
        fp=values["fp"],
        tn=values["tn"],
        fn=values["fn"],
    )


def _read_verdict_csv(path: Path):
    from .records import Verdict

    verdicts, labels = [], []
    with open(path, "r", encoding="utf-8", newline="") as stream:
        reader = csv.DictReader(stream)
        for i, row in enumerate(reader):
            labels.append(LabelClass.parse(row["actual_label"]))
            if row["frequent"] == "true":
                verdicts.append(Verdict.for_frequent(i, float(row["mse"])))
            else:
                verdicts.append(
                    Verdict.for_infrequent(
                        i,
                        float(row["mse"]),
                        int(row["assigned_cluster"]),
                        float(row["distance"]),
                        float(row["tanh_score"]),
                        row["final_label"] == "benign",
                    )
                )
    return verdicts, labels


def _cmd_eval(args) -> int:
    config = _build_config(args)
    if args.from_confusion:
        outcome = _parse_confusion_tokens(args.from_confusion)
        metrics = scenario_metrics(outcome)
        payload = {
            "tp": outcome.tp,
            "fp": outcome.fp,
            "tn": outcome.tn,
            "fn": outcome.fn,
            "fpr": metrics.fpr,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if args.out:
            with _StagedWriter() as writer:
                writer.write_text(Path(args.out), text + "\n")
                writer.commit()
        print(text)
        return 0
    if not args.verdicts:
        raise UsageError("eval needs --verdicts or --from-confusion")
    if not args.out:
        raise UsageError("eval --verdicts needs --out for the report")

    verdicts, labels = _read_verdict_csv(Path(args.verdicts))
    report = build_eval_report(
        verdicts,
        labels,
        config_snapshot=config.to_dict(),
        thresholds={"source": "verdict csv"},
    )
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), report.to_json())
        if args.pr_curve:
            scores = verdict_scores(verdicts)
            rows = [["scenario", "threshold", "precision", "recall"]]
            for scenario in ATTACK_CLASSES:
                if not any(label is scenario for label in labels):
                    continue
                for threshold, precision, recall in pr_curve(scores, labels, scenario):
                    rows.append([scenario.value, repr(threshold), repr(precision), repr(recall)])
            writer.write_text(Path(args.pr_curve), _csv_text(rows))
        writer.commit()
    print(json.dumps(report.to_dict()["macro"], sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    config = _build_config(args)
    training, validation, test = _load_partitions(Path(args.data))
    report = run_benchmark(training, validation, test, config)
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), report.to_json())
        writer.commit()
    macro = {name: row.get("macro") for name, row in report.rows.items()}
    print(json.dumps(macro, sort_keys=True))
    return 0


def _cmd_grid(args) -> int:
    config = _build_config(args)
    training, validation, test = _load_partitions(Path(args.data))
    results = run_grid(training, validation, test, config)
    payload = {
        "schema_version": 1,
        "results": [result.to_dict() for result in results],
        "best": results[0].to_dict() if results else None,
    }
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), json.dumps(payload, indent=2, sort_keys=True) + "\n")
        writer.commit()
    best = results[0] if results else None
    if best is not None and best.report is not None:
        print(f"best macro-AUPRC {best.macro_auprc:.3f} with {best.config.to_dict()}")
    return 0


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    training, validation, test = _load_partitions(Path(args.data))
    sizes = [int(v) for v in args.sizes.split(",") if v.strip()]
    if not sizes:
        raise UsageError("--sizes expects a comma-separated list of integers")
    points = sensitivity_sweep(training, validation, test, sizes, config)
    rows = [["size", "macro_precision", "macro_recall", "macro_f1", "error"]]
    for point in points:
        rows.append(
            [
                str(point.size),
                "" if point.macro_precision is None else repr(point.macro_precision),
                "" if point.macro_recall is None else repr(point.macro_recall),
                "" if point.macro_f1 is None else repr(point.macro_f1),
                point.error or "",
            ]
        )
    with _StagedWriter() as writer:
        writer.write_text(Path(args.out), _csv_text(rows))
        writer.commit()
    print(f"swept {len(points)} sizes")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="flowsieve",
        description="Two-step collaborative anomaly detection for smart-home flow telemetry",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--homes", type=int, default=5)
    p.add_argument("--split", default="4,1,2", help="training,validation,test days")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="parse, cleanse and partition a dataset CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--split", default="13,3,5")
    p.add_argument("--lab-network", type=int, default=5)
    _add_config_options(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train both filters on an ingested dataset")
    p.add_argument("--data", required=True, help="directory produced by ingest")
    p.add_argument("--outdir", required=True)
    _add_config_options(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="recompute thresholds on validation data")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    _add_config_options(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("detect", help="classify flows with trained models")
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["global-tanh", "per-cluster"], default="global-tanh")
    p.add_argument("--tau", type=float, default=None)
    _add_config_options(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="evaluate verdicts or raw confusion counts")
    p.add_argument("--verdicts")
    p.add_argument("--out")
    p.add_argument("--pr-curve")
    p.add_argument(
        "--from-confusion",
        nargs=4,
        metavar="K=V",
        help="compute metrics from tp= fn= fp= tn= counts",
    )
    _add_config_options(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="compare against one-step baselines")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("grid", help="run the hyperparameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("sweep", help="training-size sensitivity sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--sizes", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
