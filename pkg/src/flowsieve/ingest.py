"""Dataset ingestion: CSV parsing, derived/collaborative features,
cleansing, sanitization and chronological partitioning.

The external CSV schema uses the published column names verbatim; headers
are matched case-insensitively on read and written canonically. Malformed
data rows are counted and reported, never fatal; only schema-level
problems (missing mandatory columns, empty stream) abort ingestion.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Optional, Union

from .errors import DataError, SchemaError
from .records import (
    FlowRecord,
    LabelClass,
    PartitionTag,
    flow_start_ms,
    split_flow_start,
)

# Canonical column names of the published schema, in publication order.
CANONICAL_COLUMNS = (
    "device_id",
    "flow_start_day",
    "flow_start_hour",
    "flow_start_minute",
    "flow_start_second",
    "flow_start_millisecond",
    "source_network_id",
    "protocol_identifier",
    "flow_duration_milliseconds",
    "octet_delta_count",
    "packet_delta_count",
    "avg_packet_size",
    "flow_end_reason",
    "tcp_control_bits",
    "network_class_of_destination_IP_address",
    "network_prefix_of_destination_IP_address_anonimized",
    "inter_arrival_time_milliseconds",
    "reputation_status",
    "same_dest_port_count_pool",
    "same_dest_IP_count_pool",
    "has_DNS_request_from_pool",
    "DNS_host_percentage_of_numerical_chars_from_pool",
    "actual_label",
    "partition",
)

# Extension column: not part of the published feature set, but required to
# recompute the collaborative pool counters from raw exports. Written only
# when at least one record carries a port.
DESTINATION_PORT_COLUMN = "destination_port"

# Identifier and raw flow columns must be present in every input header.
MANDATORY_COLUMNS = CANONICAL_COLUMNS[:14]

_TRUE_STRINGS = {"true", "1", "yes", "t"}
_FALSE_STRINGS = {"false", "0", "no", "f", ""}


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_rejected: int = 0
    reject_reasons: Counter = field(default_factory=Counter)
    rejected_rows: list[tuple[int, str]] = field(default_factory=list)  # capped

    _MAX_LISTED = 100

    def reject(self, row_index: int, reason: str) -> None:
        self.rows_rejected += 1
        self.reject_reasons[reason] += 1
        if len(self.rejected_rows) < self._MAX_LISTED:
            self.rejected_rows.append((row_index, reason))

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_rejected": self.rows_rejected,
            "reject_reasons": dict(sorted(self.reject_reasons.items())),
        }


def _open_source(source: Union[str, Path, bytes, IO]) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    # Binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _parse_int(cell: str, what: str) -> int:
    try:
        return int(cell)
    except ValueError:
        try:
            value = float(cell)
        except ValueError:
            raise ValueError(f"unparsable numeric {what}") from None
        if value.is_integer():
            return int(value)
        raise ValueError(f"unparsable numeric {what}") from None


def _parse_bool(cell: str, what: str) -> bool:
    key = cell.strip().lower()
    if key in _TRUE_STRINGS:
        return True
    if key in _FALSE_STRINGS:
        return False
    raise ValueError(f"unparsable boolean {what}")


def parse_dataset(source: Union[str, Path, bytes, IO]) -> tuple[list[FlowRecord], ParseReport]:
    """Parse a flow CSV into records plus a parse report.

    Every well-formed row becomes a FlowRecord; malformed rows are counted
    with a reason. A missing mandatory column or an empty stream raises
    SchemaError.
    """
    stream = _open_source(source)
    try:
        return _parse_stream(stream)
    finally:
        if isinstance(source, (str, Path)):
            stream.close()


def _parse_stream(stream: IO[str]) -> tuple[list[FlowRecord], ParseReport]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty stream: no header row") from None

    positions = {name.strip().lower(): idx for idx, name in enumerate(header)}
    missing = [name for name in MANDATORY_COLUMNS if name.lower() not in positions]
    if missing:
        raise SchemaError(f"header is missing mandatory columns: {', '.join(missing)}")

    def col(name: str) -> Optional[int]:
        return positions.get(name.lower())

    idx = {name: col(name) for name in CANONICAL_COLUMNS}
    idx[DESTINATION_PORT_COLUMN] = col(DESTINATION_PORT_COLUMN)

    def cell(row: list[str], name: str) -> str:
        position = idx[name]
        if position is None or position >= len(row):
            return ""
        return row[position].strip()

    records: list[FlowRecord] = []
    report = ParseReport()
    for row_index, row in enumerate(reader, start=1):
        if not any(piece.strip() for piece in row):
            continue
        report.rows_read += 1
        try:
            records.append(_row_to_record(row, cell))
        except ValueError as exc:
            report.reject(row_index, str(exc))
    return records, report


def _row_to_record(row: list[str], cell) -> FlowRecord:
    day = _parse_int(cell(row, "flow_start_day"), "flow_start_day")
    hour = _parse_int(cell(row, "flow_start_hour"), "flow_start_hour")
    minute = _parse_int(cell(row, "flow_start_minute"), "flow_start_minute")
    second = _parse_int(cell(row, "flow_start_second"), "flow_start_second")
    millisecond = _parse_int(cell(row, "flow_start_millisecond"), "flow_start_millisecond")

    iat_cell = cell(row, "inter_arrival_time_milliseconds")
    port_cell = cell(row, DESTINATION_PORT_COLUMN)
    port_pool_cell = cell(row, "same_dest_port_count_pool")
    ip_pool_cell = cell(row, "same_dest_IP_count_pool")
    dns_pct_cell = cell(row, "DNS_host_percentage_of_numerical_chars_from_pool")
    prefix_cell = cell(row, "network_prefix_of_destination_IP_address_anonimized")
    label_cell = cell(row, "actual_label")
    partition_cell = cell(row, "partition")

    try:
        avg_packet_size = float(cell(row, "avg_packet_size"))
    except ValueError:
        raise ValueError("unparsable numeric avg_packet_size") from None
    if dns_pct_cell:
        try:
            dns_pct: Optional[float] = float(dns_pct_cell)
        except ValueError:
            raise ValueError("unparsable numeric DNS_host_percentage_of_numerical_chars_from_pool") from None
    else:
        dns_pct = None

    if label_cell:
        try:
            label = LabelClass.parse(label_cell)
        except ValueError:
            raise ValueError("unknown actual_label") from None
    else:
        label = LabelClass.ASSUMED_BENIGN
    if partition_cell:
        try:
            partition: Optional[PartitionTag] = PartitionTag.parse(partition_cell)
        except ValueError:
            raise ValueError("unknown partition") from None
    else:
        partition = None

    return FlowRecord(
        device_id=_parse_int(cell(row, "device_id"), "device_id"),
        source_network_id=_parse_int(cell(row, "source_network_id"), "source_network_id"),
        flow_start=flow_start_ms(day, hour, minute, second, millisecond),
        protocol_identifier=_parse_int(cell(row, "protocol_identifier"), "protocol_identifier"),
        flow_duration_milliseconds=_parse_int(
            cell(row, "flow_duration_milliseconds"), "flow_duration_milliseconds"
        ),
        octet_delta_count=_parse_int(cell(row, "octet_delta_count"), "octet_delta_count"),
        packet_delta_count=_parse_int(cell(row, "packet_delta_count"), "packet_delta_count"),
        avg_packet_size=avg_packet_size,
        flow_end_reason=cell(row, "flow_end_reason"),
        tcp_control_bits=_parse_int(cell(row, "tcp_control_bits"), "tcp_control_bits"),
        network_class_of_destination=cell(row, "network_class_of_destination_IP_address"),
        destination_network_prefix=prefix_cell or None,
        inter_arrival_time_milliseconds=_parse_int(iat_cell, "inter_arrival_time_milliseconds")
        if iat_cell
        else None,
        reputation_status=cell(row, "reputation_status"),
        same_dest_port_count_pool=_parse_int(port_pool_cell, "same_dest_port_count_pool")
        if port_pool_cell
        else None,
        same_dest_ip_count_pool=_parse_int(ip_pool_cell, "same_dest_IP_count_pool")
        if ip_pool_cell
        else None,
        has_dns_request_from_pool=_parse_bool(
            cell(row, "has_DNS_request_from_pool"), "has_DNS_request_from_pool"
        ),
        dns_host_pct_numerical_chars=dns_pct,
        actual_label=label,
        partition=partition,
        destination_port=_parse_int(port_cell, DESTINATION_PORT_COLUMN) if port_cell else None,
    )


def record_to_row(record: FlowRecord, include_port: bool) -> list[str]:
    day, hour, minute, second, millisecond = split_flow_start(record.flow_start)

    def opt(value) -> str:
        return "" if value is None else str(value)

    row = [
        str(record.device_id),
        str(day),
        str(hour),
        str(minute),
        str(second),
        str(millisecond),
        str(record.source_network_id),
        str(record.protocol_identifier),
        str(record.flow_duration_milliseconds),
        str(record.octet_delta_count),
        str(record.packet_delta_count),
        repr(record.avg_packet_size),
        record.flow_end_reason,
        str(record.tcp_control_bits),
        record.network_class_of_destination,
        opt(record.destination_network_prefix),
        opt(record.inter_arrival_time_milliseconds),
        record.reputation_status,
        opt(record.same_dest_port_count_pool),
        opt(record.same_dest_ip_count_pool),
        "true" if record.has_dns_request_from_pool else "false",
        "" if record.dns_host_pct_numerical_chars is None else repr(record.dns_host_pct_numerical_chars),
        record.actual_label.value,
        "" if record.partition is None else record.partition.value,
    ]
    if include_port:
        row.append(opt(record.destination_port))
    return row


def write_dataset(records: Iterable[FlowRecord], target: Union[str, Path, IO[str]]) -> None:
    """Serialize records to the canonical CSV schema (UTF-8, header row)."""
    records = list(records)
    include_port = any(r.destination_port is not None for r in records)
    header = list(CANONICAL_COLUMNS) + ([DESTINATION_PORT_COLUMN] if include_port else [])
    own = isinstance(target, (str, Path))
    stream = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for record in records:
            writer.writerow(record_to_row(record, include_port))
    finally:
        if own:
            stream.close()


def compute_iat(flows: list[FlowRecord]) -> list[FlowRecord]:
    """Fill inter-arrival times per device: flow_start(t) - flow_start(t-1).

    The first flow of each device gets an absent IAT. Input order is
    preserved in the returned list.
    """
    order: dict[int, list[int]] = {}
    for index, flow in enumerate(flows):
        order.setdefault(flow.device_id, []).append(index)
    result: list[Optional[int]] = [None] * len(flows)
    for indices in order.values():
        indices.sort(key=lambda i: (flows[i].flow_start, i))
        previous: Optional[int] = None
        for i in indices:
            if previous is None:
                result[i] = None
            else:
                result[i] = flows[i].flow_start - flows[previous].flow_start
            previous = i
    return [
        replace(flow, inter_arrival_time_milliseconds=result[i])
        for i, flow in enumerate(flows)
    ]


def compute_pool_features(flows: list[FlowRecord]) -> list[FlowRecord]:
    """Fill the collaborative pool counters from the previous complete hour.

    For a flow whose start falls in wall-clock hour H, the window is hour
    H-1, i.e. [ (H-1)*3600s, H*3600s ). The counters tally flows from any
    monitored device in that window with the same destination port or the
    same destination network prefix. No history means zero.
    """
    port_counts: dict[int, Counter] = {}
    prefix_counts: dict[int, Counter] = {}
    for flow in flows:
        hour = flow.hour_index
        if flow.destination_port is not None:
            port_counts.setdefault(hour, Counter())[flow.destination_port] += 1
        if flow.destination_network_prefix is not None:
            prefix_counts.setdefault(hour, Counter())[flow.destination_network_prefix] += 1

    out = []
    for flow in flows:
        window = flow.hour_index - 1
        port_count = 0
        if flow.destination_port is not None:
            port_count = port_counts.get(window, Counter()).get(flow.destination_port, 0)
        prefix_count = 0
        if flow.destination_network_prefix is not None:
            prefix_count = prefix_counts.get(window, Counter()).get(flow.destination_network_prefix, 0)
        out.append(
            replace(
                flow,
                same_dest_port_count_pool=port_count,
                same_dest_ip_count_pool=prefix_count,
            )
        )
    return out


@dataclass
class CleanseReport:
    rows_in: int = 0
    rows_kept: int = 0
    dropped_by_reason: Counter = field(default_factory=Counter)
    pool_zero_filled: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_kept": self.rows_kept,
            "rows_dropped_by_reason": dict(sorted(self.dropped_by_reason.items())),
            "pool_zero_filled": self.pool_zero_filled,
            "notes": list(self.notes),
        }


WARMUP_REASON = "warm-up window"
MISSING_IAT_REASON = "missing inter-arrival time"


def preprocess(flows: list[FlowRecord]) -> tuple[list[FlowRecord], CleanseReport]:
    """Cleansing pass: drop the two warm-up hours and records without an
    IAT, zero-fill absent pool counters.

    The warm-up window is global (the first two wall-clock hours of the
    whole capture). Destination filtering to external communications is an
    input guarantee of the dataset, asserted rather than computed.
    """
    report = CleanseReport(rows_in=len(flows))
    if not flows:
        return [], report
    first_hour = min(flow.hour_index for flow in flows)
    kept: list[FlowRecord] = []
    for flow in flows:
        if flow.hour_index < first_hour + 2:
            report.dropped_by_reason[WARMUP_REASON] += 1
            continue
        if flow.inter_arrival_time_milliseconds is None:
            report.dropped_by_reason[MISSING_IAT_REASON] += 1
            continue
        if flow.same_dest_port_count_pool is None or flow.same_dest_ip_count_pool is None:
            report.pool_zero_filled += 1
            flow = replace(
                flow,
                same_dest_port_count_pool=flow.same_dest_port_count_pool or 0,
                same_dest_ip_count_pool=flow.same_dest_ip_count_pool or 0,
            )
        kept.append(flow)
    report.rows_kept = len(kept)
    report.notes.append("warm-up drop applied globally over the whole capture")
    report.notes.append("rows are assumed to be pre-filtered to external communications")
    return kept, report


def sanitize_training(
    flows: list[FlowRecord], min_port_count: int
) -> tuple[list[FlowRecord], int]:
    """Remove training flows whose destination port is scarce across the
    pooled training set (fewer than min_port_count occurrences).

    Records without a destination port are never removed: such datasets
    arrive pre-sanitized. Raises DataError if sanitization would empty a
    non-empty training set.
    """
    counts = Counter(
        flow.destination_port for flow in flows if flow.destination_port is not None
    )
    kept = [
        flow
        for flow in flows
        if flow.destination_port is None or counts[flow.destination_port] >= min_port_count
    ]
    if flows and not kept:
        raise DataError("sanitization would empty training set")
    return kept, len(flows) - len(kept)


@dataclass
class PartitionResult:
    training: list[FlowRecord]
    validation: list[FlowRecord]
    test: list[FlowRecord]
    dropped_by_reason: Counter

    def to_dict(self) -> dict:
        return {
            "training_rows": len(self.training),
            "validation_rows": len(self.validation),
            "test_rows": len(self.test),
            "rows_dropped_by_reason": dict(sorted(self.dropped_by_reason.items())),
        }


def partition_chronologically(
    flows: list[FlowRecord],
    split_days: tuple[int, int, int] = (13, 3, 5),
    lab_network_id: int = 5,
) -> PartitionResult:
    """Split flows into chronologically ordered training/validation/test.

    Day boundaries are aligned to the absolute day index of the earliest
    flow. The selection strategy is enforced here as well: test keeps only
    lab-network flows, training and validation keep only non-lab flows
    with an assumed-benign label.
    """
    if not flows:
        raise DataError("cannot partition an empty flow list")
    if any(d <= 0 for d in split_days):
        raise DataError("split_days must be positive")
    first_day = min(flow.day_index for flow in flows)
    last_day = max(flow.day_index for flow in flows)
    span = last_day - first_day + 1
    needed = sum(split_days)
    if span < needed:
        raise DataError(f"capture spans {span} days, {needed} required")

    train_end = first_day + split_days[0]
    val_end = train_end + split_days[1]
    test_end = val_end + split_days[2]

    dropped: Counter = Counter()
    training: list[FlowRecord] = []
    validation: list[FlowRecord] = []
    test: list[FlowRecord] = []
    for flow in sorted(flows, key=lambda f: (f.flow_start, f.device_id)):
        day = flow.day_index
        if day >= test_end:
            dropped["beyond requested span"] += 1
            continue
        if day >= val_end:
            if flow.source_network_id != lab_network_id:
                dropped["non-lab flow in test window"] += 1
                continue
            test.append(replace(flow, partition=PartitionTag.TEST))
            continue
        if flow.source_network_id == lab_network_id:
            dropped["lab flow outside test window"] += 1
            continue
        if flow.actual_label.is_attack:
            dropped["attack label outside test window"] += 1
            continue
        if day >= train_end:
            validation.append(replace(flow, partition=PartitionTag.VALIDATION))
        else:
            training.append(replace(flow, partition=PartitionTag.TRAINING))
    return PartitionResult(training, validation, test, dropped)
