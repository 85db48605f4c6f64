"""Core domain types: flow records, labels, partitions and verdicts.

All types here are immutable after construction and safe to share across
threads. Timestamps are integer milliseconds since the capture origin; the
day component of a flow start is an absolute day index, so the five split
time fields published in the CSV schema can always be reconstructed.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

MS_PER_SECOND = 1_000
MS_PER_MINUTE = 60_000
MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000

# Published deployment convention: devices 0-6 live in home networks 0-4,
# device 7 is the single lab device in network 5.
LAB_DEVICE_ID = 7
LAB_NETWORK_ID = 5


class LabelClass(Enum):
    """Ground-truth class of a flow."""

    ASSUMED_BENIGN = "assumed benign"
    BEING_SCANNED_BY_NMAP = "being scanned by Nmap"
    EXECUTING_CRYPTOMINING = "is executing cryptomining"

    @property
    def is_attack(self) -> bool:
        return self is not LabelClass.ASSUMED_BENIGN

    @classmethod
    def parse(cls, text: str) -> "LabelClass":
        key = text.strip().lower().replace("_", " ")
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown label class: {text!r}")


ATTACK_CLASSES = (LabelClass.BEING_SCANNED_BY_NMAP, LabelClass.EXECUTING_CRYPTOMINING)


class PartitionTag(Enum):
    TRAINING = "training"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, text: str) -> "PartitionTag":
        key = text.strip().lower()
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown partition tag: {text!r}")


class FinalLabel(Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"


def flow_start_ms(day: int, hour: int, minute: int, second: int, millisecond: int) -> int:
    """Assemble a flow-start timestamp from the five split CSV fields."""
    return (
        day * MS_PER_DAY
        + hour * MS_PER_HOUR
        + minute * MS_PER_MINUTE
        + second * MS_PER_SECOND
        + millisecond
    )


def split_flow_start(ms: int) -> tuple[int, int, int, int, int]:
    """Decompose a timestamp back into (day, hour, minute, second, millisecond)."""
    day, rem = divmod(ms, MS_PER_DAY)
    hour, rem = divmod(rem, MS_PER_HOUR)
    minute, rem = divmod(rem, MS_PER_MINUTE)
    second, millisecond = divmod(rem, MS_PER_SECOND)
    return day, hour, minute, second, millisecond


@dataclass(frozen=True)
class FlowRecord:
    """One enriched outbound flow with identifiers and ground-truth label.

    Pool counters and the inter-arrival time are optional until the
    enrichment stages fill them; optional fields are represented as None,
    never as sentinel numbers (the only sanctioned zero-fill happens in
    preprocessing, for the pool counters).
    """

    device_id: int
    source_network_id: int
    flow_start: int  # ms since capture origin
    protocol_identifier: int
    flow_duration_milliseconds: int
    octet_delta_count: int
    packet_delta_count: int
    avg_packet_size: float
    flow_end_reason: str
    tcp_control_bits: int  # bit field: SYN|ACK|FIN|PSH|RST|URG
    network_class_of_destination: str
    destination_network_prefix: Optional[str]
    inter_arrival_time_milliseconds: Optional[int]
    reputation_status: str
    same_dest_port_count_pool: Optional[int]
    same_dest_ip_count_pool: Optional[int]
    has_dns_request_from_pool: bool
    dns_host_pct_numerical_chars: Optional[float]
    actual_label: LabelClass
    partition: Optional[PartitionTag]
    # Not part of the published feature set; carried when present so the
    # collaborative pool counters can be recomputed from raw exports.
    destination_port: Optional[int] = None

    @property
    def flow_start_fields(self) -> tuple[int, int, int, int, int]:
        return split_flow_start(self.flow_start)

    @property
    def hour_index(self) -> int:
        return self.flow_start // MS_PER_HOUR

    @property
    def day_index(self) -> int:
        return self.flow_start // MS_PER_DAY


# Names of the TCP control bits in bit-field order (bit 0 first).
TCP_BIT_NAMES = ("syn", "ack", "fin", "psh", "rst", "urg")


def validate_record(record: FlowRecord) -> list[str]:
    """Return every violated record invariant; an empty list means ok.

    Total function: never raises on any constructible record.
    """
    violations: list[str] = []
    if record.packet_delta_count < 1:
        violations.append("packet_delta_count >= 1")
    if record.octet_delta_count < 0:
        violations.append("octet_delta_count >= 0")
    if record.flow_duration_milliseconds < 0:
        violations.append("flow_duration_milliseconds >= 0")
    if record.inter_arrival_time_milliseconds is not None and record.inter_arrival_time_milliseconds < 0:
        violations.append("inter_arrival_time_milliseconds >= 0")
    for name in ("same_dest_port_count_pool", "same_dest_ip_count_pool"):
        value = getattr(record, name)
        if value is not None and value < 0:
            violations.append(f"{name} >= 0")
    if record.packet_delta_count >= 1:
        expected = record.avg_packet_size * record.packet_delta_count
        if abs(expected - record.octet_delta_count) > 0.5:
            violations.append("avg_packet_size * packet_delta_count = octet_delta_count (within 0.5)")
    if not 0 <= record.tcp_control_bits < 64:
        violations.append("tcp_control_bits is a 6-bit field")
    if (record.device_id == LAB_DEVICE_ID) != (record.source_network_id == LAB_NETWORK_ID):
        violations.append("lab device lives only in the lab network")
    if record.actual_label.is_attack and record.source_network_id != LAB_NETWORK_ID:
        violations.append("attack label outside lab")
    if record.dns_host_pct_numerical_chars is not None:
        if not record.has_dns_request_from_pool:
            violations.append("dns_host_pct_numerical_chars present without a DNS request")
        if not 0.0 <= record.dns_host_pct_numerical_chars <= 100.0:
            violations.append("dns_host_pct_numerical_chars in [0, 100]")
    return violations


@dataclass(frozen=True)
class Verdict:
    """Pipeline decision for one flow.

    Constructible only in one of two shapes: a frequent flow (no cluster
    fields, final label benign) or an infrequent flow (all cluster fields
    present, final label decided by the known flag).
    """

    flow_index: int
    mse: float
    frequent: bool
    assigned_cluster: Optional[int]
    distance: Optional[float]
    tanh_score: Optional[float]
    known: Optional[bool]
    final_label: FinalLabel

    def __post_init__(self) -> None:
        if self.mse < 0:
            raise ValueError("mse must be non-negative")
        cluster_fields = (self.assigned_cluster, self.distance, self.tanh_score, self.known)
        if self.frequent:
            if any(field is not None for field in cluster_fields):
                raise ValueError("frequent verdicts carry no cluster fields")
            if self.final_label is not FinalLabel.BENIGN:
                raise ValueError("frequent verdicts are benign")
        else:
            if any(field is None for field in cluster_fields):
                raise ValueError("infrequent verdicts carry all cluster fields")
            if (self.final_label is FinalLabel.MALICIOUS) != (self.known is False):
                raise ValueError("final label malicious iff not known")

    @classmethod
    def for_frequent(cls, flow_index: int, mse: float) -> "Verdict":
        return cls(flow_index, mse, True, None, None, None, None, FinalLabel.BENIGN)

    @classmethod
    def for_infrequent(
        cls,
        flow_index: int,
        mse: float,
        assigned_cluster: int,
        distance: float,
        tanh_score: float,
        known: bool,
    ) -> "Verdict":
        final = FinalLabel.BENIGN if known else FinalLabel.MALICIOUS
        return cls(flow_index, mse, False, assigned_cluster, distance, tanh_score, known, final)
