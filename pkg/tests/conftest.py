import pytest

from flowsieve import ingest
from flowsieve.config import PipelineConfig
from flowsieve.records import FlowRecord, LabelClass, PartitionTag
from flowsieve.synth import SynthConfig, generate


def make_record(**overrides) -> FlowRecord:
    """A consistent benign record; override fields as needed."""
    base = dict(
        device_id=2,
        source_network_id=1,
        flow_start=3 * 3_600_000 + 15 * 60_000,
        protocol_identifier=6,
        flow_duration_milliseconds=420,
        octet_delta_count=1200,
        packet_delta_count=3,
        avg_packet_size=400.0,
        flow_end_reason="idle timeout",
        tcp_control_bits=0b001010,
        network_class_of_destination="public",
        destination_network_prefix="pfx-a",
        inter_arrival_time_milliseconds=5000,
        reputation_status="ok",
        same_dest_port_count_pool=4,
        same_dest_ip_count_pool=2,
        has_dns_request_from_pool=True,
        dns_host_pct_numerical_chars=12.5,
        actual_label=LabelClass.ASSUMED_BENIGN,
        partition=PartitionTag.TRAINING,
        destination_port=443,
    )
    base.update(overrides)
    return FlowRecord(**base)


@pytest.fixture(scope="session")
def synth_config() -> SynthConfig:
    return SynthConfig()


@pytest.fixture(scope="session")
def synth_flows(synth_config):
    return generate(synth_config)


@pytest.fixture(scope="session")
def synth_partitions(synth_flows, synth_config):
    cleansed, _ = ingest.preprocess(synth_flows)
    parts = ingest.partition_chronologically(
        cleansed,
        split_days=synth_config.split_days,
        lab_network_id=synth_config.lab_network_id,
    )
    training, _ = ingest.sanitize_training(parts.training, PipelineConfig().sanitize_min_port_count)
    return training, parts.validation, parts.test
