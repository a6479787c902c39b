"""Edge/cloud IoT messaging pipeline with a benchmark harness.

Producers publish timestamped C-ITS envelopes to an edge queue broker; an
anonymizer samples and pseudonymizes them on the MEC and forwards them to an
append-only cloud log, which consumers poll. Links between segments are
emulated. The harness runs the eight platform/scheme/producer scenarios and
reports latency statistics and packet loss against the sampling prediction.
"""

from .anonymizer import (
    SCHEMES,
    AnonymizationScheme,
    PseudonymMap,
    Sampler,
    SamplerState,
    get_scheme,
    predicted_packet_loss,
    pseudonymize,
    run_stage,
    sample_gate,
)
from .cits import CitsMessage, MessageKey, decode_message, encode_message, generate_payload, message_key
from .cloud import CloudBroker, PartitionLog, RegistryEntry
from .edge import EdgeBroker, TopicStats
from .metrics import (
    BenchmarkReport,
    compare_to_prediction,
    compute_latencies,
    compute_packet_loss,
    summarize,
)
from .netem import LinkProfile, default_profiles, delivery_time
from .runner import run_scenario, run_suite, simulate_repetition
from .scenarios import CANONICAL, Scenario, Settings, canonical, load_config

__version__ = "0.1.0"
