"""Scenario orchestration.

Two drivers share the broker, anonymizer, log and link cores:

* simulated time (``Scenario.sim_time``) replays the pipeline in virtual
  milliseconds without sockets. The pipeline is feed-forward, so each hop
  is computed in full before the next; results depend only on the seed.
* live mode starts the services on loopback TCP with link shims between
  them and runs producers and consumer against the wall clock.

Both end the same way: producers finish, a sentinel is published behind them,
the consumer drains to the sentinel, the stage and brokers stop, and broker
counters are reconciled against producer logs.
"""

from __future__ import annotations

import asyncio
import bisect
import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import metrics
from .anonymizer import (
    SCHEMES,
    AnonymizerStage,
    PseudonymMap,
    StageCounters,
    run_stage,
    wall_ms,
)
from .cits import CitsMessage, frame_length, sentinel
from .cloud import AppendRejected, CloudBroker, CloudServer, RegistryEntry, cloud_topic_name
from .edge import STAGE_SUFFIX, EdgeBroker, EdgeClient, EdgeServer, TopicStats
from .metrics import BenchmarkReport, LatencySample
from .netem import Link, LinkShim, derive_seed
from .scenarios import Scenario, Settings
from .workload import (
    ProducerConfig,
    ReceivedLog,
    ReceivedRecord,
    SentLog,
    SentRecord,
    run_consumer,
    run_producer,
    write_received_csv,
    write_sent_csv,
)

logger = logging.getLogger(__name__)

SIM_EPOCH_MS = 1_700_000_000_000
WIRE_HEADER = 5  # frame length prefix + command byte
RETRANSMIT_MS = 200.0
APPEND_RETRIES = 3
FETCH_MAX = 500
CONSUMER_LABEL = "c1"


@dataclass
class Conservation:
    """Producer-side publish counts reconciled with broker and stage counters."""

    topic: str
    published: int
    delivered: int
    rejected: int
    in_flight: int
    unknown: int = 0
    broker_accepted: int = 0
    stage_ok: bool = True

    @property
    def ok(self) -> bool:
        accounted = self.delivered + self.rejected + self.in_flight
        if self.broker_accepted != self.delivered + self.in_flight:
            return False
        if not self.stage_ok:
            return False
        if self.unknown:
            return self.published <= accounted <= self.published + self.unknown
        return self.published == accounted


@dataclass
class RepetitionResult:
    report: BenchmarkReport
    samples: list[LatencySample]
    sent: dict[int, SentLog]
    received: ReceivedLog
    conservation: Conservation
    stage: StageCounters


@dataclass
class ScenarioResult:
    scenario: Scenario
    report: BenchmarkReport
    repetitions: list[RepetitionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.report.verdict == "PASS" and self.report.conservation_ok is not False


@dataclass
class SuiteResult:
    results: list[ScenarioResult]
    summary: str

    @property
    def exit_code(self) -> int:
        return 0 if all(r.passed for r in self.results) else 1


def _rep_seed(scn: Scenario, rep: int) -> int:
    # independent of the scenario id so scenarios with equal links draw the
    # same jitter and can be compared pairwise
    return derive_seed(scn.seed, "rep", rep)


def _producer_configs(scn: Scenario, rep_seed: int) -> list[ProducerConfig]:
    return [
        ProducerConfig(
            p,
            rate_hz=scn.rate_hz,
            payload_bytes=scn.payload_bytes,
            duration_s=scn.duration_s,
            seed=rep_seed,
            clock_skew_ms=scn.clock_skew_ms,
            mec_id=scn.mec_id,
            data_type=scn.data_type,
        )
        for p in range(1, scn.producers + 1)
    ]


def _rep_link(scn: Scenario, name: str, rep: int, *extra) -> Link:
    profile = scn.link(name)
    return Link(profile.with_seed(derive_seed(profile.seed, rep, *extra)))


def _finish(
    scn: Scenario,
    rep: int,
    sent: dict[int, SentLog],
    received: ReceivedLog,
    pmap: PseudonymMap | None,
    counters: StageCounters,
    conservation: Conservation,
    broker_rejects: int,
) -> RepetitionResult:
    if pmap is not None:
        received = received.map_ids(pmap.reidentify)
    merged = SentLog.merge(sent[p] for p in sorted(sent))
    report, samples = metrics.build_report(
        scn.id,
        merged,
        received,
        0.0,
        producers=scn.producers,
        stage_drop_count=counters.stage_drops,
        broker_reject_count=broker_rejects,
        sampled_out_count=counters.sampled_out,
    )
    report.repetition = rep
    report.conservation_ok = conservation.ok
    if scn.consumer_delay_ms > 0:
        report.flags.append("late-consumer")
    if not conservation.ok:
        report.flags.append("conservation-violated")
    if not received.saw_sentinel:
        report.flags.append("no-sentinel")
    metrics.compare_to_prediction(report, scn.anonymization, scn.rate_hz)
    return RepetitionResult(report, samples, sent, received, conservation, counters)


# -- simulated time ---------------------------------------------------------


def simulate_repetition(scn: Scenario, rep: int = 0) -> RepetitionResult:
    rep_seed = _rep_seed(scn, rep)
    edge_topic = f"{scn.mec_id}/{scn.data_type}"
    cloud_topic = cloud_topic_name(scn.mec_id, scn.data_type)

    broker = EdgeBroker(scn.edge_capacity)
    sub = broker.subscribe(edge_topic)

    # producers over their uplinks
    sent: dict[int, SentLog] = {}
    arrivals = []
    last_event = SIM_EPOCH_MS
    for cfg in _producer_configs(scn, rep_seed):
        log = sent[cfg.producer_id] = SentLog()
        uplink = _rep_link(scn, "uplink_5g", rep, "producer", cfg.producer_id)
        for k in range(cfg.count):
            t = SIM_EPOCH_MS + cfg.offset_ms(k)
            msg = cfg.make_message(k, math.floor(t) + cfg.clock_skew_ms, edge_topic)
            size = WIRE_HEADER + 1 + len(edge_topic) + frame_length(edge_topic, len(msg.payload))
            at = uplink.send(size, t)
            log.records.append(SentRecord(msg.key, "unknown"))
            last_event = max(last_event, t)
            if at is not None:
                arrivals.append((at, cfg.producer_id, k, msg, len(log.records) - 1))
    arrivals.sort(key=lambda a: a[:3])

    # edge broker, subscription drained by the stage as messages land
    stage_in: list[tuple[float, CitsMessage]] = []
    published = 0
    for at, pid, _, msg, idx in arrivals:
        ok = broker.publish(edge_topic, msg)
        published += 1
        sent[pid].records[idx] = SentRecord(msg.key, "accepted" if ok else "rejected")
        stage_in.extend((at, m) for m in sub.poll())
        last_event = max(last_event, at)
    published += 1
    if not broker.publish(edge_topic, sentinel(edge_topic, math.floor(last_event))):
        raise RuntimeError("edge broker rejected the sentinel")
    stage_in.extend((last_event, m) for m in sub.poll())
    stats = broker.stats(edge_topic)

    # anonymizer (hybrid) or plain bridge (local)
    pmap = PseudonymMap(rep_seed) if scn.platform == "hybrid" else None
    scheme = scn.anonymization if scn.platform == "hybrid" else SCHEMES["none"]
    stage = run_stage(
        stage_in,
        scheme,
        pmap,
        per_cpu_rate=scn.per_cpu_rate,
        queue_per_gb=scn.queue_per_gb,
        sampler=scn.sampler,
        epoch_ms=SIM_EPOCH_MS,
    )
    counters = stage.counters
    counters.forwarded = 0

    # WAN with retransmission of lost appends
    wan = _rep_link(scn, "wan", rep)
    heap = [(t, i, msg, 0) for i, (t, msg) in enumerate(stage.output)]
    heapq.heapify(heap)
    ticket = len(heap)
    landed = []
    while heap:
        t, i, msg, attempt = heapq.heappop(heap)
        size = WIRE_HEADER + 1 + len(cloud_topic) + frame_length(msg.topic, len(msg.payload))
        at = wan.send(size, t)
        if at is not None:
            landed.append((at, i, msg))
        elif attempt < APPEND_RETRIES:
            counters.retries += 1
            heapq.heappush(heap, (t + RETRANSMIT_MS, ticket, msg, attempt + 1))
            ticket += 1
        elif not msg.is_sentinel:
            counters.stage_drops += 1
    landed.sort(key=lambda a: a[:2])

    cloud = CloudBroker([RegistryEntry(scn.mec_id, "sim", cloud_topic)], max_records=scn.cloud_max_records)
    cloud.resolve_consumer(scn.mec_id, scn.data_type)
    append_times: list[float] = []
    for at, _, msg in landed:
        try:
            cloud.append(cloud_topic, msg)
        except AppendRejected:
            if not msg.is_sentinel:
                counters.stage_drops += 1
            continue
        append_times.append(at)
        if not msg.is_sentinel:
            counters.forwarded += 1

    received = _simulate_consumer(scn, rep, cloud, cloud_topic, append_times)

    conservation = Conservation(
        edge_topic,
        published=published,
        delivered=len(stage_in),
        rejected=stats.dropped,
        in_flight=stats.depth,
        broker_accepted=stats.accepted,
        stage_ok=counters.received == counters.sampled_out + counters.forwarded + counters.stage_drops,
    )
    return _finish(scn, rep, sent, received, pmap, counters, conservation, stats.dropped)


def _simulate_consumer(
    scn: Scenario, rep: int, cloud: CloudBroker, topic: str, append_times: list[float]
) -> ReceivedLog:
    """Poll every ``poll_interval_ms``; each non-empty answer crosses the downlink
    as one frame. The poll request itself is not delayed."""
    downlink = _rep_link(scn, "downlink_5g", rep, "consumer")
    start = SIM_EPOCH_MS + scn.consumer_delay_ms
    period = scn.poll_interval_ms
    received = ReceivedLog()
    offset, j, n = 0, 0, len(append_times)
    while offset < n:
        now = start + j * period
        if append_times[offset] > now:
            j = max(j + 1, math.ceil((append_times[offset] - start) / period))
            continue
        j += 1
        count = min(bisect.bisect_right(append_times, now, lo=offset) - offset, FETCH_MAX)
        records = cloud.fetch(topic, offset, count)
        size = WIRE_HEADER + 4 + sum(12 + frame_length(m.topic, len(m.payload)) for _, m in records)
        at = downlink.send(size, now)
        if at is None:
            continue  # answer lost; the same offset is fetched again
        stamp = math.floor(at)
        for off, msg in records:
            offset = off + 1
            if msg.is_sentinel:
                received.saw_sentinel = True
                return received
            received.records.append(ReceivedRecord(msg.key, stamp))
    received.timed_out = True
    return received


# -- live -------------------------------------------------------------------


async def live_repetition(scn: Scenario, rep: int = 0, *, lead_s: float = 1.0) -> RepetitionResult:
    if scn.distributed:
        from .distributed import distributed_repetition

        return await distributed_repetition(scn, rep, lead_s=lead_s)
    rep_seed = _rep_seed(scn, rep)
    edge_topic = f"{scn.mec_id}/{scn.data_type}"
    cloud_topic = cloud_topic_name(scn.mec_id, scn.data_type)
    hybrid = scn.platform == "hybrid"
    pmap = PseudonymMap(rep_seed) if hybrid else None

    cloud = CloudServer(CloudBroker(max_records=scn.cloud_max_records), port=0)
    edge = EdgeServer(EdgeBroker(scn.edge_capacity), port=0)
    await cloud.start()
    await edge.start()
    shims: list[LinkShim] = []

    async def shaped(upstream: str, forward: str, backward: str) -> str:
        if not scn.netem:
            return upstream
        fwd, back = scn.link(forward), scn.link(backward)
        shim = LinkShim(
            upstream,
            fwd.with_seed(derive_seed(fwd.seed, rep, upstream)),
            back.with_seed(derive_seed(back.seed, rep, upstream)),
        )
        await shim.start()
        shims.append(shim)
        return shim.address

    producer_address = await shaped(edge.address, "uplink_5g", "downlink_5g")
    consumer_address = await shaped(cloud.address, "uplink_5g", "downlink_5g")
    stage_address = await shaped(cloud.address, "wan", "wan")
    cloud.broker.advertised_address = consumer_address
    cloud.broker.register_mec(RegistryEntry(scn.mec_id, producer_address, cloud_topic))

    epoch = wall_ms() + lead_s * 1000.0
    stage = AnonymizerStage(
        scn.anonymization if hybrid else SCHEMES["none"],
        pmap,
        edge_address=edge.address,
        edge_topic=edge_topic,
        cloud_address=stage_address,
        cloud_topic=cloud_topic,
        per_cpu_rate=scn.per_cpu_rate,
        queue_per_gb=scn.queue_per_gb,
        sampler=scn.sampler,
        epoch_ms=epoch,
        append_retries=APPEND_RETRIES,
    )
    await stage.start()
    edge.broker.register_stats(edge_topic + STAGE_SUFFIX, stage.stats)
    try:
        consumer = asyncio.create_task(_delayed_consumer(scn, cloud.address))
        configs = _producer_configs(scn, rep_seed)
        logs = await asyncio.gather(*(run_producer(cfg, cloud.address, start_at_ms=epoch) for cfg in configs))
        sent = {cfg.producer_id: log for cfg, log in zip(configs, logs)}
        sentinel_published, sentinel_rejected = await _publish_sentinel(edge.address, edge_topic)
        received = await asyncio.wait_for(consumer, timeout=60.0 + scn.consumer_delay_ms / 1000.0)
        await asyncio.wait_for(stage.done.wait(), timeout=10.0)
    finally:
        await stage.stop()
    stats = edge.broker.stats(edge_topic)
    for shim in shims:
        await shim.stop()
    await edge.stop()
    await cloud.stop()
    edge.broker.close()
    cloud.broker.close()

    conservation = _live_conservation(edge_topic, sent, stats, stage.counters, sentinel_published, sentinel_rejected)
    return _finish(scn, rep, sent, received, pmap, stage.counters, conservation, stats.dropped - sentinel_rejected)


async def _delayed_consumer(scn: Scenario, cloud_address: str) -> ReceivedLog:
    if scn.consumer_delay_ms:
        await asyncio.sleep(scn.consumer_delay_ms / 1000.0)
    return await run_consumer(scn.mec_id, scn.data_type, cloud_address, poll_interval_ms=scn.poll_interval_ms)


async def _publish_sentinel(edge_address: str, topic: str, attempts: int = 200) -> tuple[int, int]:
    """Publish the end-of-run marker, retrying while the queue is full.
    Returns ``(attempts made, attempts rejected)``."""
    client = EdgeClient(edge_address)
    try:
        for n in range(1, attempts + 1):
            if await client.publish(topic, sentinel(topic, math.floor(wall_ms()))):
                return n, n - 1
            await asyncio.sleep(0.05)
    finally:
        await client.close()
    raise RuntimeError(f"edge broker rejected the sentinel {attempts} times")


def _live_conservation(
    topic: str,
    sent: dict[int, SentLog],
    stats: TopicStats,
    stage: StageCounters,
    sentinel_published: int,
    sentinel_rejected: int,
) -> Conservation:
    merged = SentLog.merge(sent.values())
    known = merged.count("accepted") + merged.count("rejected")
    return Conservation(
        topic,
        published=known + sentinel_published,
        delivered=stage.received + 1,
        rejected=stats.dropped,
        in_flight=stats.depth,
        unknown=merged.count("unknown"),
        broker_accepted=stats.accepted,
        stage_ok=stage.received == stage.sampled_out + stage.forwarded + stage.stage_drops,
    )


# -- scenarios and suites ---------------------------------------------------


def run_scenario(scn: Scenario, out_dir: str | Path | None = None) -> ScenarioResult:
    """Run every repetition of ``scn`` and aggregate; writes logs and the JSON
    report under ``out_dir`` when given."""
    if scn.sim_time:
        reps = [simulate_repetition(scn, rep) for rep in range(scn.repetitions)]
        return _conclude(scn, reps, out_dir)
    return asyncio.run(run_scenario_async(scn, out_dir))


async def run_scenario_async(scn: Scenario, out_dir: str | Path | None = None) -> ScenarioResult:
    if scn.sim_time:
        return run_scenario(scn, out_dir)
    reps = [await live_repetition(scn, rep) for rep in range(scn.repetitions)]
    return _conclude(scn, reps, out_dir)


def _conclude(scn: Scenario, reps: list[RepetitionResult], out_dir) -> ScenarioResult:
    for r in reps:
        logger.info("scenario %s rep %d: loss %.2f%% (%s)", scn.id, r.report.repetition, r.report.measured_loss_pct, r.report.verdict)
    report = metrics.aggregate(scn.id, [(r.report, r.samples) for r in reps])
    metrics.compare_to_prediction(report, scn.anonymization, scn.rate_hz)
    result = ScenarioResult(scn, report, reps)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def write_outputs(result: ScenarioResult, out: Path) -> None:
    scn = result.scenario
    out.mkdir(parents=True, exist_ok=True)
    for rep in result.repetitions:
        rdir = out / scn.id / f"rep{rep.report.repetition}"
        rdir.mkdir(parents=True, exist_ok=True)
        for pid, log in sorted(rep.sent.items()):
            write_sent_csv(rdir / f"sent_{pid}.csv", log)
        write_received_csv(rdir / f"received_{CONSUMER_LABEL}.csv", rep.received)
    metrics.write_report(
        out / f"report_{scn.id}.json",
        result.report,
        [r.report for r in result.repetitions],
        scenario=_describe(scn),
    )


def _describe(scn: Scenario) -> dict:
    scheme = scn.anonymization
    desc = {
        "id": scn.id,
        "platform": scn.platform,
        "scheme": scheme.name,
        "producers": scn.producers,
        "duration_s": scn.duration_s,
        "repetitions": scn.repetitions,
        "rate_hz": scn.rate_hz,
        "payload_bytes": scn.payload_bytes,
        "seed": scn.seed,
        "mode": "sim-time" if scn.sim_time else ("distributed" if scn.distributed else "live"),
        "sampler": scn.sampler,
        "edge_capacity": scn.edge_capacity,
        "emulated_resources": {
            "rate_cap_msg_s": scheme.rate_cap(scn.per_cpu_rate) if scn.platform == "hybrid" else None,
            "stage_queue_bound": scheme.queue_bound(scn.queue_per_gb) if scn.platform == "hybrid" else None,
        },
        "links": None,
    }
    for key in ("rate_cap_msg_s", "stage_queue_bound"):
        if desc["emulated_resources"][key] == math.inf:
            desc["emulated_resources"][key] = "unbounded"
    if scn.links is not None:
        desc["links"] = {
            name: {
                "base_delay_ms": p.base_delay_ms,
                "jitter_ms": p.jitter_ms,
                "bandwidth_mbps": p.bandwidth_mbps,
                "random_loss_pct": p.random_loss_pct,
                "note": p.note,
            }
            for name, p in sorted(scn.links.items())
        }
    return desc


def run_suite(
    scenarios: Sequence[Scenario] | Settings | str | Path,
    out_dir: str | Path | None = None,
    *,
    stream=None,
) -> SuiteResult:
    """Run scenarios one after another and write the summary table.

    Accepts built scenarios, a :class:`Settings`, or a config file path.
    """
    from .scenarios import load_config

    if isinstance(scenarios, (str, Path)):
        settings = load_config(scenarios)
        out_dir = out_dir or settings.out_dir
        scenarios = settings.build()
    elif isinstance(scenarios, Settings):
        out_dir = out_dir or scenarios.out_dir
        scenarios = scenarios.build()
    results = []
    for scn in scenarios:
        result = run_scenario(scn, out_dir)
        results.append(result)
        if stream is not None:
            r = result.report
            print(f"scenario {scn.id}: loss {r.measured_loss_pct:.2f}% predicted {r.predicted_loss_pct:.0f}% {r.verdict}", file=stream)
    summary = metrics.format_table([r.report for r in results])
    if out_dir is not None:
        Path(out_dir, "summary.txt").write_text(summary)
    return SuiteResult(results, summary)

