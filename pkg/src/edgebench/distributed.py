"""Multi-process deployment: ``edgebench serve cloud|mec`` and the runner side
that launches them.

A served process prints ``LISTENING host:port`` on stdout once its listener
is up and exits on SIGTERM, SIGINT or stdin EOF. The MEC process hosts the
edge broker and its anonymizer (or bridge) stage; stage counters are readable
through the edge STATS command under ``<topic>.stage`` (admitted, dropped,
depth) and ``<topic>.sampler`` (received, sampled out, forwarded).
"""

from __future__ import annotations

import argparse
import asyncio
import contextlib
import signal
import sys

from .anonymizer import DEFAULT_PER_CPU_RATE, DEFAULT_QUEUE_PER_GB, SCHEMES, AnonymizerStage, PseudonymMap, StageCounters, get_scheme
from .cloud import CloudBroker, CloudClient, CloudServer, RegistryEntry, cloud_topic_name
from .edge import DEFAULT_CAPACITY, STAGE_SUFFIX, EdgeBroker, EdgeClient, EdgeServer, TopicStats
from .netem import LinkShim, derive_seed

SAMPLER_SUFFIX = ".sampler"
APPEND_RETRIES = 3


def add_serve_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("role", choices=("cloud", "mec"))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, help="default 5690 (cloud) / 5680 (mec)")
    parser.add_argument("--advertise", help="cloud: log address handed to consumers")
    parser.add_argument("--max-records", type=int, help="cloud: per-topic record bound")
    parser.add_argument("--journal-dir", help="cloud: append-only journal directory")
    parser.add_argument("--cloud", help="mec: cloud log address for stage appends")
    parser.add_argument("--mec-id", default="mec-1")
    parser.add_argument("--data-type", default="cits")
    parser.add_argument("--platform", choices=("hybrid", "local"), default="hybrid")
    parser.add_argument("--scheme", default="large")
    parser.add_argument("--salt", type=int, default=0)
    parser.add_argument("--epoch-ms", type=float, default=0.0)
    parser.add_argument("--sampler", choices=("first", "last"), default="first")
    parser.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    parser.add_argument("--per-cpu-rate", type=float, default=DEFAULT_PER_CPU_RATE)
    parser.add_argument("--queue-per-gb", type=int, default=DEFAULT_QUEUE_PER_GB)


def serve_main(args: argparse.Namespace) -> int:
    return asyncio.run(_serve(args))


async def _serve(args: argparse.Namespace) -> int:
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, stop.set)
    loop.create_task(_watch_stdin(stop))

    stage = None
    if args.role == "cloud":
        broker = CloudBroker(max_records=args.max_records, journal_dir=args.journal_dir)
        server = CloudServer(broker, args.host, 5690 if args.port is None else args.port)
        await server.start()
        broker.advertised_address = args.advertise or server.address
    else:
        if not args.cloud:
            print("serve mec: --cloud is required", file=sys.stderr)
            return 2
        server = EdgeServer(EdgeBroker(args.capacity), args.host, 5680 if args.port is None else args.port)
        await server.start()
        hybrid = args.platform == "hybrid"
        topic = f"{args.mec_id}/{args.data_type}"
        stage = AnonymizerStage(
            get_scheme(args.scheme) if hybrid else SCHEMES["none"],
            PseudonymMap(args.salt) if hybrid else None,
            edge_address=server.address,
            edge_topic=topic,
            cloud_address=args.cloud,
            cloud_topic=cloud_topic_name(args.mec_id, args.data_type),
            per_cpu_rate=args.per_cpu_rate,
            queue_per_gb=args.queue_per_gb,
            sampler=args.sampler,
            epoch_ms=args.epoch_ms,
            append_retries=APPEND_RETRIES,
        )
        await stage.start()
        c = stage.counters
        server.broker.register_stats(topic + STAGE_SUFFIX, stage.stats)
        server.broker.register_stats(topic + SAMPLER_SUFFIX, lambda: TopicStats(c.received, c.sampled_out, c.forwarded))
    print(f"LISTENING {server.address}", flush=True)
    await stop.wait()
    if stage is not None:
        await stage.stop()
    await server.stop()
    return 0


async def _watch_stdin(stop: asyncio.Event) -> None:
    loop = asyncio.get_running_loop()
    await loop.run_in_executor(None, sys.stdin.read)
    stop.set()


class ServiceProcess:
    def __init__(self, *argv: str):
        self.argv = [sys.executable, "-m", "edgebench", "serve", *argv]
        self.proc: asyncio.subprocess.Process | None = None
        self.address = ""

    async def start(self, timeout: float = 20.0) -> str:
        self.proc = await asyncio.create_subprocess_exec(
            *self.argv, stdin=asyncio.subprocess.PIPE, stdout=asyncio.subprocess.PIPE
        )
        line = await asyncio.wait_for(self.proc.stdout.readline(), timeout)
        text = line.decode().strip()
        if not text.startswith("LISTENING "):
            await self.stop()
            raise RuntimeError(f"{' '.join(self.argv)} failed to start: {text!r}")
        self.address = text.split(" ", 1)[1]
        return self.address

    async def stop(self) -> None:
        if self.proc is None or self.proc.returncode is not None:
            return
        self.proc.stdin.close()
        with contextlib.suppress(ProcessLookupError):
            self.proc.terminate()
        try:
            await asyncio.wait_for(self.proc.wait(), 10)
        except asyncio.TimeoutError:
            self.proc.kill()
            await self.proc.wait()


async def distributed_repetition(scn, rep: int, *, lead_s: float = 1.0):
    from .anonymizer import wall_ms
    from .runner import _finish, _live_conservation, _producer_configs, _publish_sentinel, _rep_seed, _delayed_consumer
    from .workload import run_producer

    rep_seed = _rep_seed(scn, rep)
    edge_topic = f"{scn.mec_id}/{scn.data_type}"
    cloud_topic = cloud_topic_name(scn.mec_id, scn.data_type)
    shims: list[LinkShim] = []

    async def shim(forward: str, backward: str, tag: str) -> LinkShim:
        fwd, back = scn.link(forward), scn.link(backward)
        s = LinkShim("", fwd.with_seed(derive_seed(fwd.seed, rep, tag)), back.with_seed(derive_seed(back.seed, rep, tag)))
        await s.start()
        shims.append(s)
        return s

    procs: list[ServiceProcess] = []
    try:
        consumer_shim = await shim("uplink_5g", "downlink_5g", "consumer")
        cloud = ServiceProcess("cloud", "--port", "0", "--advertise", consumer_shim.address)
        procs.append(cloud)
        cloud_address = await cloud.start()
        consumer_shim.upstream = cloud_address
        wan_shim = await shim("wan", "wan", "wan")
        wan_shim.upstream = cloud_address

        epoch = wall_ms() + lead_s * 1000.0
        mec = ServiceProcess(
            "mec",
            "--port", "0",
            "--cloud", wan_shim.address,
            "--mec-id", scn.mec_id,
            "--data-type", scn.data_type,
            "--platform", scn.platform,
            "--scheme", scn.scheme,
            "--salt", str(rep_seed),
            "--epoch-ms", repr(epoch),
            "--sampler", scn.sampler,
            "--capacity", str(scn.edge_capacity),
            "--per-cpu-rate", repr(scn.per_cpu_rate),
            "--queue-per-gb", str(scn.queue_per_gb),
        )  # fmt: skip
        procs.append(mec)
        edge_address = await mec.start()
        uplink_shim = await shim("uplink_5g", "downlink_5g", "producer")
        uplink_shim.upstream = edge_address

        control = CloudClient(cloud_address)
        await control.register_mec(RegistryEntry(scn.mec_id, uplink_shim.address, cloud_topic))
        await control.close()

        consumer = asyncio.create_task(_delayed_consumer(scn, cloud_address))
        configs = _producer_configs(scn, rep_seed)
        logs = await asyncio.gather(*(run_producer(cfg, cloud_address, start_at_ms=epoch) for cfg in configs))
        sent = {cfg.producer_id: log for cfg, log in zip(configs, logs)}
        sentinel_published, sentinel_rejected = await _publish_sentinel(edge_address, edge_topic)
        received = await asyncio.wait_for(consumer, timeout=60.0 + scn.consumer_delay_ms / 1000.0)

        stats_client = EdgeClient(edge_address)
        stats = await stats_client.stats(edge_topic)
        stage_stats = await stats_client.stats(edge_topic + STAGE_SUFFIX)
        sampler = await stats_client.stats(edge_topic + SAMPLER_SUFFIX)
        await stats_client.close()
    finally:
        for p in reversed(procs):
            await p.stop()
        for s in shims:
            await s.stop()

    counters = StageCounters(
        received=sampler.accepted,
        sampled_out=sampler.dropped,
        admitted=stage_stats.accepted,
        stage_drops=stage_stats.dropped,
        forwarded=sampler.depth,
    )
    pmap = None
    if scn.platform == "hybrid":
        pmap = PseudonymMap(rep_seed)
        for cfg in configs:
            pmap.pseudonym(cfg.producer_id)
    conservation = _live_conservation(edge_topic, sent, stats, counters, sentinel_published, sentinel_rejected)
    return _finish(scn, rep, sent, received, pmap, counters, conservation, stats.dropped - sentinel_rejected)
