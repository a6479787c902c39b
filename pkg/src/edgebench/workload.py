"""Producer and consumer load generators and their CSV logs."""

from __future__ import annotations

import asyncio
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .cits import (
    DEFAULT_PAYLOAD_BYTES,
    MAX_PRODUCER_ID,
    CitsMessage,
    MessageKey,
    generate_payload,
    payload_seed,
)
from .cloud import CloudClient
from .edge import EdgeClient
from .wire import RemoteError, TransportError

logger = logging.getLogger(__name__)


def wall_ms() -> float:
    return time.time() * 1000.0


@dataclass(frozen=True)
class ProducerConfig:
    producer_id: int
    rate_hz: float = 2.0
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    duration_s: float = 60.0
    seed: int = 0
    clock_skew_ms: int = 0
    mec_id: str | None = None
    data_type: str = "cits"

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not 0 <= self.producer_id <= MAX_PRODUCER_ID:
            raise ValueError(f"producer_id must be in [0, {MAX_PRODUCER_ID}]")

    @property
    def count(self) -> int:
        return message_count(self.rate_hz, self.duration_s)

    def offset_ms(self, k: int) -> float:
        return k * 1000.0 / self.rate_hz

    def make_message(self, k: int, origin_time_ms: int, topic: str) -> CitsMessage:
        payload = generate_payload(payload_seed(self.seed, self.producer_id, k), self.payload_bytes)
        return CitsMessage(self.producer_id, k, origin_time_ms, payload, topic)


def message_count(rate_hz: float, duration_s: float) -> int:
    """Sends at ``k / rate`` for every ``k`` with ``k / rate < duration``."""
    return max(1, math.ceil(rate_hz * duration_s - 1e-9))


@dataclass(frozen=True)
class SentRecord:
    key: MessageKey
    status: str = "accepted"  # accepted | rejected | unknown

    @property
    def origin_time_ms(self) -> int:
        return self.key.origin_time_ms


@dataclass(frozen=True)
class ReceivedRecord:
    key: MessageKey
    receive_time_ms: int

    @property
    def origin_time_ms(self) -> int:
        return self.key.origin_time_ms


@dataclass
class SentLog:
    records: list[SentRecord] = field(default_factory=list)
    gaps: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def count(self, status: str) -> int:
        return sum(1 for r in self.records if r.status == status)

    @classmethod
    def merge(cls, logs) -> SentLog:
        out = cls()
        for log in logs:
            out.records.extend(log.records)
            out.gaps += log.gaps
        return out


@dataclass
class ReceivedLog:
    records: list[ReceivedRecord] = field(default_factory=list)
    timed_out: bool = False
    saw_sentinel: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def map_ids(self, fn: Callable[[int], int]) -> ReceivedLog:
        """Rewrite producer ids, e.g. to undo pseudonymization before a join."""
        records = [
            ReceivedRecord(MessageKey(fn(r.key.producer_id), r.key.origin_time_ms, r.key.sequence), r.receive_time_ms)
            for r in self.records
        ]
        return ReceivedLog(records, self.timed_out, self.saw_sentinel)

    @classmethod
    def merge(cls, logs) -> ReceivedLog:
        out = cls(saw_sentinel=True)
        for log in logs:
            out.records.extend(log.records)
            out.timed_out |= log.timed_out
            out.saw_sentinel &= log.saw_sentinel
        return out


# -- CSV --------------------------------------------------------------------

SENT_COLUMNS = ("producer_id", "sequence", "origin_time_ms")
RECEIVED_COLUMNS = ("producer_id", "sequence", "origin_time_ms", "receive_time_ms")


def write_sent_csv(path: str | Path, log: SentLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENT_COLUMNS)
        for r in log.records:
            w.writerow((r.key.producer_id, r.key.sequence, r.key.origin_time_ms))


def write_received_csv(path: str | Path, log: ReceivedLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECEIVED_COLUMNS)
        for r in log.records:
            w.writerow((r.key.producer_id, r.key.sequence, r.key.origin_time_ms, r.receive_time_ms))


def read_sent_csv(path: str | Path) -> SentLog:
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        return SentLog(
            [SentRecord(MessageKey(int(r["producer_id"]), int(r["origin_time_ms"]), int(r["sequence"]))) for r in rows]
        )


def read_received_csv(path: str | Path) -> ReceivedLog:
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        return ReceivedLog(
            [
                ReceivedRecord(
                    MessageKey(int(r["producer_id"]), int(r["origin_time_ms"]), int(r["sequence"])),
                    int(r["receive_time_ms"]),
                )
                for r in rows
            ]
        )


# -- live generators --------------------------------------------------------


class StartupError(RuntimeError):
    pass


async def run_producer(
    cfg: ProducerConfig,
    cloud_address: str,
    *,
    start_at_ms: float | None = None,
    timeout: float = 2.0,
    max_failures: int = 5,
    clock: Callable[[], float] = wall_ms,
    on_send: Callable[[int, float], None] | None = None,
) -> SentLog:
    """Publish ``cfg.count`` messages on a fixed grid starting at ``start_at_ms``
    (wall clock; default now). Every attempt is logged, rejected or not."""
    cloud = CloudClient(cloud_address, timeout)
    try:
        entry = await cloud.resolve_producer(cfg.mec_id)
    except (TransportError, RemoteError, LookupError) as exc:
        raise StartupError(f"producer {cfg.producer_id}: cannot resolve MEC: {exc}") from exc
    finally:
        await cloud.close()
    topic = f"{entry.mec_id}/{cfg.data_type}"
    edge = EdgeClient(entry.broker_address, timeout)
    try:
        await edge.connect()
    except TransportError as exc:
        raise StartupError(f"producer {cfg.producer_id}: {exc}") from exc

    loop = asyncio.get_running_loop()
    start_loop = loop.time()
    if start_at_ms is not None:
        start_loop += (start_at_ms - clock()) / 1000.0
    log = SentLog()
    failures = 0
    try:
        for k in range(cfg.count):
            delay = start_loop + cfg.offset_ms(k) / 1000.0 - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            stamped = clock()
            if on_send is not None:
                on_send(k, loop.time() - start_loop)
            origin = int(stamped) + cfg.clock_skew_ms
            msg = cfg.make_message(k, origin, topic)
            try:
                status = "accepted" if await edge.publish(topic, msg) else "rejected"
                failures = 0
            except (TransportError, RemoteError) as exc:
                status = "unknown"
                log.gaps += 1
                failures += 1
                logger.warning("producer %d send %d failed: %s", cfg.producer_id, k, exc)
                if failures > max_failures:
                    log.records.append(SentRecord(msg.key, status))
                    raise
            log.records.append(SentRecord(msg.key, status))
    finally:
        await edge.close()
    return log


async def run_consumer(
    mec_id: str,
    data_type: str,
    cloud_address: str,
    *,
    poll_interval_ms: float = 10.0,
    idle_timeout_s: float = 30.0,
    max_count: int = 500,
    timeout: float = 2.0,
    max_failures: int = 20,
    clock: Callable[[], float] = wall_ms,
    ready: asyncio.Event | None = None,
) -> ReceivedLog:
    """Poll the MEC's cloud topic from offset 0 until the end-of-run sentinel."""
    control = CloudClient(cloud_address, timeout)
    try:
        topic, address = await control.resolve_consumer(mec_id, data_type)
    except (TransportError, RemoteError, LookupError) as exc:
        raise StartupError(f"consumer for {mec_id}/{data_type}: {exc}") from exc
    finally:
        await control.close()
    client = CloudClient(address, timeout)
    log = ReceivedLog()
    offset = 0
    failures = 0
    last_progress = time.monotonic()
    if ready is not None:
        ready.set()
    try:
        while True:
            try:
                batch = await client.fetch(topic, offset, max_count)
                failures = 0
            except TransportError as exc:
                failures += 1
                if failures > max_failures:
                    raise
                logger.debug("consumer fetch failed, retrying: %s", exc)
                batch = []
            now = int(clock())
            for off, msg in batch:
                offset = off + 1
                if msg.is_sentinel:
                    log.saw_sentinel = True
                    return log
                log.records.append(ReceivedRecord(msg.key, now))
            if batch:
                last_progress = time.monotonic()
                if len(batch) == max_count:
                    continue
            elif time.monotonic() - last_progress > idle_timeout_s:
                log.timed_out = True
                return log
            await asyncio.sleep(poll_interval_ms / 1000.0)
    finally:
        await client.close()
