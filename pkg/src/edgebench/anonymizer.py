"""MEC data service: sampling gate, pseudonymization and a resource-capped stage.

The three named schemes differ in CPU, RAM and sampling rate. CPU and RAM
are emulated: ``cpu_units * per_cpu_rate`` caps the stage's processing rate
and ``ram_gb * queue_per_gb`` bounds its queue. Sampling uses fixed windows of
width ``1 / sampling_rate_hz`` aligned to the run epoch; each producer's
stream is sampled independently.
"""

from __future__ import annotations

import asyncio
import collections
import hashlib
import logging
import math
import struct
import time
from dataclasses import dataclass, field, replace
from typing import Iterable

from .cits import SENTINEL_PRODUCER_ID, CitsMessage
from .cloud import AppendRejected, CloudClient
from .edge import RemoteSubscription, TopicStats
from .wire import RemoteError, TransportError

logger = logging.getLogger(__name__)

UNLIMITED = math.inf

DEFAULT_PER_CPU_RATE = 500.0  # msg/s per emulated cpu unit
DEFAULT_QUEUE_PER_GB = 250  # stage queue slots per emulated GB


@dataclass(frozen=True)
class AnonymizationScheme:
    name: str
    cpu_units: int | None
    ram_gb: int | None
    sampling_rate_hz: float = UNLIMITED

    def __post_init__(self):
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive (use UNLIMITED for no sampling)")

    @property
    def samples(self) -> bool:
        return math.isfinite(self.sampling_rate_hz)

    def rate_cap(self, per_cpu_rate: float = DEFAULT_PER_CPU_RATE) -> float:
        """Sustained processing rate in msg/s; ``inf`` when unconstrained."""
        return UNLIMITED if self.cpu_units is None else self.cpu_units * per_cpu_rate

    def queue_bound(self, queue_per_gb: int = DEFAULT_QUEUE_PER_GB) -> float:
        return UNLIMITED if self.ram_gb is None else self.ram_gb * queue_per_gb


SCHEMES: dict[str, AnonymizationScheme] = {
    "small": AnonymizationScheme("Small", 2, 2, 1 / 5),
    "medium": AnonymizationScheme("Medium", 4, 4, 1.0),
    "large": AnonymizationScheme("Large", 8, 8, UNLIMITED),
    "none": AnonymizationScheme("None", None, None, UNLIMITED),
}


def get_scheme(name: str | AnonymizationScheme) -> AnonymizationScheme:
    if isinstance(name, AnonymizationScheme):
        return name
    try:
        return SCHEMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}") from None


def predicted_packet_loss(sampling_rate_hz: float | None, input_rate_hz: float) -> float:
    """Expected loss in percent when a sampler of ``sampling_rate_hz`` sees
    ``input_rate_hz`` of traffic. ``None`` or ``inf`` means no sampling."""
    if not input_rate_hz > 0:
        raise ValueError(f"input rate must be positive, got {input_rate_hz}")
    if sampling_rate_hz is None or math.isinf(sampling_rate_hz):
        return 0.0
    if sampling_rate_hz < 0:
        raise ValueError(f"sampling rate must be non-negative, got {sampling_rate_hz}")
    return max(0.0, (1 - sampling_rate_hz / input_rate_hz) * 100)


# -- sampling ---------------------------------------------------------------


@dataclass
class SamplerState:
    epoch_ms: float = 0.0
    window_index: int | None = None
    forwarded_in_window: int = 0


def window_of(rate_hz: float, arrival_ms: float, epoch_ms: float = 0.0) -> int:
    # rates like 0.2 Hz are not exact in binary; round the width to the
    # nanosecond so window edges land where the decimal value says
    width_ms = round(1000.0 / rate_hz, 6)
    return math.floor((arrival_ms - epoch_ms) / width_ms)


def sample_gate(
    scheme: AnonymizationScheme,
    msg: CitsMessage,
    state: SamplerState,
    arrival_ms: float | None = None,
) -> bool:
    """Forward the first message arriving in each sampling window.

    ``arrival_ms`` defaults to the message's origin time.
    """
    if not scheme.samples:
        return True
    if arrival_ms is None:
        arrival_ms = msg.origin_time_ms
    window = window_of(scheme.sampling_rate_hz, arrival_ms, state.epoch_ms)
    if window != state.window_index:
        state.window_index = window
        state.forwarded_in_window = 0
    if state.forwarded_in_window:
        return False
    state.forwarded_in_window = 1
    return True


class Sampler:
    """Per-producer sampling with ``first`` or ``last`` message per window.

    ``last`` holds the most recent message of the open window and releases it
    when a later window starts or on :meth:`flush`.
    """

    def __init__(self, scheme: AnonymizationScheme, mode: str = "first", epoch_ms: float = 0.0):
        if mode not in ("first", "last"):
            raise ValueError(f"sampler mode must be 'first' or 'last', not {mode!r}")
        self.scheme = scheme
        self.mode = mode
        self.epoch_ms = epoch_ms
        self.states: dict[int, SamplerState] = {}
        self._held: dict[int, tuple[int, CitsMessage]] = {}
        self.sampled_out = 0

    def offer(self, msg: CitsMessage, arrival_ms: float) -> list[CitsMessage]:
        if not self.scheme.samples:
            return [msg]
        if self.mode == "first":
            state = self.states.setdefault(msg.producer_id, SamplerState(self.epoch_ms))
            if sample_gate(self.scheme, msg, state, arrival_ms):
                return [msg]
            self.sampled_out += 1
            return []
        window = window_of(self.scheme.sampling_rate_hz, arrival_ms, self.epoch_ms)
        held = self._held.get(msg.producer_id)
        self._held[msg.producer_id] = (window, msg)
        if held is None:
            return []
        if held[0] == window:
            self.sampled_out += 1
            return []
        return [held[1]]

    def flush(self) -> list[CitsMessage]:
        out = [msg for _, msg in self._held.values()]
        self._held.clear()
        return out


# -- pseudonyms -------------------------------------------------------------


class PseudonymExhausted(RuntimeError):
    pass


class PseudonymMap:
    """Stable, injective producer id -> 32-bit pseudonym for one run salt."""

    LIMIT = SENTINEL_PRODUCER_ID  # ids 0..2**32-2 are usable

    def __init__(self, salt: int):
        self.salt = salt
        self.mapping: dict[int, int] = {}
        self._reverse: dict[int, int] = {}
        self._key = struct.pack(">Q", salt & (2**64 - 1))

    def _derive(self, producer_id: int, attempt: int) -> int:
        h = hashlib.blake2b(struct.pack(">II", producer_id, attempt), digest_size=8, key=self._key)
        return int.from_bytes(h.digest(), "big") & 0xFFFFFFFF

    def pseudonym(self, producer_id: int) -> int:
        known = self.mapping.get(producer_id)
        if known is not None:
            return known
        if len(self.mapping) >= self.LIMIT - 1:
            raise PseudonymExhausted("pseudonym space exhausted")
        attempt = 0
        while True:
            candidate = self._derive(producer_id, attempt)
            if (
                candidate != producer_id
                and candidate != SENTINEL_PRODUCER_ID
                and candidate not in self._reverse
                and candidate not in self.mapping
            ):
                break
            attempt += 1
        self.mapping[producer_id] = candidate
        self._reverse[candidate] = producer_id
        return candidate

    def original(self, pseudonym: int) -> int:
        return self._reverse[pseudonym]

    def reidentify(self, producer_id: int) -> int:
        """Original id behind ``producer_id``; unknown ids pass through."""
        return self._reverse.get(producer_id, producer_id)

    def __len__(self) -> int:
        return len(self.mapping)


def pseudonymize(msg: CitsMessage, pmap: PseudonymMap) -> CitsMessage:
    if msg.is_sentinel:
        return msg
    return replace(msg, producer_id=pmap.pseudonym(msg.producer_id))


# -- stage ------------------------------------------------------------------


@dataclass
class StageCounters:
    received: int = 0
    sampled_out: int = 0
    admitted: int = 0
    stage_drops: int = 0
    forwarded: int = 0
    retries: int = 0


@dataclass
class StageResult:
    output: list[tuple[float, CitsMessage]] = field(default_factory=list)
    counters: StageCounters = field(default_factory=StageCounters)


def run_stage(
    arrivals: Iterable[tuple[float, CitsMessage]],
    scheme: AnonymizationScheme,
    pmap: PseudonymMap | None,
    *,
    per_cpu_rate: float = DEFAULT_PER_CPU_RATE,
    queue_per_gb: int = DEFAULT_QUEUE_PER_GB,
    rate_cap: float | None = None,
    queue_bound: float | None = None,
    sampler: str = "first",
    epoch_ms: float = 0.0,
) -> StageResult:
    """Replay the stage in virtual time.

    ``arrivals`` are ``(time_ms, message)`` pairs in nondecreasing time. The
    result lists ``(departure_ms, message)`` in departure order. The sentinel
    bypasses sampling and the queue bound and releases held ``last`` samples.
    ``pmap=None`` forwards identities untouched.
    """
    cap = scheme.rate_cap(per_cpu_rate) if rate_cap is None else rate_cap
    bound = scheme.queue_bound(queue_per_gb) if queue_bound is None else queue_bound
    service_ms = 0.0 if math.isinf(cap) else 1000.0 / cap
    gate = Sampler(scheme, sampler, epoch_ms)
    result = StageResult()
    c = result.counters
    in_system: collections.deque[float] = collections.deque()  # departure times
    last_departure = -math.inf

    def admit(msg: CitsMessage, now: float, force: bool = False) -> None:
        nonlocal last_departure
        while in_system and in_system[0] <= now:
            in_system.popleft()
        if not force and len(in_system) >= bound:
            c.stage_drops += 1
            return
        if not force:
            c.admitted += 1
        departure = max(now, last_departure) + service_ms
        last_departure = departure
        in_system.append(departure)
        out = msg if pmap is None else pseudonymize(msg, pmap)
        result.output.append((departure, out))
        if not force:
            c.forwarded += 1

    for now, msg in arrivals:
        if msg.is_sentinel:
            for held in gate.flush():
                admit(held, now)
            admit(msg, now, force=True)
            continue
        c.received += 1
        for passed in gate.offer(msg, now):
            admit(passed, now)
    c.sampled_out = gate.sampled_out
    return result


def wall_ms() -> float:
    return time.time() * 1000.0


class AnonymizerStage:
    """Live stage: edge subscription in, cloud appends out.

    With ``pseudonyms=None`` and the ``none`` scheme it degenerates into the
    plain bridge used by the local platform.
    """

    def __init__(
        self,
        scheme: AnonymizationScheme,
        pseudonyms: PseudonymMap | None,
        *,
        edge_address: str,
        edge_topic: str,
        cloud_address: str,
        cloud_topic: str,
        per_cpu_rate: float = DEFAULT_PER_CPU_RATE,
        queue_per_gb: int = DEFAULT_QUEUE_PER_GB,
        sampler: str = "first",
        epoch_ms: float = 0.0,
        append_retries: int = 3,
        timeout: float = 5.0,
    ):
        self.scheme = scheme
        self.pseudonyms = pseudonyms
        self.edge_address = edge_address
        self.edge_topic = edge_topic
        self.cloud_topic = cloud_topic
        self.cloud = CloudClient(cloud_address, timeout)
        cap = scheme.rate_cap(per_cpu_rate)
        self.service_s = 0.0 if math.isinf(cap) else 1.0 / cap
        self.bound = scheme.queue_bound(queue_per_gb)
        self.sampler = Sampler(scheme, sampler, epoch_ms)
        self.append_retries = append_retries
        self.counters = StageCounters()
        self.done = asyncio.Event()
        self._queue: collections.deque[CitsMessage] = collections.deque()
        self._ready = asyncio.Event()
        self._tasks: list[asyncio.Task] = []
        self._sub = None

    def stats(self) -> TopicStats:
        c = self.counters
        return TopicStats(c.admitted, c.stage_drops, len(self._queue))

    async def start(self) -> None:
        await self.cloud.connect()
        self._sub = await RemoteSubscription(self.edge_address, self.edge_topic).open()
        self._tasks = [asyncio.create_task(self._read()), asyncio.create_task(self._work())]

    def _admit(self, msg: CitsMessage, force: bool = False) -> None:
        if not force and len(self._queue) >= self.bound:
            self.counters.stage_drops += 1
            return
        if not force:
            self.counters.admitted += 1
        self._queue.append(msg)
        self._ready.set()

    async def _read(self) -> None:
        async for msg in self._sub:
            now = wall_ms()
            if msg.is_sentinel:
                for held in self.sampler.flush():
                    self._admit(held)
                self._admit(msg, force=True)
                continue
            self.counters.received += 1
            for passed in self.sampler.offer(msg, now):
                self._admit(passed)
            self.counters.sampled_out = self.sampler.sampled_out

    async def _work(self) -> None:
        loop = asyncio.get_running_loop()
        next_free = loop.time()
        while True:
            while not self._queue:
                self._ready.clear()
                await self._ready.wait()
            if self.service_s:
                next_free = max(loop.time(), next_free) + self.service_s
                await asyncio.sleep(next_free - loop.time())
            msg = self._queue[0]
            out = msg if self.pseudonyms is None else pseudonymize(msg, self.pseudonyms)
            ok = await self._append(out)
            self._queue.popleft()
            if msg.is_sentinel:
                self.done.set()
                continue
            if ok:
                self.counters.forwarded += 1
            else:
                self.counters.stage_drops += 1

    async def _append(self, msg: CitsMessage) -> bool:
        for attempt in range(self.append_retries + 1):
            if attempt:
                self.counters.retries += 1
            try:
                await self.cloud.append(self.cloud_topic, msg)
                return True
            except (AppendRejected, RemoteError, TransportError) as exc:
                logger.debug("append attempt %d failed: %s", attempt, exc)
        return False

    async def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        if self._sub is not None:
            await self._sub.close()
        await self.cloud.close()
