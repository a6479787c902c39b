"""Link emulation: propagation delay, uniform jitter, serialization at a
bandwidth cap and Bernoulli loss.

A link is a FIFO state machine: frames leave in send order, each one waits for
the previous frame's serialization to finish, and jitter never reorders
deliveries. :class:`LinkShim` applies the same model to live TCP traffic by
holding each length-prefixed frame until its delivery time.
"""

from __future__ import annotations

import asyncio
import hashlib
import itertools
import logging
import math
import random
import statistics
from dataclasses import dataclass, field

from . import wire

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkProfile:
    base_delay_ms: float = 0.0
    jitter_ms: float = 0.0
    bandwidth_mbps: float = math.inf
    random_loss_pct: float = 0.0
    seed: int = 0
    note: str = ""

    def __post_init__(self):
        for name in ("base_delay_ms", "jitter_ms", "bandwidth_mbps", "random_loss_pct"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.bandwidth_mbps == 0:
            raise ValueError("bandwidth_mbps must be positive")
        if self.random_loss_pct > 100:
            raise ValueError("random_loss_pct must be at most 100")

    def serialization_ms(self, size_bytes: int) -> float:
        if math.isinf(self.bandwidth_mbps):
            return 0.0
        return size_bytes * 8 / (self.bandwidth_mbps * 1e3)

    def with_seed(self, seed: int) -> LinkProfile:
        return LinkProfile(
            self.base_delay_ms, self.jitter_ms, self.bandwidth_mbps, self.random_loss_pct, seed, self.note
        )


IDENTITY = LinkProfile(note="identity")


def derive_seed(*parts: int | str) -> int:
    text = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")


def default_profiles(seed: int = 0) -> dict[str, LinkProfile]:
    """5G access links calibrated to the measured platform, plus a WAN hop.

    Each 5G direction is 7.5 ms plus uniform jitter on [0, 9.5] ms, so an
    echo crossing both spans 15 to 34 ms with a 24.5 ms mean. Bandwidths are
    the measured uplink/downlink averages. The WAN numbers are not measured.
    """
    return {
        "uplink_5g": LinkProfile(7.5, 9.5, 100.0, 0.0, derive_seed(seed, "uplink"), "5G UL"),
        "wan": LinkProfile(5.0, 1.0, 1000.0, 0.0, derive_seed(seed, "wan"), "assumed, not measured"),
        "downlink_5g": LinkProfile(7.5, 9.5, 152.0, 0.0, derive_seed(seed, "downlink"), "5G DL"),
    }


@dataclass
class LinkState:
    rng: random.Random
    busy_until_ms: float = -math.inf
    last_delivery_ms: float = -math.inf
    last_send_ms: float = -math.inf
    sent: int = 0
    dropped: int = 0

    @classmethod
    def for_profile(cls, profile: LinkProfile) -> LinkState:
        return cls(random.Random(profile.seed))


def delivery_time(link: LinkProfile, frame_size_bytes: int, send_time_ms: float, state: LinkState) -> float | None:
    """Delivery time in ms of a frame sent at ``send_time_ms``, or None if lost."""
    if send_time_ms < state.last_send_ms:
        raise ValueError("send times on a link must be nondecreasing")
    state.last_send_ms = send_time_ms
    # draw both numbers every time so the schedule depends only on the seed
    jitter = state.rng.random() * link.jitter_ms
    lost = state.rng.random() * 100 < link.random_loss_pct
    start = max(send_time_ms, state.busy_until_ms)
    state.busy_until_ms = start + link.serialization_ms(frame_size_bytes)
    state.sent += 1
    if lost:
        state.dropped += 1
        return None
    deliver = max(state.busy_until_ms + link.base_delay_ms + jitter, state.last_delivery_ms)
    state.last_delivery_ms = deliver
    return deliver


class Link:
    """A profile bound to its state."""

    def __init__(self, profile: LinkProfile):
        self.profile = profile
        self.state = LinkState.for_profile(profile)

    def send(self, frame_size_bytes: int, send_time_ms: float) -> float | None:
        return delivery_time(self.profile, frame_size_bytes, send_time_ms, self.state)


# -- calibration probes -----------------------------------------------------


@dataclass
class EchoResult:
    rtts_ms: list[float] = field(default_factory=list)
    lost: int = 0

    @property
    def mean(self) -> float:
        return statistics.fmean(self.rtts_ms)

    @property
    def min(self) -> float:
        return min(self.rtts_ms)

    @property
    def max(self) -> float:
        return max(self.rtts_ms)


def echo_probe(
    uplink: LinkProfile,
    downlink: LinkProfile,
    *,
    samples: int = 120,
    interval_ms: float = 1000.0,
    size_bytes: int = 64,
    repeats: int = 5,
) -> EchoResult:
    """Ping-style RTT through an uplink and back over a downlink.

    Defaults follow the 5G measurement campaign: one probe per second for
    120 s, repeated five times with fresh link state.
    """
    result = EchoResult()
    for rep in range(repeats):
        up = Link(uplink.with_seed(derive_seed(uplink.seed, "echo", rep)))
        down = Link(downlink.with_seed(derive_seed(downlink.seed, "echo", rep)))
        for k in range(samples):
            sent = k * interval_ms
            there = up.send(size_bytes, sent)
            back = None if there is None else down.send(size_bytes, there)
            if back is None:
                result.lost += 1
            else:
                result.rtts_ms.append(back - sent)
    return result


def bulk_transfer(profile: LinkProfile, total_bytes: int, frame_bytes: int = 1500) -> float:
    """Goodput in Mbit/s of a back-to-back transfer of ``total_bytes``."""
    link = Link(profile)
    delivered = 0
    last = 0.0
    for offset in range(0, total_bytes, frame_bytes):
        size = min(frame_bytes, total_bytes - offset)
        at = link.send(size, 0.0)
        if at is not None:
            delivered += size
            last = at
    if last <= 0:
        return math.inf
    return delivered * 8 / (last * 1e3)


# -- live shaping -----------------------------------------------------------


class LinkShim(wire.FrameServer):
    """TCP proxy that delays each frame per a link profile.

    ``forward`` shapes client-to-upstream frames, ``backward`` the replies.
    Every accepted connection gets its own link state, seeded from the
    profile seed and the connection's ordinal.
    """

    def __init__(
        self,
        upstream: str,
        forward: LinkProfile,
        backward: LinkProfile,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        super().__init__(host, port)
        self.upstream = upstream
        self.forward = forward
        self.backward = backward
        self._ordinal = itertools.count()

    async def handle(self, reader, writer) -> None:
        n = next(self._ordinal)
        host, port = wire.parse_address(self.upstream)
        up_reader, up_writer = await asyncio.open_connection(host, port)
        fwd = Link(self.forward.with_seed(derive_seed(self.forward.seed, "conn", n)))
        back = Link(self.backward.with_seed(derive_seed(self.backward.seed, "conn", n)))
        tasks = [
            asyncio.create_task(_pump(reader, up_writer, fwd)),
            asyncio.create_task(_pump(up_reader, writer, back)),
        ]
        try:
            await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
        finally:
            for t in tasks:
                t.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            up_writer.close()


async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter, link: Link) -> None:
    loop = asyncio.get_running_loop()
    queue: asyncio.Queue = asyncio.Queue()

    async def deliver() -> None:
        while True:
            at_ms, frame = await queue.get()
            if frame is None:
                return
            delay = at_ms / 1000.0 - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            writer.write(frame)
            await writer.drain()

    sender = asyncio.create_task(deliver())
    try:
        while True:
            try:
                frame = await wire.read_raw_frame(reader)
            except (asyncio.IncompleteReadError, ConnectionError):
                break
            at = link.send(len(frame), loop.time() * 1000.0)
            if at is not None:
                queue.put_nowait((at, frame))
        queue.put_nowait((0.0, None))
        await sender
    finally:
        sender.cancel()
