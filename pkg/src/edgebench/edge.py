"""Edge broker: bounded FIFO topics with fan-out subscriptions.

Each topic keeps one shared queue. Subscribers hold a cursor into it and a
message is retired once every current subscriber has read past it. A publish
that would push the queue beyond ``capacity`` is rejected (reject-newest) and
counted; the rejection is reported to the publisher, never raised.
"""

from __future__ import annotations

import asyncio
import collections
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterator

from . import wire
from .cits import CitsMessage, decode_message, encode_message

logger = logging.getLogger(__name__)

DEFAULT_PORT = 5680
DEFAULT_CAPACITY = 1000

STAGE_SUFFIX = ".stage"


class BrokerShutdown(Exception):
    """The broker closed while a subscriber was waiting."""


@dataclass(frozen=True)
class TopicStats:
    accepted: int = 0
    dropped: int = 0
    depth: int = 0

    @property
    def delivered(self) -> int:
        return self.accepted - self.depth


class EdgeTopic:
    def __init__(self, name: str, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.name = name
        self.capacity = capacity
        self.queue: collections.deque[CitsMessage] = collections.deque()
        self.head = 0  # absolute index of queue[0]
        self.accepted = 0
        self.dropped_count = 0
        self.subscriptions: list[Subscription] = []

    def retire(self) -> None:
        if not self.subscriptions:
            return
        low = min(sub.cursor for sub in self.subscriptions)
        while self.head < low:
            self.queue.popleft()
            self.head += 1


class Subscription:
    """Cursor over one topic; iterate to drain what is currently queued."""

    def __init__(self, broker: EdgeBroker, topic: EdgeTopic):
        self._broker = broker
        self._topic = topic
        self.cursor = topic.head
        self.closed = False
        self._listeners: list[Callable[[], None]] = []

    @property
    def topic(self) -> str:
        return self._topic.name

    def poll(self, max_count: int | None = None) -> list[CitsMessage]:
        with self._broker._lock:
            topic = self._topic
            end = topic.head + len(topic.queue)
            if max_count is not None:
                end = min(end, self.cursor + max_count)
            out = [topic.queue[i - topic.head] for i in range(self.cursor, end)]
            self.cursor = end
            topic.retire()
        return out

    def pending(self) -> int:
        with self._broker._lock:
            return self._topic.head + len(self._topic.queue) - self.cursor

    def __iter__(self) -> Iterator[CitsMessage]:
        while batch := self.poll(64):
            yield from batch

    def add_listener(self, callback: Callable[[], None]) -> None:
        """``callback`` runs after every accepted publish and at shutdown."""
        self._listeners.append(callback)

    def close(self) -> None:
        with self._broker._lock:
            if self.closed:
                return
            self.closed = True
            if self in self._topic.subscriptions:
                self._topic.subscriptions.remove(self)
            self._topic.retire()
        self._notify()

    def _notify(self) -> None:
        for cb in list(self._listeners):
            cb()


class EdgeBroker:
    """In-memory broker core; thread-safe, transport-agnostic."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self.closed = False
        self._topics: dict[str, EdgeTopic] = {}
        self._external: dict[str, Callable[[], TopicStats]] = {}
        self._lock = threading.RLock()

    def _topic(self, name: str) -> EdgeTopic:
        topic = self._topics.get(name)
        if topic is None:
            topic = self._topics[name] = EdgeTopic(name, self.capacity)
        return topic

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._topics)

    def set_capacity(self, name: str, capacity: int) -> None:
        with self._lock:
            self._topic(name).capacity = capacity

    def publish(self, topic: str, msg: CitsMessage) -> bool:
        """Enqueue ``msg``; False means rejected because the queue is full."""
        with self._lock:
            if self.closed:
                raise BrokerShutdown(topic)
            t = self._topic(topic)
            if len(t.queue) >= t.capacity:
                t.dropped_count += 1
                return False
            t.queue.append(msg)
            t.accepted += 1
            assert len(t.queue) <= t.capacity
            subs = list(t.subscriptions)
        for sub in subs:
            sub._notify()
        return True

    def subscribe(self, topic: str) -> Subscription:
        with self._lock:
            if self.closed:
                raise BrokerShutdown(topic)
            t = self._topic(topic)
            sub = Subscription(self, t)
            t.subscriptions.append(sub)
            return sub

    def stats(self, topic: str) -> TopicStats:
        with self._lock:
            if topic in self._external:
                return self._external[topic]()
            t = self._topics.get(topic)
            if t is None:
                return TopicStats()
            return TopicStats(t.accepted, t.dropped_count, len(t.queue))

    def register_stats(self, name: str, provider: Callable[[], TopicStats]) -> None:
        """Expose counters of a co-located component (e.g. ``<topic>.stage``)."""
        with self._lock:
            self._external[name] = provider

    def close(self) -> None:
        with self._lock:
            self.closed = True
            subs = [s for t in self._topics.values() for s in t.subscriptions]
        for sub in subs:
            sub.closed = True
            sub._notify()


class EdgeServer(wire.FrameServer):
    """TCP front end for :class:`EdgeBroker`."""

    def __init__(self, broker: EdgeBroker | None = None, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        super().__init__(host, port)
        self.broker = broker or EdgeBroker()

    async def handle(self, reader, writer) -> None:
        while True:
            command, body = await wire.read_frame(reader)
            if command == wire.SUBSCRIBE:
                topic = wire.BodyReader(body).str()
                await self._stream(topic, reader, writer)
                return
            writer.write(self._dispatch(command, body))
            await writer.drain()

    def _dispatch(self, command: int, body: bytes) -> bytes:
        try:
            r = wire.BodyReader(body)
            if command == wire.PUBLISH:
                topic = r.str()
                msg = decode_message(r.rest())
                ok = self.broker.publish(topic, msg)
                return wire.pack_frame(command, bytes((wire.ACCEPTED if ok else wire.REJECTED,)))
            if command == wire.STATS:
                s = self.broker.stats(r.str())
                return wire.pack_frame(command, wire.u64(s.accepted) + wire.u64(s.dropped) + wire.u64(s.depth))
            return _error("bad-command", f"0x{command:02x}")
        except BrokerShutdown as exc:
            return _error("shutdown", str(exc))
        except (ValueError, wire.TransportError) as exc:
            return _error("bad-request", str(exc))

    async def _stream(self, topic: str, reader, writer) -> None:
        sub = self.broker.subscribe(topic)
        wake = asyncio.Event()
        loop = asyncio.get_running_loop()
        sub.add_listener(lambda: loop.call_soon_threadsafe(wake.set))
        closed_by_peer = asyncio.create_task(reader.read())
        try:
            while True:
                wake.clear()
                batch = sub.poll(256)
                for msg in batch:
                    writer.write(wire.pack_frame(wire.DELIVER, encode_message(msg)))
                if batch:
                    await writer.drain()
                    continue
                if sub.closed:
                    writer.write(wire.pack_frame(wire.SHUTDOWN, topic.encode("utf-8")))
                    await writer.drain()
                    return
                waiter = asyncio.create_task(wake.wait())
                done, _ = await asyncio.wait({waiter, closed_by_peer}, return_when=asyncio.FIRST_COMPLETED)
                if closed_by_peer in done:
                    waiter.cancel()
                    return
        finally:
            closed_by_peer.cancel()
            sub.close()


def _error(kind: str, detail: str) -> bytes:
    return wire.pack_frame(wire.ERROR, f"{kind}: {detail}".encode("utf-8"))


class EdgeClient:
    """Publisher/stats client for a remote edge broker."""

    def __init__(self, address: str, timeout: float = 5.0):
        self.rpc = wire.RpcClient(address, timeout)

    async def connect(self) -> None:
        await self.rpc.connect()

    async def publish(self, topic: str, msg: CitsMessage) -> bool:
        r = await self.rpc.call(wire.PUBLISH, wire.pack_str(topic) + encode_message(msg))
        return r.u8() == wire.ACCEPTED

    async def stats(self, topic: str) -> TopicStats:
        r = await self.rpc.call(wire.STATS, wire.pack_str(topic))
        return TopicStats(r.u64(), r.u64(), r.u64())

    async def close(self) -> None:
        await self.rpc.close()


class RemoteSubscription:
    """Async iterator over messages pushed by a remote edge broker.

    Iteration ends when the broker sends its shutdown notice or the
    connection closes.
    """

    def __init__(self, address: str, topic: str):
        self.address = address
        self.topic = topic
        self.shutdown_notice = False
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None

    async def open(self) -> RemoteSubscription:
        host, port = wire.parse_address(self.address)
        try:
            self._reader, self._writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            raise wire.TransportError(f"cannot reach {self.address}: {exc}") from exc
        self._writer.write(wire.pack_frame(wire.SUBSCRIBE, wire.pack_str(self.topic)))
        await self._writer.drain()
        return self

    def __aiter__(self):
        return self

    async def __anext__(self) -> CitsMessage:
        if self._reader is None:
            raise StopAsyncIteration
        try:
            command, body = await wire.read_frame(self._reader)
        except (asyncio.IncompleteReadError, ConnectionError):
            await self.close()
            raise StopAsyncIteration from None
        if command == wire.DELIVER:
            return decode_message(body)
        if command == wire.SHUTDOWN:
            self.shutdown_notice = True
            await self.close()
            raise StopAsyncIteration
        raise wire.TransportError(f"unexpected frame 0x{command:02x} on subscription")

    async def close(self) -> None:
        writer, self._writer, self._reader = self._writer, None, None
        if writer is not None:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass
