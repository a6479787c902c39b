"""Cloud segment: single-partition append-only topic logs and the data service
that points producers at a MEC and consumers at a cloud topic."""

from __future__ import annotations

import itertools
import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

from . import wire
from .cits import CitsMessage, decode_message, encode_message

logger = logging.getLogger(__name__)

DEFAULT_PORT = 5690


class AppendRejected(Exception):
    """The log is at its configured record bound."""


class OffsetOutOfRange(IndexError):
    pass


class TopicNotFound(KeyError):
    pass


class NoMecRegistered(LookupError):
    pass


class MecNotFound(KeyError):
    pass


@dataclass(frozen=True)
class RegistryEntry:
    mec_id: str
    broker_address: str
    cloud_topic: str


def cloud_topic_name(mec_id: str, data_type: str) -> str:
    return f"cloud/{mec_id}/{data_type}"


class PartitionLog:
    """Append-only list of messages addressed by contiguous 0-based offsets.

    Appends are serialized by a lock; readers slice the list, which only ever
    grows, so a fetched ``(offset, message)`` pair never changes.
    """

    def __init__(self, topic: str, max_records: int | None = None, journal: BinaryIO | None = None):
        self.topic = topic
        self.max_records = max_records
        self.records: list[CitsMessage] = []
        self.rejected = 0
        self._journal = journal
        self._lock = threading.Lock()

    @property
    def next_offset(self) -> int:
        return len(self.records)

    def append(self, msg: CitsMessage) -> int:
        with self._lock:
            if self.max_records is not None and len(self.records) >= self.max_records:
                self.rejected += 1
                raise AppendRejected(f"{self.topic} holds {self.max_records} records")
            offset = len(self.records)
            self.records.append(msg)
            if self._journal is not None:
                frame = encode_message(msg)
                self._journal.write(struct.pack(">I", len(frame)) + frame)
            return offset

    def fetch(self, from_offset: int, max_count: int) -> list[tuple[int, CitsMessage]]:
        end = len(self.records)
        if from_offset < 0 or from_offset > end:
            raise OffsetOutOfRange(f"offset {from_offset} outside [0, {end}] of {self.topic}")
        stop = min(end, from_offset + max(0, max_count))
        return list(zip(range(from_offset, stop), self.records[from_offset:stop]))


def read_journal(path: str | Path) -> Iterator[CitsMessage]:
    """Replay a journal written by :class:`CloudBroker` (length-prefixed frames)."""
    with open(path, "rb") as fh:
        while head := fh.read(4):
            (n,) = struct.unpack(">I", head)
            yield decode_message(fh.read(n))


class CloudBroker:
    """Topic logs plus the MEC registry, transport-agnostic."""

    def __init__(
        self,
        registry: list[RegistryEntry] | None = None,
        *,
        advertised_address: str = f"127.0.0.1:{DEFAULT_PORT}",
        max_records: int | None = None,
        journal_dir: str | Path | None = None,
    ):
        self.advertised_address = advertised_address
        self.max_records = max_records
        self.journal_dir = Path(journal_dir) if journal_dir else None
        self._logs: dict[str, PartitionLog] = {}
        self._journals: list[BinaryIO] = []
        self._registry: dict[str, RegistryEntry] = {}
        self._round_robin = itertools.count()
        self._lock = threading.Lock()
        for entry in registry or ():
            self.register_mec(entry)

    def log(self, topic: str, create: bool = False) -> PartitionLog:
        with self._lock:
            log = self._logs.get(topic)
            if log is None:
                if not create:
                    raise TopicNotFound(topic)
                journal = None
                if self.journal_dir is not None:
                    self.journal_dir.mkdir(parents=True, exist_ok=True)
                    journal = open(self.journal_dir / (topic.replace("/", "_") + ".journal"), "ab")
                    self._journals.append(journal)
                log = self._logs[topic] = PartitionLog(topic, self.max_records, journal)
            return log

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._logs)

    def append(self, topic: str, msg: CitsMessage) -> int:
        return self.log(topic, create=True).append(msg)

    def fetch(self, topic: str, from_offset: int, max_count: int) -> list[tuple[int, CitsMessage]]:
        return self.log(topic).fetch(from_offset, max_count)

    def register_mec(self, entry: RegistryEntry) -> None:
        with self._lock:
            self._registry[entry.mec_id] = entry

    def resolve_producer(self, requested_mec: str | None = None) -> RegistryEntry:
        with self._lock:
            if not self._registry:
                raise NoMecRegistered("no MEC registered")
            if requested_mec:
                try:
                    return self._registry[requested_mec]
                except KeyError:
                    raise MecNotFound(requested_mec) from None
            entries = [self._registry[k] for k in sorted(self._registry)]
            if len(entries) == 1:
                return entries[0]
            return entries[next(self._round_robin) % len(entries)]

    def resolve_consumer(self, mec_id: str, data_type: str) -> tuple[str, str]:
        """Return ``(cloud_topic, cloud_address)``; the topic log is created so
        consumers can start polling before the first record arrives."""
        with self._lock:
            if mec_id not in self._registry:
                raise MecNotFound(mec_id)
        topic = cloud_topic_name(mec_id, data_type)
        self.log(topic, create=True)
        return topic, self.advertised_address

    def close(self) -> None:
        for fh in self._journals:
            fh.close()
        self._journals.clear()


_FETCH_RECORD = struct.Struct(">QI")


class CloudServer(wire.FrameServer):
    def __init__(self, broker: CloudBroker | None = None, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        super().__init__(host, port)
        self.broker = broker or CloudBroker()

    async def handle(self, reader, writer) -> None:
        while True:
            command, body = await wire.read_frame(reader)
            writer.write(self._dispatch(command, body))
            await writer.drain()

    def _dispatch(self, command: int, body: bytes) -> bytes:
        r = wire.BodyReader(body)
        b = self.broker
        try:
            if command == wire.APPEND:
                topic = r.str()
                msg = decode_message(r.rest())
                try:
                    offset = b.append(topic, msg)
                except AppendRejected:
                    return wire.pack_frame(command, bytes((wire.REJECTED,)) + wire.u64(0))
                return wire.pack_frame(command, bytes((wire.ACCEPTED,)) + wire.u64(offset))
            if command == wire.FETCH:
                topic = r.str()
                start, count = r.u64(), r.u32()
                records = b.fetch(topic, start, count)
                parts = [wire.u32(len(records))]
                for offset, msg in records:
                    frame = encode_message(msg)
                    parts.append(_FETCH_RECORD.pack(offset, len(frame)))
                    parts.append(frame)
                return wire.pack_frame(command, b"".join(parts))
            if command == wire.RESOLVE_PRODUCER:
                entry = b.resolve_producer(r.str() or None)
                return wire.pack_frame(
                    command,
                    wire.pack_str(entry.mec_id) + wire.pack_str(entry.broker_address) + wire.pack_str(entry.cloud_topic),
                )
            if command == wire.RESOLVE_CONSUMER:
                topic, address = b.resolve_consumer(r.str(), r.str())
                return wire.pack_frame(command, wire.pack_str(topic) + wire.pack_str(address))
            if command == wire.REGISTER_MEC:
                b.register_mec(RegistryEntry(r.str(), r.str(), r.str()))
                return wire.pack_frame(command, bytes((wire.ACCEPTED,)))
            return _error("bad-command", f"0x{command:02x}")
        except TopicNotFound as exc:
            return _error("not-found", f"topic {exc.args[0]}")
        except MecNotFound as exc:
            return _error("not-found", f"mec {exc.args[0]}")
        except NoMecRegistered as exc:
            return _error("no-mec", str(exc))
        except OffsetOutOfRange as exc:
            return _error("range", str(exc))
        except (ValueError, wire.TransportError) as exc:
            return _error("bad-request", str(exc))


def _error(kind: str, detail: str) -> bytes:
    return wire.pack_frame(wire.ERROR, f"{kind}: {detail}".encode("utf-8"))


def _typed(exc: wire.RemoteError) -> Exception:
    """Map an ERROR reply back to the exception the broker raised."""
    if exc.kind == "range":
        return OffsetOutOfRange(exc.detail)
    if exc.kind == "no-mec":
        return NoMecRegistered(exc.detail)
    if exc.kind == "not-found":
        what, _, name = exc.detail.partition(" ")
        return (MecNotFound if what == "mec" else TopicNotFound)(name)
    return exc


class CloudClient:
    def __init__(self, address: str, timeout: float = 5.0):
        self.address = address
        self.rpc = wire.RpcClient(address, timeout)

    async def connect(self) -> None:
        await self.rpc.connect()

    async def _call(self, command: int, body: bytes) -> wire.BodyReader:
        try:
            return await self.rpc.call(command, body)
        except wire.RemoteError as exc:
            raise _typed(exc) from exc

    async def append(self, topic: str, msg: CitsMessage) -> int:
        r = await self._call(wire.APPEND, wire.pack_str(topic) + encode_message(msg))
        status, offset = r.u8(), r.u64()
        if status != wire.ACCEPTED:
            raise AppendRejected(topic)
        return offset

    async def fetch(self, topic: str, from_offset: int, max_count: int) -> list[tuple[int, CitsMessage]]:
        r = await self._call(wire.FETCH, wire.pack_str(topic) + wire.u64(from_offset) + wire.u32(max_count))
        out = []
        for _ in range(r.u32()):
            offset, n = _FETCH_RECORD.unpack(r.take(_FETCH_RECORD.size))
            out.append((offset, decode_message(r.take(n))))
        return out

    async def resolve_producer(self, requested_mec: str | None = None) -> RegistryEntry:
        r = await self._call(wire.RESOLVE_PRODUCER, wire.pack_str(requested_mec or ""))
        return RegistryEntry(r.str(), r.str(), r.str())

    async def resolve_consumer(self, mec_id: str, data_type: str) -> tuple[str, str]:
        r = await self._call(wire.RESOLVE_CONSUMER, wire.pack_str(mec_id) + wire.pack_str(data_type))
        return r.str(), r.str()

    async def register_mec(self, entry: RegistryEntry) -> None:
        await self._call(
            wire.REGISTER_MEC,
            wire.pack_str(entry.mec_id) + wire.pack_str(entry.broker_address) + wire.pack_str(entry.cloud_topic),
        )

    async def close(self) -> None:
        await self.rpc.close()
