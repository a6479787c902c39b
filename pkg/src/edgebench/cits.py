"""C-ITS message envelope, its binary frame, and deterministic payloads.

Frame layout (big-endian)::

    magic        2  0xC1 0x75
    version      1  1
    producer_id  4
    sequence     8
    origin_ms    8
    topic_len    1  + topic bytes (utf-8)
    payload_len  3  + payload bytes
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import NamedTuple

MAGIC = b"\xc1\x75"
VERSION = 1

_HEAD = struct.Struct(">2sBIQQ")
FIXED_HEADER = _HEAD.size + 1 + 3  # 27 bytes around the variable fields

MAX_TOPIC = 255
MAX_PAYLOAD = (1 << 24) - 1
MAX_PRODUCER_ID = 0xFFFFFFFE

# Reserved producer id marking the end-of-run control message.
SENTINEL_PRODUCER_ID = 0xFFFFFFFF

DEFAULT_PAYLOAD_BYTES = 1280


class EncodeError(ValueError):
    """A message field does not fit the frame layout."""

    def __init__(self, field: str, detail: str):
        super().__init__(f"{field}: {detail}")
        self.field = field


class DecodeError(ValueError):
    """Base class for malformed frames."""


class TruncatedFrame(DecodeError):
    pass


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class MessageKey(NamedTuple):
    producer_id: int
    origin_time_ms: int
    sequence: int


@dataclass(frozen=True, slots=True)
class CitsMessage:
    producer_id: int
    sequence: int
    origin_time_ms: int
    payload: bytes = b""
    topic: str = ""

    @property
    def key(self) -> MessageKey:
        return message_key(self)

    @property
    def is_sentinel(self) -> bool:
        return self.producer_id == SENTINEL_PRODUCER_ID


def message_key(msg: CitsMessage) -> MessageKey:
    return MessageKey(msg.producer_id, msg.origin_time_ms, msg.sequence)


def sentinel(topic: str, origin_time_ms: int = 0) -> CitsMessage:
    """End-of-run marker appended behind the last producer message."""
    return CitsMessage(SENTINEL_PRODUCER_ID, 0, origin_time_ms, b"", topic)


def frame_length(topic: str, payload_len: int) -> int:
    return FIXED_HEADER + len(topic.encode("utf-8")) + payload_len


def encode_message(msg: CitsMessage) -> bytes:
    topic = msg.topic.encode("utf-8")
    if len(topic) > MAX_TOPIC:
        raise EncodeError("topic", f"{len(topic)} bytes exceeds {MAX_TOPIC}")
    if len(msg.payload) > MAX_PAYLOAD:
        raise EncodeError("payload", f"{len(msg.payload)} bytes exceeds {MAX_PAYLOAD}")
    for name, value, bits in (
        ("producer_id", msg.producer_id, 32),
        ("sequence", msg.sequence, 64),
        ("origin_time_ms", msg.origin_time_ms, 64),
    ):
        if not 0 <= value < (1 << bits):
            raise EncodeError(name, f"{value} outside unsigned {bits}-bit range")
    return b"".join(
        (
            _HEAD.pack(MAGIC, VERSION, msg.producer_id, msg.sequence, msg.origin_time_ms),
            bytes((len(topic),)),
            topic,
            len(msg.payload).to_bytes(3, "big"),
            msg.payload,
        )
    )


def decode_message(frame: bytes) -> CitsMessage:
    frame = bytes(frame)
    if len(frame) >= 2 and frame[:2] != MAGIC:
        raise BadMagic(f"expected {MAGIC.hex()}, got {frame[:2].hex()}")
    if len(frame) < _HEAD.size + 1:
        raise TruncatedFrame(f"{len(frame)} bytes is shorter than the header")
    _, version, producer_id, sequence, origin = _HEAD.unpack_from(frame)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    pos = _HEAD.size
    topic_len = frame[pos]
    pos += 1
    if len(frame) < pos + topic_len + 3:
        raise TruncatedFrame("frame ends inside topic or payload length")
    try:
        topic = frame[pos : pos + topic_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"topic is not utf-8: {exc}") from None
    pos += topic_len
    payload_len = int.from_bytes(frame[pos : pos + 3], "big")
    pos += 3
    remaining = len(frame) - pos
    if remaining < payload_len:
        raise TruncatedFrame(f"payload declares {payload_len} bytes, {remaining} present")
    if remaining > payload_len:
        raise LengthMismatch(f"{remaining - payload_len} trailing bytes after payload")
    return CitsMessage(producer_id, sequence, origin, frame[pos:], topic)


def generate_payload(seed: int, size: int) -> bytes:
    """Pseudorandom bytes, identical for identical ``(seed, size)``."""
    if size < 0:
        raise ValueError("size must be non-negative")
    if size == 0:
        return b""
    return hashlib.shake_256(seed.to_bytes(8, "big")).digest(size)


def payload_seed(run_seed: int, producer_id: int, sequence: int) -> int:
    digest = hashlib.blake2b(
        struct.pack(">QIQ", run_seed & (2**64 - 1), producer_id, sequence), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")
