import struct

import pytest
from hypothesis import given, settings, strategies as st

from edgebench.cits import (
    FIXED_HEADER,
    MAGIC,
    BadMagic,
    BadVersion,
    CitsMessage,
    DecodeError,
    EncodeError,
    LengthMismatch,
    TruncatedFrame,
    decode_message,
    encode_message,
    frame_length,
    generate_payload,
    message_key,
    payload_seed,
    sentinel,
)

messages = st.builds(
    CitsMessage,
    producer_id=st.integers(0, 2**32 - 1),
    sequence=st.integers(0, 2**64 - 1),
    origin_time_ms=st.integers(0, 2**64 - 1),
    payload=st.binary(max_size=256),
    topic=st.text(max_size=40).filter(lambda t: len(t.encode()) <= 255),
)


@settings(max_examples=10_000, deadline=None)
@given(messages)
def test_round_trip(msg):
    frame = encode_message(msg)
    assert len(frame) == frame_length(msg.topic, len(msg.payload))
    assert decode_message(frame) == msg


def test_layout_by_hand():
    msg = CitsMessage(7, 3, 1000, b"xyz", "a/b")
    frame = encode_message(msg)
    expected = (
        b"\xc1\x75\x01"
        + struct.pack(">I", 7)
        + struct.pack(">Q", 3)
        + struct.pack(">Q", 1000)
        + b"\x03a/b"
        + b"\x00\x00\x03xyz"
    )
    assert frame == expected
    assert FIXED_HEADER == 27
    assert len(frame) == 27 + 3 + 3


def test_default_message_size():
    assert frame_length("mec-1/cits", 1280) == 27 + 10 + 1280


@pytest.mark.parametrize(
    "field,msg",
    [
        ("producer_id", CitsMessage(-1, 0, 0)),
        ("producer_id", CitsMessage(2**32, 0, 0)),
        ("sequence", CitsMessage(0, 2**64, 0)),
        ("origin_time_ms", CitsMessage(0, 0, -5)),
        ("topic", CitsMessage(0, 0, 0, b"", "x" * 256)),
    ],
)
def test_encode_rejects_out_of_range(field, msg):
    with pytest.raises(EncodeError) as err:
        encode_message(msg)
    assert err.value.field == field


def test_decode_errors():
    frame = encode_message(CitsMessage(1, 2, 3, b"payload", "t"))
    with pytest.raises(BadMagic):
        decode_message(b"\x00\x00" + frame[2:])
    with pytest.raises(BadVersion):
        decode_message(frame[:2] + b"\x09" + frame[3:])
    with pytest.raises(TruncatedFrame):
        decode_message(frame[:10])
    with pytest.raises(TruncatedFrame):
        decode_message(frame[:-1])
    with pytest.raises(LengthMismatch):
        decode_message(frame + b"\x00")
    assert issubclass(LengthMismatch, DecodeError)


@settings(max_examples=2000, deadline=None)
@given(messages, st.data())
def test_truncation_always_detected(msg, data):
    frame = encode_message(msg)
    cut = data.draw(st.integers(0, len(frame) - 1))
    with pytest.raises(DecodeError):
        decode_message(frame[:cut])


@given(st.binary(max_size=64))
def test_garbage_never_crashes(blob):
    try:
        decode_message(MAGIC + blob)
    except DecodeError:
        pass


def test_key_and_sentinel():
    msg = CitsMessage(4, 9, 123, b"p")
    assert message_key(msg) == (4, 123, 9)
    s = sentinel("t", 55)
    assert s.is_sentinel and not msg.is_sentinel
    assert decode_message(encode_message(s)).is_sentinel


def test_payload_generation_is_deterministic():
    assert generate_payload(5, 1280) == generate_payload(5, 1280)
    assert len(generate_payload(5, 1280)) == 1280
    assert generate_payload(5, 64) != generate_payload(6, 64)
    assert generate_payload(1, 0) == b""
    assert payload_seed(42, 1, 0) != payload_seed(42, 2, 0)
    with pytest.raises(ValueError):
        generate_payload(1, -1)
