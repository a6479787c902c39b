import asyncio

import pytest

from edgebench import wire


def test_frame_packing():
    assert wire.pack_frame(0x11, b"ab") == b"\x00\x00\x00\x03\x11ab"
    assert wire.pack_str("hé") == b"\x03h\xc3\xa9"
    with pytest.raises(ValueError):
        wire.pack_str("x" * 256)


def test_body_reader():
    body = wire.pack_str("topic") + wire.u32(7) + wire.u64(2**40) + b"\x05tail"
    r = wire.BodyReader(body)
    assert r.str() == "topic"
    assert r.u32() == 7
    assert r.u64() == 2**40
    assert r.u8() == 5
    assert r.rest() == b"tail"
    with pytest.raises(wire.TransportError):
        r.take(1)


def test_addresses():
    assert wire.parse_address("127.0.0.1:5680") == ("127.0.0.1", 5680)
    assert wire.parse_address(":9") == ("127.0.0.1", 9)
    assert wire.format_address("h", 1) == "h:1"


def test_remote_error_kind():
    e = wire.RemoteError("OffsetOutOfRange: offset 5 beyond 3")
    assert e.kind == "OffsetOutOfRange"
    assert e.detail == "offset 5 beyond 3"


class Echo(wire.FrameServer):
    async def handle(self, reader, writer):
        while True:
            try:
                cmd, body = await wire.read_frame(reader)
            except asyncio.IncompleteReadError:
                return
            if cmd == 0x7E:
                writer.write(wire.pack_frame(wire.ERROR, b"Nope: no"))
            elif cmd == 0x7D:
                continue  # never answers
            else:
                writer.write(wire.pack_frame(cmd, body[::-1]))
            await writer.drain()


def test_rpc_round_trip_and_errors(arun):
    async def main():
        async with Echo(port=0) as server:
            client = wire.RpcClient(server.address, timeout=0.3)
            await client.connect()
            futs = [client.send(0x01, bytes([i, 0])) for i in range(20)]
            for i, fut in enumerate(futs):
                body = await client.wait(fut, 0x01)
                assert body.rest() == bytes([0, i])
            with pytest.raises(wire.RemoteError) as err:
                await client.call(0x7E)
            assert err.value.kind == "Nope"
            with pytest.raises(wire.TransportError):
                await client.call(0x7D)
            # the connection is reset after a timeout and usable again
            assert (await client.call(0x02, b"ab")).rest() == b"ba"
            await client.close()

    arun(main())


def test_connect_refused(arun):
    async def main():
        client = wire.RpcClient("127.0.0.1:1", timeout=0.5)
        with pytest.raises(wire.TransportError):
            await client.call(0x01)

    arun(main())
