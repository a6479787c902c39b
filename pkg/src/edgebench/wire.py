"""Length-prefixed command framing shared by the edge and cloud services.

Every frame in either direction is ``length (4 bytes, big-endian) | command (1
byte) | body`` where ``length`` counts the command byte and the body. Replies
echo the request's command byte; failures come back as ``ERROR`` frames.
"""

from __future__ import annotations

import asyncio
import collections
import logging
import struct

logger = logging.getLogger(__name__)

# edge broker
PUBLISH = 0x01
SUBSCRIBE = 0x02
DELIVER = 0x03
STATS = 0x04
SHUTDOWN = 0x05
# cloud log and data service
APPEND = 0x10
FETCH = 0x11
RESOLVE_PRODUCER = 0x12
RESOLVE_CONSUMER = 0x13
REGISTER_MEC = 0x14

ERROR = 0x7F

ACCEPTED = 0x00
REJECTED = 0x01

MAX_FRAME = 64 << 20

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_U32 = struct.Struct(">I")


class TransportError(ConnectionError):
    """The peer went away, timed out, or spoke garbage."""


class RemoteError(Exception):
    """The service answered with an ERROR frame."""

    def __init__(self, message: str):
        super().__init__(message)
        kind, _, detail = message.partition(":")
        self.kind = kind
        self.detail = detail.strip()


def pack_frame(command: int, body: bytes = b"") -> bytes:
    return _LEN.pack(len(body) + 1) + bytes((command,)) + body


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    """Read one frame; raises ``asyncio.IncompleteReadError`` at EOF."""
    (length,) = _LEN.unpack(await reader.readexactly(4))
    if not 1 <= length <= MAX_FRAME:
        raise TransportError(f"bad frame length {length}")
    data = await reader.readexactly(length)
    return data[0], data[1:]


async def read_raw_frame(reader: asyncio.StreamReader) -> bytes:
    """Read one frame including its length prefix, without interpreting it."""
    head = await reader.readexactly(4)
    (length,) = _LEN.unpack(head)
    if not 1 <= length <= MAX_FRAME:
        raise TransportError(f"bad frame length {length}")
    return head + await reader.readexactly(length)


def pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 255:
        raise ValueError(f"string of {len(raw)} bytes does not fit a 1-byte length")
    return bytes((len(raw),)) + raw


class BodyReader:
    """Cursor over a frame body."""

    def __init__(self, body: bytes):
        self.body = body
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise TransportError("frame body truncated")
        chunk = self.body[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def str(self) -> str:
        return self.take(self.take(1)[0]).decode("utf-8")

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def rest(self) -> bytes:
        chunk = self.body[self.pos :]
        self.pos = len(self.body)
        return chunk


def u64(value: int) -> bytes:
    return _U64.pack(value)


def u32(value: int) -> bytes:
    return _U32.pack(value)


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def format_address(host: str, port: int) -> str:
    return f"{host}:{port}"


class RpcClient:
    """Pipelined request/response connection.

    Replies arrive in request order, so a FIFO of futures is enough to pair
    them. A request that times out poisons the connection: it is closed and
    every outstanding request fails with ``TransportError``; the next call
    reconnects.
    """

    def __init__(self, address: str, timeout: float = 5.0):
        self.address = address
        self.timeout = timeout
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._pending: collections.deque[asyncio.Future] = collections.deque()
        self._read_task: asyncio.Task | None = None
        self._connect_lock = asyncio.Lock()

    async def connect(self) -> None:
        async with self._connect_lock:
            if self._writer is not None:
                return
            host, port = parse_address(self.address)
            try:
                self._reader, self._writer = await asyncio.wait_for(
                    asyncio.open_connection(host, port), self.timeout
                )
            except (OSError, asyncio.TimeoutError) as exc:
                raise TransportError(f"cannot reach {self.address}: {exc}") from exc
            self._read_task = asyncio.create_task(self._read_loop(self._reader))

    async def _read_loop(self, reader: asyncio.StreamReader) -> None:
        try:
            while True:
                command, body = await read_frame(reader)
                if not self._pending:
                    logger.warning("unsolicited frame 0x%02x from %s", command, self.address)
                    continue
                fut = self._pending.popleft()
                if not fut.done():
                    fut.set_result((command, body))
        except (asyncio.IncompleteReadError, ConnectionError, TransportError) as exc:
            self._fail_pending(TransportError(f"connection to {self.address} lost: {exc!r}"))
        except asyncio.CancelledError:
            self._fail_pending(TransportError("client closed"))
            raise

    def _fail_pending(self, exc: Exception) -> None:
        while self._pending:
            fut = self._pending.popleft()
            if not fut.done():
                fut.set_exception(exc)
        self._drop_connection()

    def _drop_connection(self) -> None:
        if self._writer is not None:
            self._writer.close()
        self._reader = self._writer = None

    def send(self, command: int, body: bytes = b"") -> asyncio.Future:
        """Queue a request; the returned future resolves to ``(command, body)``."""
        if self._writer is None:
            raise TransportError(f"not connected to {self.address}")
        fut = asyncio.get_running_loop().create_future()
        self._pending.append(fut)
        self._writer.write(pack_frame(command, body))
        return fut

    async def wait(self, fut: asyncio.Future, expect: int) -> BodyReader:
        try:
            command, body = await asyncio.wait_for(asyncio.shield(fut), self.timeout)
        except asyncio.TimeoutError:
            await self.reset()
            raise TransportError(f"request to {self.address} timed out") from None
        if command == ERROR:
            raise RemoteError(body.decode("utf-8", "replace"))
        if command != expect:
            raise TransportError(f"expected reply 0x{expect:02x}, got 0x{command:02x}")
        return BodyReader(body)

    async def call(self, command: int, body: bytes = b"") -> BodyReader:
        if self._writer is None:
            await self.connect()
        fut = self.send(command, body)
        return await self.wait(fut, command)

    async def reset(self) -> None:
        task, self._read_task = self._read_task, None
        if task is not None:
            task.cancel()
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        self._fail_pending(TransportError("connection reset"))

    async def close(self) -> None:
        writer = self._writer
        await self.reset()
        if writer is not None:
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


class FrameServer:
    """asyncio TCP listener handing each connection to ``handle``."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self._server: asyncio.base_events.Server | None = None
        self._conns: set[asyncio.Task] = set()

    @property
    def address(self) -> str:
        return format_address(self.host, self.port)

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._accept, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        logger.debug("%s listening on %s", type(self).__name__, self.address)

    async def _accept(self, reader, writer) -> None:
        task = asyncio.current_task()
        self._conns.add(task)
        try:
            await self.handle(reader, writer)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except asyncio.CancelledError:
            pass
        finally:
            self._conns.discard(task)
            writer.close()

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        raise NotImplementedError

    async def stop(self) -> None:
        server, self._server = self._server, None
        if server is not None:
            server.close()
        for task in list(self._conns):
            task.cancel()
        if self._conns:
            await asyncio.gather(*self._conns, return_exceptions=True)
        if server is not None:
            await server.wait_closed()

    async def __aenter__(self):
        await self.start()
        return self

    async def __aexit__(self, *exc):
        await self.stop()
