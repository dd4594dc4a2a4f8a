"""Length-prefixed framed message streams between two parties.

A frame is ``u32 length | u8 type | payload`` (little-endian, length counts
payload bytes only).  The same framing runs over TCP sockets and over an
in-process duplex pipe, so protocol code cannot tell them apart.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum

from .errors import ProtocolAbort, ProtocolError

PROTOCOL_VERSION = 1
DEFAULT_MAX_FRAME = 64 * 1024 * 1024
SESSION_ID_LEN = 16

_HEADER = struct.Struct("<IB")
_HANDSHAKE = struct.Struct("<HB16s")


class FrameType(IntEnum):
    HANDSHAKE = 1
    OT_S = 2
    OT_R = 3
    OT_CIPH = 4
    SHARE = 5
    REVEAL = 6
    TRIPLE = 7
    VERDICT = 8
    ABORT = 9


class Role(IntEnum):
    VENDOR = 0
    USER = 1


class ConnectionClosed(ProtocolError):
    """Peer closed the stream at a frame boundary."""


class _SocketStream:
    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def recv(self, n: int) -> bytes:
        chunks, got = [], 0
        while got < n:
            try:
                chunk = self.sock.recv(min(n - got, 1 << 20))
            except OSError as exc:
                raise ProtocolError(f"recv failed: {exc}") from exc
            if not chunk:
                break
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _PipeEnd:
    """One end of an in-memory byte pipe pair."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue) -> None:
        self.inbox, self.outbox = inbox, outbox
        self.buf = bytearray()
        self.closed = False

    def send(self, data: bytes) -> None:
        if self.closed:
            raise ProtocolError("send on closed pipe")
        self.outbox.put(bytes(data))

    def recv(self, n: int) -> bytes:
        while len(self.buf) < n:
            chunk = self.inbox.get()
            if chunk is None:
                self.inbox.put(None)
                break
            self.buf += chunk
        out = bytes(self.buf[:n])
        del self.buf[:n]
        return out

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.outbox.put(None)


class Connection:
    """Ordered, exactly-once frame stream over one byte stream."""

    def __init__(self, stream, max_frame: int = DEFAULT_MAX_FRAME) -> None:
        self._stream = stream
        self.max_frame = max_frame
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()
        self.frames_sent = 0
        self.frames_received = 0
        self.bytes_sent = 0

    def send_frame(self, ftype: FrameType, payload: bytes = b"") -> None:
        if len(payload) > self.max_frame:
            raise ProtocolError(f"frame of {len(payload)} bytes exceeds limit {self.max_frame}")
        data = _HEADER.pack(len(payload), int(ftype)) + payload
        with self._send_lock:
            self._stream.send(data)
            self.frames_sent += 1
            self.bytes_sent += len(data)

    def recv_frame(self) -> tuple[FrameType, bytes]:
        with self._recv_lock:
            head = self._stream.recv(_HEADER.size)
            if not head:
                raise ConnectionClosed("connection closed by peer")
            if len(head) < _HEADER.size:
                raise ProtocolError("truncated frame header")
            length, ftype = _HEADER.unpack(head)
            if length > self.max_frame:
                raise ProtocolError(f"incoming frame of {length} bytes exceeds limit {self.max_frame}")
            try:
                ftype = FrameType(ftype)
            except ValueError:
                raise ProtocolError(f"unknown frame type {ftype}") from None
            payload = self._stream.recv(length)
            if len(payload) < length:
                raise ProtocolError("truncated frame payload")
            self.frames_received += 1
            return ftype, payload

    def expect(self, ftype: FrameType) -> bytes:
        """Receive one frame of type ``ftype``; ABORT and other types raise."""
        got, payload = self.recv_frame()
        if got == FrameType.ABORT:
            raise ProtocolAbort(payload.decode(errors="replace") or "peer aborted")
        if got != ftype:
            raise ProtocolError(f"expected {ftype.name} frame, got {got.name}")
        return payload

    def abort(self, reason: str) -> None:
        """Best-effort ABORT notification to the peer."""
        try:
            self.send_frame(FrameType.ABORT, reason.encode()[:1024])
        except ProtocolError:
            pass

    def close(self) -> None:
        self._stream.close()

    def __enter__(self) -> Connection:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def duplex_pair(max_frame: int = DEFAULT_MAX_FRAME) -> tuple[Connection, Connection]:
    """Two connected in-process endpoints."""
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return (
        Connection(_PipeEnd(b_to_a, a_to_b), max_frame),
        Connection(_PipeEnd(a_to_b, b_to_a), max_frame),
    )


class _CoopEnd:
    """Pipe end for :func:`run_cooperative`: a short read yields to the peer."""

    def __init__(self, hub: _CoopHub, me: int) -> None:
        self.hub, self.me = hub, me

    def send(self, data: bytes) -> None:
        self.hub.inbox[1 - self.me] += data
        self.hub.sent += 1

    def recv(self, n: int) -> bytes:
        hub, buf = self.hub, self.hub.inbox[self.me]
        while len(buf) < n and not hub.done[1 - self.me]:
            hub.waiting[self.me] = True
            mark = hub.sent
            hub.greenlets[1 - self.me].switch()
            hub.waiting[self.me] = False
            if len(buf) < n and hub.sent == mark and hub.waiting[1 - self.me]:
                raise ProtocolError("both parties are waiting for each other")
        out = bytes(buf[:n])
        del buf[:n]
        return out

    def close(self) -> None:
        pass


class _CoopHub:
    def __init__(self) -> None:
        self.inbox = [bytearray(), bytearray()]
        self.done = [False, False]
        self.waiting = [False, False]
        self.sent = 0
        self.greenlets: list = [None, None]


def run_cooperative(fn0, fn1, max_frame: int = DEFAULT_MAX_FRAME) -> tuple:
    """Run two protocol parties in this thread, switching only when one blocks.

    ``fn0`` and ``fn1`` each receive their :class:`Connection`.  Returns both
    results; the first exception raised by either party is re-raised.
    """
    from greenlet import greenlet

    hub = _CoopHub()
    results: list = [None, None]
    errors: list = [None, None]

    def body(i: int, fn):
        def run() -> None:
            try:
                results[i] = fn(Connection(_CoopEnd(hub, i), max_frame))
            except BaseException as exc:
                errors[i] = exc
            finally:
                hub.done[i] = True

        return run

    hub.greenlets = [greenlet(body(0, fn0)), greenlet(body(1, fn1))]
    while not all(hub.done):
        for i in (0, 1):
            if not hub.done[i]:
                hub.greenlets[i].switch()
    for exc in errors:
        if exc is not None:
            raise exc
    return tuple(results)


def parse_endpoint(endpoint: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"endpoint {endpoint!r} needs a numeric port")
    return host or default_host, int(port)


def connect(host: str, port: int, timeout: float | None = 30.0,
            max_frame: int = DEFAULT_MAX_FRAME) -> Connection:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return Connection(_SocketStream(sock), max_frame)


class Listener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 max_frame: int = DEFAULT_MAX_FRAME) -> None:
        self.sock = socket.create_server((host, port), reuse_port=False)
        self.max_frame = max_frame

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def accept(self, timeout: float | None = None) -> Connection:
        self.sock.settimeout(timeout)
        conn, _ = self.sock.accept()
        conn.settimeout(None)
        return Connection(_SocketStream(conn), self.max_frame)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> Listener:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# -- handshake ---------------------------------------------------------------------


@dataclass(frozen=True)
class Handshake:
    version: int
    role: int
    session_id: bytes
    extra: dict

    def encode(self) -> bytes:
        body = json.dumps(self.extra, sort_keys=True).encode() if self.extra else b""
        return _HANDSHAKE.pack(self.version, self.role, self.session_id) + body

    @classmethod
    def decode(cls, payload: bytes) -> Handshake:
        if len(payload) < _HANDSHAKE.size:
            raise ProtocolError("truncated handshake")
        version, role, sid = _HANDSHAKE.unpack_from(payload)
        rest = payload[_HANDSHAKE.size :]
        try:
            extra = json.loads(rest) if rest else {}
        except ValueError:
            raise ProtocolError("malformed handshake extension") from None
        return cls(version, role, sid, extra)


def send_handshake(conn: Connection, role: int, session_id: bytes,
                   extra: dict | None = None, version: int = PROTOCOL_VERSION) -> None:
    if len(session_id) != SESSION_ID_LEN:
        raise ValueError("session id must be 16 bytes")
    conn.send_frame(FrameType.HANDSHAKE, Handshake(version, int(role), session_id, extra or {}).encode())


def recv_handshake(conn: Connection, expect_role: int | None = None,
                   session_id: bytes | None = None) -> Handshake:
    """Receive and validate the peer's handshake; abort the stream on mismatch."""
    hs = Handshake.decode(conn.expect(FrameType.HANDSHAKE))
    problem = None
    if hs.version != PROTOCOL_VERSION:
        problem = f"protocol version mismatch: peer {hs.version}, local {PROTOCOL_VERSION}"
    elif expect_role is not None and hs.role != int(expect_role):
        problem = f"unexpected peer role {hs.role}"
    elif session_id is not None and hs.session_id != session_id:
        problem = "session id mismatch"
    if problem:
        conn.abort(problem)
        raise ProtocolError(problem)
    return hs
