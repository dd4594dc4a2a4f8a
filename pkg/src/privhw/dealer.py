"""Beaver triple dealers.

A triple is three XOR-shared bits ``(a, b, c)`` with ``c = a AND b``.  The
dealer is trusted and non-colluding: each party sees only its own shares,
which are uniformly random on their own.

Three sources are provided: an in-process dealer for two threads, triple
files prepared offline, and a networked dealer service that pairs the two
parties of a session by session id.
"""

from __future__ import annotations

import logging
import struct
import threading
from collections import deque
from pathlib import Path

import numpy as np

from .errors import ProtocolError, TripleExhausted
from .transport import Connection, FrameType, Listener, connect, recv_handshake, send_handshake

log = logging.getLogger(__name__)

_FILE_HEADER = struct.Struct("<4sHQ")
_FILE_MAGIC = b"BMTR"
_REQUEST = struct.Struct("<Q")
DEFAULT_CHUNK = 1 << 16


def deal(rng: np.random.Generator, k: int) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Fresh shares of ``k`` triples for party 0 and party 1."""
    a0, b0, c0, a1, b1 = rng.integers(0, 2, size=(5, k), dtype=np.uint8)
    c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0
    return (a0, b0, c0), (a1, b1, c1)


class _Buffered:
    """Serves arbitrary-size requests from chunked refills.

    Refill sizes depend only on the sequence of requested sizes, which both
    parties share, so the two parties' refills line up one to one.
    """

    def __init__(self, chunk: int = DEFAULT_CHUNK) -> None:
        self.chunk = chunk
        self._buf = np.zeros((3, 0), dtype=np.uint8)
        self.consumed = 0

    def _refill(self, k: int) -> np.ndarray:
        raise NotImplementedError

    def take(self, k: int) -> np.ndarray:
        if self._buf.shape[1] < k:
            need = k - self._buf.shape[1]
            fresh = self._refill(max(need, self.chunk))
            self._buf = np.concatenate([self._buf, fresh], axis=1)
        out, self._buf = self._buf[:, :k], self._buf[:, k:]
        self.consumed += k
        return out


class LocalDealer:
    """In-process dealer for two parties running in one Python process."""

    def __init__(self, seed: int | None = None, chunk: int = DEFAULT_CHUNK) -> None:
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._pending: dict[int, deque] = {0: deque(), 1: deque()}
        self.chunk = chunk
        self.dealt = 0

    def _pair(self, party: int, k: int) -> np.ndarray:
        with self._lock:
            queue = self._pending[party]
            if queue:
                size, shares = queue.popleft()
                if size != k:
                    raise ProtocolError(f"triple request mismatch: {k} vs {size}")
                return shares
            s0, s1 = deal(self._rng, k)
            self.dealt += k
            self._pending[1 - party].append((k, np.stack(s1 if party == 0 else s0)))
            return np.stack(s0 if party == 0 else s1)

    def source(self, party: int) -> _Buffered:
        dealer = self

        class _View(_Buffered):
            def _refill(self, k: int) -> np.ndarray:
                return dealer._pair(party, k)

        return _View(self.chunk)


# -- triple files ------------------------------------------------------------------


def write_triple_files(path0: str | Path, path1: str | Path, count: int, seed: int | None = None) -> None:
    s0, s1 = deal(np.random.default_rng(seed), count)
    for path, shares in ((path0, s0), (path1, s1)):
        packed = np.packbits(np.stack(shares, axis=1).reshape(-1), bitorder="little")
        Path(path).write_bytes(_FILE_HEADER.pack(_FILE_MAGIC, 1, count) + packed.tobytes())


class TripleFile:
    """Sequential reader over one party's precomputed triple file."""

    def __init__(self, path: str | Path) -> None:
        data = Path(path).read_bytes()
        if len(data) < _FILE_HEADER.size:
            raise ProtocolError("triple file too short")
        magic, version, count = _FILE_HEADER.unpack_from(data)
        if magic != _FILE_MAGIC or version != 1:
            raise ProtocolError("not a triple file")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=_FILE_HEADER.size), bitorder="little")
        if bits.size < 3 * count:
            raise ProtocolError("triple file truncated")
        self._triples = bits[: 3 * count].reshape(count, 3).T
        self.count = count
        self.position = 0

    @property
    def remaining(self) -> int:
        return self.count - self.position

    def take(self, k: int) -> np.ndarray:
        if k > self.remaining:
            raise TripleExhausted(f"needed {k} triples, only {self.remaining} left")
        out = self._triples[:, self.position : self.position + k]
        self.position += k
        return out


# -- networked dealer --------------------------------------------------------------


class RemoteTriples(_Buffered):
    """Client side of the dealer service."""

    def __init__(self, conn: Connection, chunk: int = DEFAULT_CHUNK) -> None:
        super().__init__(chunk)
        self.conn = conn

    @classmethod
    def open(cls, host: str, port: int, party: int, session_id: bytes, chunk: int = DEFAULT_CHUNK) -> RemoteTriples:
        conn = connect(host, port)
        send_handshake(conn, party, session_id)
        recv_handshake(conn, session_id=session_id)
        return cls(conn, chunk)

    def _refill(self, k: int) -> np.ndarray:
        self.conn.send_frame(FrameType.TRIPLE, _REQUEST.pack(k))
        body = self.conn.expect(FrameType.TRIPLE)
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")
        if bits.size < 3 * k:
            raise ProtocolError("short triple batch")
        return bits[: 3 * k].reshape(3, k)

    def close(self) -> None:
        self.conn.close()


class DealerServer:
    """Deals triples to pairs of connections that share a session id."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, seed: int | None = None) -> None:
        self.listener = Listener(host, port)
        self._seed = seed
        self._sessions: dict[bytes, LocalDealer] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.listener.port

    def _dealer_for(self, sid: bytes) -> LocalDealer:
        with self._lock:
            if sid not in self._sessions:
                seed = None if self._seed is None else [self._seed, *sid]
                self._sessions[sid] = LocalDealer(seed)
            return self._sessions[sid]

    def _serve_one(self, conn: Connection) -> None:
        try:
            hs = recv_handshake(conn)
            if hs.role not in (0, 1):
                conn.abort("dealer clients must be party 0 or 1")
                return
            send_handshake(conn, hs.role, hs.session_id)
            dealer = self._dealer_for(hs.session_id)
            while True:
                ftype, body = conn.recv_frame()
                if ftype != FrameType.TRIPLE or len(body) != _REQUEST.size:
                    conn.abort("dealer expects TRIPLE requests")
                    return
                (k,) = _REQUEST.unpack(body)
                shares = dealer._pair(hs.role, k)
                conn.send_frame(FrameType.TRIPLE, np.packbits(shares.reshape(-1), bitorder="little").tobytes())
        except ProtocolError as exc:
            log.debug("dealer connection ended: %s", exc)
        finally:
            conn.close()

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                conn = self.listener.accept(timeout=0.2)
            except TimeoutError:
                continue
            except OSError:
                break
            threading.Thread(target=self._serve_one, args=(conn,), daemon=True).start()

    def start(self) -> DealerServer:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2)
        self.listener.close()

    def __enter__(self) -> DealerServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
