"""Boolean circuit backends over bit arrays.

Every backend exposes the same primitive gates (``xor``, ``not_``, ``and_``,
``input``, ``const``, ``reveal``) on numpy ``uint8`` arrays of 0/1 values, and
the same derived operations built only from those primitives.  Code written
against :class:`Backend` therefore runs unchanged on plaintext bits
(:class:`CleartextBackend`) or on XOR secret shares held by two parties
(:class:`PartyBackend`), and both count AND gates identically.

In the two-party backend each party runs the same program on its own share.
XOR is local, AND consumes one Beaver triple per bit and one round of
openings, and only :meth:`Backend.reveal` ever exposes a plaintext value.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from .errors import ProtocolError
from .transport import Connection, FrameType

VENDOR, USER = 0, 1
BYTES_PER_AND = 32


@dataclass
class GateStats:
    and_count: int = 0
    xor_count: int = 0
    reveal_count: int = 0
    and_rounds: int = 0

    @property
    def estimated_bytes(self) -> int:
        return BYTES_PER_AND * self.and_count

    def copy(self) -> GateStats:
        return GateStats(**asdict(self))

    def __sub__(self, other: GateStats) -> GateStats:
        return GateStats(
            self.and_count - other.and_count,
            self.xor_count - other.xor_count,
            self.reveal_count - other.reveal_count,
            self.and_rounds - other.and_rounds,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimated_bytes"] = self.estimated_bytes
        return d


def as_bits(value, shape=None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.uint8)
    if shape is not None:
        arr = np.broadcast_to(arr, shape)
    if arr.size and arr.max() > 1:
        raise ValueError("bit arrays hold only 0/1 values")
    return np.array(arr, dtype=np.uint8)


class Backend:
    """Gate library shared by all backends.

    Subclasses implement the primitives; everything else is derived here so
    that the AND count of a computation does not depend on the backend.
    """

    party: int = VENDOR

    def __init__(self, record_trace: bool = False) -> None:
        self.stats = GateStats()
        self.record_trace = record_trace
        self.trace: list[tuple] = []

    # -- primitives ------------------------------------------------------------

    def input(self, owner: int, value=None, shape=None) -> np.ndarray:
        raise NotImplementedError

    def const(self, value, shape=None) -> np.ndarray:
        raise NotImplementedError

    def not_(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _and(self, a: np.ndarray, b: np.ndarray, shape: tuple) -> np.ndarray:
        raise NotImplementedError

    def _reveal(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def xor(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.bitwise_xor(a, b)
        self.stats.xor_count += out.size
        return out

    def and_(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        shape = a.shape if a.shape == b.shape else np.broadcast_shapes(a.shape, b.shape)
        size = math.prod(shape)
        if size == 0:
            return np.zeros(shape, dtype=np.uint8)
        self.stats.and_count += size
        self.stats.and_rounds += 1
        if self.record_trace:
            self.trace.append(("and", size))
        return self._and(a, b, shape)

    def reveal(self, a: np.ndarray) -> np.ndarray:
        self.stats.reveal_count += a.size
        if self.record_trace:
            self.trace.append(("reveal", a.size))
        return self._reveal(np.ascontiguousarray(a))

    def reveal_bit(self, a) -> bool:
        return bool(self.reveal(np.asarray(a).reshape(1))[0])

    # -- derived operations ------------------------------------------------------

    def or_(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.xor(self.xor(a, b), self.and_(a, b))

    def mux(self, s: np.ndarray, t: np.ndarray, f: np.ndarray) -> np.ndarray:
        """``t`` where ``s`` is 1, else ``f`` (one AND per output bit)."""
        return self.xor(f, self.and_(s, self.xor(t, f)))

    def _reduce(self, x: np.ndarray, axis: int, op, empty: int) -> np.ndarray:
        x = np.moveaxis(x, axis, -1)
        if x.shape[-1] == 0:
            return self.const(empty, x.shape[:-1])
        while x.shape[-1] > 1:
            k = x.shape[-1] // 2
            paired = op(x[..., 0 : 2 * k : 2], x[..., 1 : 2 * k : 2])
            x = np.concatenate([paired, x[..., 2 * k :]], axis=-1) if x.shape[-1] % 2 else paired
        return x[..., 0]

    def or_reduce(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        return self._reduce(x, axis, self.or_, 0)

    def and_reduce(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        return self._reduce(x, axis, self.and_, 1)

    def xor_reduce(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        x = np.moveaxis(x, axis, -1)
        if x.shape[-1] == 0:
            return self.const(0, x.shape[:-1])
        self.stats.xor_count += x.size - x[..., 0].size
        return np.bitwise_xor.reduce(x, axis=-1).astype(np.uint8)

    def prefix_or(self, x: np.ndarray, exclusive: bool = False) -> np.ndarray:
        """Running OR along the last axis in ``ceil(log2 L)`` AND rounds."""
        y = x
        d = 1
        while d < x.shape[-1]:
            y = np.concatenate([y[..., :d], self.or_(y[..., d:], y[..., :-d])], axis=-1)
            d *= 2
        if exclusive and x.shape[-1]:
            zero = self.const(0, x.shape[:-1] + (1,))
            y = np.concatenate([zero, y[..., :-1]], axis=-1)
        return y

    def first_one(self, x: np.ndarray) -> np.ndarray:
        """One-hot of the lowest set position along the last axis (all-zero if none)."""
        if x.shape[-1] == 0:
            return x
        return self.and_(x, self.not_(self.prefix_or(x, exclusive=True)))

    def last_one(self, x: np.ndarray) -> np.ndarray:
        return self.first_one(x[..., ::-1])[..., ::-1]

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Ripple-carry sum of little-endian words; output is one bit wider."""
        out, carry = [], None
        for i in range(a.shape[-1]):
            ai, bi = a[..., i], b[..., i]
            if carry is None:
                out.append(self.xor(ai, bi))
                carry = self.and_(ai, bi)
            else:
                ac, bc = self.xor(ai, carry), self.xor(bi, carry)
                out.append(self.xor(ac, bi))
                carry = self.xor(self.and_(ac, bc), carry)
        out.append(carry)
        return np.stack(out, axis=-1)

    def popcount(self, x: np.ndarray) -> np.ndarray:
        """Little-endian binary count of ones along the last axis."""
        L = x.shape[-1]
        if L == 0:
            return self.const(0, x.shape[:-1] + (1,))
        words = x[..., None]
        while words.shape[-2] > 1:
            k = words.shape[-2] // 2
            summed = self.add(words[..., 0 : 2 * k : 2, :], words[..., 1 : 2 * k : 2, :])
            if words.shape[-2] % 2:
                rest = words[..., 2 * k :, :]
                pad = self.const(0, rest.shape[:-1] + (1,))
                summed = np.concatenate([summed, np.concatenate([rest, pad], axis=-1)], axis=-2)
            words = summed
        return words[..., 0, :]

    def greater(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``a > b`` for little-endian unsigned words (one AND per bit)."""
        gt = self.const(0, a.shape[:-1])
        for i in range(a.shape[-1]):
            ai, bi = a[..., i], b[..., i]
            gt = self.xor(gt, self.and_(self.xor(ai, bi), self.xor(ai, gt)))
        return gt

    def argmax_onehot(self, values: np.ndarray) -> np.ndarray:
        """One-hot of the maximum among ``values[L, w]``; ties go to the lowest index.

        A balanced tournament: each match keeps the right contender only if it
        is strictly greater, so the earliest maximum survives.
        """
        L = values.shape[0]
        if L == 0:
            raise ValueError("argmax over an empty list")
        if L == 1:
            return self.const(1, (1,))
        size = 1 << (L - 1).bit_length()
        if size != L:
            pad = self.const(0, (size - L,) + values.shape[1:])
            values = np.concatenate([values, pad], axis=0)
        onehot = None
        while values.shape[0] > 1:
            left, right = values[0::2], values[1::2]
            take_right = self.greater(right, left)
            values = self.mux(take_right[:, None], right, left)
            if onehot is None:
                onehot = np.stack([self.not_(take_right), take_right], axis=1)
            else:
                half = onehot.shape[1]
                lo = self.and_(onehot[0::2], self.not_(take_right)[:, None])
                hi = self.and_(onehot[1::2], take_right[:, None])
                onehot = np.concatenate([lo, hi], axis=1)
                assert onehot.shape[1] == 2 * half
        return onehot[0, :L]

    def oblivious_max_index(self, values: np.ndarray) -> np.ndarray:
        """Little-endian binary index of the first maximum of ``values[L, w]``."""
        onehot = self.argmax_onehot(values)
        L = onehot.shape[0]
        width = max(1, (L - 1).bit_length())
        idx = np.arange(L)
        bits = [self.xor_reduce(onehot[((idx >> b) & 1) == 1][None, :]) for b in range(width)]
        return np.concatenate(bits)


# gate cost of one derived operation, keyed by operation and input shapes
_COSTS: dict[tuple, tuple[GateStats, tuple, tuple]] = {}


def _to_int(bits: np.ndarray) -> np.ndarray:
    return (bits.astype(np.int64) << np.arange(bits.shape[-1], dtype=np.int64)).sum(axis=-1)


def _to_bits(values: np.ndarray, width: int) -> np.ndarray:
    return ((values[..., None] >> np.arange(width, dtype=np.int64)) & 1).astype(np.uint8)


class CleartextBackend(Backend):
    """Plaintext evaluation with the same gate accounting as the secure backend.

    With ``fast`` set, the composite operations are computed directly with
    numpy and charged the cost that the generic circuit incurs for the same
    input shapes.  That cost is measured once per shape by running the
    generic circuit on a probe backend, so the accounting cannot drift.
    """

    def __init__(self, record_trace: bool = False, fast: bool = True) -> None:
        super().__init__(record_trace)
        self.fast = fast

    def input(self, owner: int, value=None, shape=None) -> np.ndarray:
        if value is None:
            raise ValueError("cleartext input needs a value")
        if self.record_trace:
            self.trace.append(("input", owner, np.shape(value)))
        return as_bits(value, shape)

    def const(self, value, shape=None) -> np.ndarray:
        return as_bits(value, shape)

    def not_(self, a: np.ndarray) -> np.ndarray:
        return a ^ np.uint8(1)

    def _and(self, a, b, shape):
        return a & b

    def _reveal(self, a):
        return a.copy()

    def _charge(self, name: str, *args: np.ndarray, **kwargs) -> tuple:
        """Account for the generic ``name`` circuit; returns its output shape."""
        key = (name, *(a.shape for a in args), *sorted(kwargs.items()))
        cost = _COSTS.get(key)
        if cost is None:
            probe = CleartextBackend(record_trace=True, fast=False)
            out = getattr(probe, name)(*(np.zeros(a.shape, np.uint8) for a in args), **kwargs)
            cost = _COSTS[key] = (probe.stats, tuple(probe.trace), out.shape)
        c = cost[0]
        self.stats.and_count += c.and_count
        self.stats.xor_count += c.xor_count
        self.stats.and_rounds += c.and_rounds
        if self.record_trace:
            self.trace.extend(cost[1])
        return cost[2]

    def or_reduce(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        if not self.fast:
            return super().or_reduce(x, axis)
        x = np.moveaxis(x, axis, -1)
        shape = self._charge("or_reduce", x)
        return np.bitwise_or.reduce(x, axis=-1) if x.shape[-1] else np.zeros(shape, np.uint8)

    def and_reduce(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        if not self.fast:
            return super().and_reduce(x, axis)
        x = np.moveaxis(x, axis, -1)
        shape = self._charge("and_reduce", x)
        return np.bitwise_and.reduce(x, axis=-1) if x.shape[-1] else np.ones(shape, np.uint8)

    def prefix_or(self, x: np.ndarray, exclusive: bool = False) -> np.ndarray:
        if not self.fast:
            return super().prefix_or(x, exclusive)
        self._charge("prefix_or", x, exclusive=exclusive)
        y = np.bitwise_or.accumulate(x, axis=-1) if x.shape[-1] else x.copy()
        if exclusive and x.shape[-1]:
            y = np.concatenate([np.zeros(x.shape[:-1] + (1,), np.uint8), y[..., :-1]], axis=-1)
        return y

    def first_one(self, x: np.ndarray) -> np.ndarray:
        if not self.fast:
            return super().first_one(x)
        self._charge("first_one", x)
        if x.shape[-1] == 0:
            return x
        seen = np.bitwise_or.accumulate(x, axis=-1)
        return (x & (seen.cumsum(axis=-1, dtype=np.int64) == 1)).astype(np.uint8)

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if not self.fast:
            return super().add(a, b)
        self._charge("add", a, b)
        return _to_bits(_to_int(a) + _to_int(b), a.shape[-1] + 1)

    def popcount(self, x: np.ndarray) -> np.ndarray:
        if not self.fast:
            return super().popcount(x)
        shape = self._charge("popcount", x)
        return _to_bits(x.sum(axis=-1, dtype=np.int64), shape[-1])

    def greater(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if not self.fast:
            return super().greater(a, b)
        self._charge("greater", a, b)
        return (_to_int(a) > _to_int(b)).astype(np.uint8)

    def argmax_onehot(self, values: np.ndarray) -> np.ndarray:
        if not self.fast or values.shape[0] == 0:
            return super().argmax_onehot(values)
        self._charge("argmax_onehot", values)
        out = np.zeros(values.shape[0], np.uint8)
        out[int(np.argmax(_to_int(values)))] = 1
        return out


class TripleSource(Protocol):
    def take(self, k: int) -> np.ndarray:
        """Next ``k`` triple shares as a ``(3, k)`` array of rows a, b, c."""
        ...


_OPEN = struct.Struct("<QI")


class PartyBackend(Backend):
    """One party's view of a two-party XOR-shared circuit evaluation.

    Both parties must issue exactly the same sequence of operations with the
    same shapes; every message carries a sequence number and length so that a
    divergence is detected as a :class:`ProtocolError` instead of silently
    producing garbage.
    """

    def __init__(
        self,
        party: int,
        channel: Connection,
        triples: TripleSource,
        rng: np.random.Generator | None = None,
        record_trace: bool = False,
    ) -> None:
        super().__init__(record_trace)
        if party not in (VENDOR, USER):
            raise ValueError("party must be 0 or 1")
        self.party = party
        self.channel = channel
        self.triples = triples
        self._rng = rng
        self._seq = 0

    def _random_bits(self, shape) -> np.ndarray:
        n = math.prod(shape)
        if self._rng is not None:
            return self._rng.integers(0, 2, size=shape, dtype=np.uint8)
        raw = np.frombuffer(os.urandom((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:n].reshape(shape)

    def _send_bits(self, ftype: FrameType, bits: np.ndarray) -> None:
        flat = bits.reshape(-1)
        payload = _OPEN.pack(self._seq, flat.size) + np.packbits(flat, bitorder="little").tobytes()
        self.channel.send_frame(ftype, payload)

    def _recv_bits(self, ftype: FrameType, shape) -> np.ndarray:
        payload = self.channel.expect(ftype)
        n = math.prod(shape)
        if len(payload) < _OPEN.size:
            raise ProtocolError("truncated share message")
        seq, count = _OPEN.unpack_from(payload)
        if seq != self._seq or count != n:
            raise ProtocolError(
                f"share stream out of sync: expected #{self._seq} of {n} bits, got #{seq} of {count}"
            )
        body = np.frombuffer(payload, dtype=np.uint8, offset=_OPEN.size)
        if body.size != (n + 7) // 8:
            raise ProtocolError("share message length mismatch")
        return np.unpackbits(body, bitorder="little")[:n].reshape(shape)

    def _exchange(self, ftype: FrameType, mine: np.ndarray) -> np.ndarray:
        # The vendor speaks first so two blocking writers never meet.
        if self.party == VENDOR:
            self._send_bits(ftype, mine)
            theirs = self._recv_bits(ftype, mine.shape)
        else:
            theirs = self._recv_bits(ftype, mine.shape)
            self._send_bits(ftype, mine)
        self._seq += 1
        return theirs

    def input(self, owner: int, value=None, shape=None) -> np.ndarray:
        if owner == self.party:
            if value is None:
                raise ValueError("the owning party must supply the input value")
            value = as_bits(value, shape)
            mask = self._random_bits(value.shape)
            self._send_bits(FrameType.SHARE, mask)
            out = value ^ mask
            shape = value.shape
        else:
            if shape is None:
                raise ValueError("the non-owning party must supply the input shape")
            shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
            out = self._recv_bits(FrameType.SHARE, shape)
        self._seq += 1
        if self.record_trace:
            self.trace.append(("input", owner, tuple(shape)))
        return out

    def const(self, value, shape=None) -> np.ndarray:
        bits = as_bits(value, shape)
        return bits if self.party == VENDOR else np.zeros_like(bits)

    def not_(self, a: np.ndarray) -> np.ndarray:
        return a ^ np.uint8(1) if self.party == VENDOR else a.copy()

    def _and(self, x: np.ndarray, y: np.ndarray, shape: tuple) -> np.ndarray:
        k = math.prod(shape)
        t = self.triples.take(k)
        a, b, c = t[0].reshape(shape), t[1].reshape(shape), t[2].reshape(shape)
        mine = np.empty(2 * k, dtype=np.uint8)
        mine[:k] = (x ^ a).reshape(-1)
        mine[k:] = (y ^ b).reshape(-1)
        opened = self._exchange(FrameType.REVEAL, mine) ^ mine
        d = opened[:k].reshape(shape)
        e = opened[k:].reshape(shape)
        z = c ^ (d & b) ^ (e & a)
        if self.party == VENDOR:
            z ^= d & e
        return z

    def _reveal(self, a: np.ndarray) -> np.ndarray:
        return a ^ self._exchange(FrameType.REVEAL, a)
