"""1-out-of-N oblivious transfer (Chou-Orlandi style) over secp256k1.

Sender holds ``N`` equal-length messages, receiver holds a choice ``alpha`` in
``1..N``.  With generator ``G``:

    sender    -> S = y*G
    receiver  -> R = (alpha-1)*S + x*G
    sender    -> c_j = m_j XOR PRG(KDF(y*(R - (j-1)*S), sid, j))    j = 1..N
    receiver     m_alpha = c_alpha XOR PRG(KDF(x*S, sid, alpha))

Points travel in 33-byte compressed SEC1 form.  Semi-honest security only.
"""

from __future__ import annotations

import hashlib
import secrets
import struct

from ecdsa import SECP256k1
from ecdsa.ellipticcurve import INFINITY, PointJacobi

from .errors import ProtocolError
from .transport import Connection, FrameType

CURVE = SECP256k1
G: PointJacobi = CURVE.generator
ORDER: int = CURVE.order
POINT_LEN = 33
_CIPH_HEADER = struct.Struct("<II")


def encode_point(p) -> bytes:
    if p == INFINITY:
        raise ProtocolError("cannot encode the point at infinity")
    return p.to_bytes("compressed")


def decode_point(data: bytes) -> PointJacobi:
    if len(data) != POINT_LEN:
        raise ProtocolError(f"group element must be {POINT_LEN} bytes, got {len(data)}")
    if data[0] not in (2, 3) or int.from_bytes(data[1:], "big") >= CURVE.curve.p():
        raise ProtocolError("non-canonical group element encoding")
    try:
        return PointJacobi.from_bytes(CURVE.curve, data, valid_encodings=("compressed",), order=ORDER)
    except Exception as exc:  # ecdsa raises several unrelated types here
        raise ProtocolError(f"malformed group element: {exc}") from None


def _random_scalar(rng=None) -> int:
    if rng is None:
        return secrets.randbelow(ORDER - 1) + 1
    # 64 extra bits make the modular bias negligible
    return int.from_bytes(rng.bytes(40), "big") % (ORDER - 1) + 1


def _pad_key(point, session_id: bytes, j: int, length: int) -> bytes:
    key = hashlib.sha256(b"privhw-ot-kdf" + session_id + struct.pack("<I", j) + encode_point(point)).digest()
    return hashlib.shake_256(b"privhw-ot-prg" + key).digest(length)


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(len(a), "little")


def check_messages(messages: list[bytes]) -> int:
    if not messages:
        raise ProtocolError("OT needs at least one message")
    length = len(messages[0])
    if any(len(m) != length for m in messages):
        raise ProtocolError("OT messages must have equal length")
    return length


class OtSender:
    """Sender state machine; drive it with :meth:`first` and :meth:`reply`."""

    def __init__(self, messages: list[bytes], session_id: bytes) -> None:
        self.length = check_messages(messages)
        self.messages = messages
        self.session_id = session_id
        self._y = _random_scalar()
        self._S = G * self._y

    def first(self) -> bytes:
        return encode_point(self._S)

    def reply(self, r_bytes: bytes) -> list[bytes]:
        R = decode_point(r_bytes)
        yR = R * self._y
        yS = self._S * self._y
        out, shift = [], None
        for j, msg in enumerate(self.messages, start=1):
            # y*(R - (j-1)*S) = yR - (j-1)*yS, walked incrementally
            point = yR if shift is None else yR + (-shift)
            out.append(_xor(msg, _pad_key(point, self.session_id, j, self.length)))
            shift = yS if shift is None else shift + yS
        return out


class OtReceiver:
    def __init__(self, choice: int, n: int, session_id: bytes, rng=None) -> None:
        if not 1 <= choice <= n:
            raise ValueError(f"choice {choice} outside 1..{n}")
        self.choice, self.n, self.session_id = choice, n, session_id
        self._x = _random_scalar(rng)
        self._S = None

    def respond(self, s_bytes: bytes) -> bytes:
        self._S = decode_point(s_bytes)
        R = G * self._x
        if self.choice > 1:
            R = R + self._S * (self.choice - 1)
        return encode_point(R)

    def finish(self, ciphertexts: list[bytes]) -> bytes:
        if len(ciphertexts) != self.n:
            raise ProtocolError(f"expected {self.n} ciphertexts, got {len(ciphertexts)}")
        c = ciphertexts[self.choice - 1]
        return _xor(c, _pad_key(self._S * self._x, self.session_id, self.choice, len(c)))


# -- wire protocol -----------------------------------------------------------------


def send_messages(conn: Connection, messages: list[bytes], session_id: bytes) -> None:
    """Sender side of one OT exchange over ``conn``."""
    sender = OtSender(messages, session_id)
    conn.send_frame(FrameType.OT_S, sender.first())
    ciphers = sender.reply(conn.expect(FrameType.OT_R))
    for j, c in enumerate(ciphers, start=1):
        conn.send_frame(FrameType.OT_CIPH, _CIPH_HEADER.pack(j, len(ciphers)) + c)


def receive_choice(conn: Connection, choice: int, n: int, session_id: bytes,
                   length: int | None = None, rng=None) -> bytes:
    """Receiver side; ``length`` (if given) is the agreed message length."""
    receiver = OtReceiver(choice, n, session_id, rng)
    conn.send_frame(FrameType.OT_R, receiver.respond(conn.expect(FrameType.OT_S)))
    ciphers = []
    for j in range(1, n + 1):
        body = conn.expect(FrameType.OT_CIPH)
        if len(body) < _CIPH_HEADER.size:
            raise ProtocolError("truncated OT ciphertext")
        idx, total = _CIPH_HEADER.unpack_from(body)
        if idx != j or total != n:
            raise ProtocolError(f"OT ciphertext index {idx}/{total}, expected {j}/{n}")
        c = body[_CIPH_HEADER.size :]
        if length is not None and len(c) != length:
            raise ProtocolError("OT ciphertext length mismatch")
        if ciphers and len(c) != len(ciphers[0]):
            raise ProtocolError("OT ciphertexts differ in length")
        ciphers.append(c)
    return receiver.finish(ciphers)


class LoopbackOT:
    """Same call shape as the real exchange, with no cryptography at all."""

    def __init__(self, insecure: bool = False) -> None:
        if not insecure:
            raise ValueError("LoopbackOT provides no privacy; pass insecure=True to use it")

    def exchange(self, messages: list[bytes], choice: int) -> bytes:
        check_messages(messages)
        if not 1 <= choice <= len(messages):
            raise ValueError(f"choice {choice} outside 1..{len(messages)}")
        return messages[choice - 1]


def ot_exchange(messages: list[bytes], choice: int, session_id: bytes = b"\0" * 16, rng=None) -> bytes:
    """Run both OT roles in-process (no transport) and return the receiver output."""
    sender = OtSender(messages, session_id)
    receiver = OtReceiver(choice, len(messages), session_id, rng)
    return receiver.finish(sender.reply(receiver.respond(sender.first())))
