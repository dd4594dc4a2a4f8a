"""Append-only signed provenance log for soft IP trades.

Each record carries a fixed 264-byte payload::

    id (32) | design hash (32) | from (20) | to (20) | 5 x reference id (32)

Unused reference slots are zero and used ones are packed from slot 0.  A
stored entry is the payload followed by an Ed25519 signature (64 bytes) and
the signer's public key (32 bytes), 360 bytes in total.  An address is the
first 20 bytes of SHA-256 over the raw public key.

Records are only ever appended, and a record may reference only records that
already exist, so the reference graph is acyclic by construction.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .errors import LedgerError, RecordNotFound, VerificationFailure

ID_LEN = 32
HASH_LEN = 32
ADDR_LEN = 20
MAX_REFERENCES = 5
PAYLOAD_LEN = ID_LEN + HASH_LEN + 2 * ADDR_LEN + MAX_REFERENCES * ID_LEN
SIG_LEN = 64
PUBKEY_LEN = 32
ENTRY_LEN = PAYLOAD_LEN + SIG_LEN + PUBKEY_LEN
_ZERO_ID = bytes(ID_LEN)

assert PAYLOAD_LEN == 264 and ENTRY_LEN == 360


def address_of(public_key: bytes) -> bytes:
    return hashlib.sha256(public_key).digest()[:ADDR_LEN]


def design_hash(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    private: bytes
    public: bytes

    @property
    def address(self) -> bytes:
        return address_of(self.public)

    @classmethod
    def generate(cls, rng: np.random.Generator | None = None) -> KeyPair:
        seed = rng.bytes(32) if rng is not None else os.urandom(32)
        return cls.from_private(seed)

    @classmethod
    def from_private(cls, private: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(private)
        return cls(private, sk.public_key().public_bytes_raw())

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private).sign(message)

    def to_json(self) -> dict:
        return {"private": self.private.hex(), "public": self.public.hex(), "address": self.address.hex()}

    @classmethod
    def from_json(cls, data: dict) -> KeyPair:
        kp = cls.from_private(bytes.fromhex(data["private"]))
        if "public" in data and bytes.fromhex(data["public"]) != kp.public:
            raise LedgerError("key file public key does not match its private key")
        return kp

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> KeyPair:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LedgerRecord:
    id: bytes
    design_hash: bytes
    from_addr: bytes
    to_addr: bytes
    references: tuple[bytes, ...] = ()

    def __post_init__(self) -> None:
        for name, value, size in (
            ("id", self.id, ID_LEN),
            ("design_hash", self.design_hash, HASH_LEN),
            ("from_addr", self.from_addr, ADDR_LEN),
            ("to_addr", self.to_addr, ADDR_LEN),
        ):
            if len(value) != size:
                raise LedgerError(f"{name} must be {size} bytes, got {len(value)}")
        if self.id == _ZERO_ID:
            raise LedgerError("record id must be non-zero")
        if len(self.references) > MAX_REFERENCES:
            raise LedgerError(f"at most {MAX_REFERENCES} references, got {len(self.references)}")
        for ref in self.references:
            if len(ref) != ID_LEN or ref == _ZERO_ID:
                raise LedgerError("references must be non-zero 32-byte ids")
        if len(set(self.references)) != len(self.references):
            raise LedgerError("duplicate reference")

    def payload(self) -> bytes:
        slots = list(self.references) + [_ZERO_ID] * (MAX_REFERENCES - len(self.references))
        return self.id + self.design_hash + self.from_addr + self.to_addr + b"".join(slots)

    @classmethod
    def from_payload(cls, data: bytes) -> LedgerRecord:
        if len(data) != PAYLOAD_LEN:
            raise LedgerError(f"payload must be {PAYLOAD_LEN} bytes")
        pos = 0

        def take(k: int) -> bytes:
            nonlocal pos
            pos += k
            return data[pos - k : pos]

        rid, h, frm, to = take(ID_LEN), take(HASH_LEN), take(ADDR_LEN), take(ADDR_LEN)
        slots = [take(ID_LEN) for _ in range(MAX_REFERENCES)]
        used = [s for s in slots if s != _ZERO_ID]
        if slots[: len(used)] != used:
            raise LedgerError("reference slots are not contiguous")
        return cls(rid, h, frm, to, tuple(used))

    def to_json(self) -> dict:
        return {
            "id": self.id.hex(),
            "design_hash": self.design_hash.hex(),
            "from": self.from_addr.hex(),
            "to": self.to_addr.hex(),
            "references": [r.hex() for r in self.references],
        }


@dataclass(frozen=True)
class SignedEntry:
    record: LedgerRecord
    signature: bytes
    public_key: bytes

    def to_bytes(self) -> bytes:
        return self.record.payload() + self.signature + self.public_key

    @classmethod
    def parse(cls, data: bytes) -> tuple[bytes, bytes, bytes]:
        """Split a raw entry into (payload, signature, public key) without checks."""
        if len(data) != ENTRY_LEN:
            raise LedgerError(f"entry must be {ENTRY_LEN} bytes")
        return data[:PAYLOAD_LEN], data[PAYLOAD_LEN : PAYLOAD_LEN + SIG_LEN], data[PAYLOAD_LEN + SIG_LEN :]


def verify_entry(data: bytes, expected_id: bytes | None = None) -> SignedEntry:
    """Check signature and address binding of one raw entry."""
    payload, sig, pub = SignedEntry.parse(data)
    rid = expected_id if expected_id is not None else payload[:ID_LEN]
    if payload[:ID_LEN] != rid:
        raise VerificationFailure(rid, "stored id does not match")
    try:
        Ed25519PublicKey.from_public_bytes(pub).verify(sig, payload)
    except (InvalidSignature, ValueError):
        raise VerificationFailure(rid, "signature does not verify") from None
    try:
        record = LedgerRecord.from_payload(payload)
    except LedgerError as exc:
        raise VerificationFailure(rid, str(exc)) from None
    if record.from_addr != address_of(pub):
        raise VerificationFailure(rid, "signer key does not resolve to the from address")
    return SignedEntry(record, sig, pub)


class Ledger:
    """Fixed-size signed entries in one append-only file, or in memory when ``path`` is None.

    Entries are re-read and re-verified on every access, so tampering with
    stored bytes is caught when the record is next tracked or traced.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._memory = bytearray()
        self._index: dict[bytes, int] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            data = self.path.read_bytes()
            if len(data) % ENTRY_LEN:
                raise LedgerError(f"ledger file size {len(data)} is not a multiple of {ENTRY_LEN}")
            for k in range(len(data) // ENTRY_LEN):
                rid = data[k * ENTRY_LEN : k * ENTRY_LEN + ID_LEN]
                if rid in self._index:
                    raise LedgerError(f"duplicate record id {rid.hex()}")
                self._index[rid] = k

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, record_id: bytes) -> bool:
        return record_id in self._index

    def ids(self) -> list[bytes]:
        return sorted(self._index, key=self._index.__getitem__)

    def _read(self, slot: int) -> bytes:
        if self.path is None:
            return bytes(self._memory[slot * ENTRY_LEN : (slot + 1) * ENTRY_LEN])
        with self.path.open("rb") as fh:
            fh.seek(slot * ENTRY_LEN)
            return fh.read(ENTRY_LEN)

    def _append(self, entry: bytes) -> None:
        if self.path is None:
            self._memory += entry
            return
        with self.path.open("ab") as fh:
            fh.write(entry)
            fh.flush()
            os.fsync(fh.fileno())

    def push(self, record: LedgerRecord, key: KeyPair) -> bytes:
        """Sign and append ``record``; the ledger is unchanged if any check fails."""
        if record.from_addr != key.address:
            raise LedgerError("from address does not belong to the signing key")
        with self._lock:
            if record.id in self._index:
                raise LedgerError(f"record id {record.id.hex()} already exists")
            for ref in record.references:
                if ref not in self._index:
                    raise LedgerError(f"dangling reference {ref.hex()}")
            payload = record.payload()
            entry = SignedEntry(record, key.sign(payload), key.public).to_bytes()
            self._append(entry)
            self._index[record.id] = len(self._index)
        return record.id

    def raw_entry(self, record_id: bytes) -> bytes:
        if record_id not in self._index:
            raise RecordNotFound(f"no record {record_id.hex()}")
        return self._read(self._index[record_id])

    def track(self, record_id: bytes) -> LedgerRecord:
        return verify_entry(self.raw_entry(record_id), record_id).record

    def trace(self, record_id: bytes) -> set[bytes]:
        """Vendor addresses at the reference-free leaves below ``record_id``."""
        found: set[bytes] = set()
        seen: set[bytes] = set()
        stack = [record_id]
        while stack:
            rid = stack.pop()
            if rid in seen:
                continue
            seen.add(rid)
            try:
                record = self.track(rid)
            except RecordNotFound:
                raise VerificationFailure(rid, "referenced record is missing") from None
            if not record.references:
                found.add(record.from_addr)
            stack.extend(record.references)
        return found

    def verify_all(self) -> int:
        for rid in self.ids():
            self.track(rid)
        return len(self)


def new_record_id(rng: np.random.Generator | None = None) -> bytes:
    while True:
        rid = rng.bytes(ID_LEN) if rng is not None else os.urandom(ID_LEN)
        if rid != _ZERO_ID:
            return rid


def authorize(ledger: Ledger, vendor: KeyPair, user_addr: bytes, design: bytes,
              rng: np.random.Generator | None = None) -> bytes:
    """Vendor grants a user the right to use ``design``: a reference-free record."""
    record = LedgerRecord(new_record_id(rng), design_hash(design), vendor.address, user_addr)
    return ledger.push(record, vendor)


def register(ledger: Ledger, owner: KeyPair, design: bytes, references: list[bytes],
             to_addr: bytes | None = None, rng: np.random.Generator | None = None) -> bytes:
    """Register a composite design built from the referenced licensed records."""
    record = LedgerRecord(
        new_record_id(rng), design_hash(design), owner.address, to_addr or owner.address, tuple(references)
    )
    return ledger.push(record, owner)
