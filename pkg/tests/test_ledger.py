import hashlib

import numpy as np
import pytest

from privhw.errors import LedgerError, RecordNotFound, VerificationFailure
from privhw.ledger import (
    ENTRY_LEN,
    PAYLOAD_LEN,
    KeyPair,
    Ledger,
    LedgerRecord,
    address_of,
    authorize,
    design_hash,
    new_record_id,
    register,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def keys(rng):
    return {name: KeyPair.generate(rng) for name in ("va", "vb", "vc", "user")}


def test_payload_layout(rng, keys):
    refs = (new_record_id(rng), new_record_id(rng))
    rec = LedgerRecord(new_record_id(rng), design_hash(b"d"), keys["va"].address, keys["user"].address, refs)
    data = rec.payload()
    assert len(data) == PAYLOAD_LEN == 32 + 32 + 20 + 20 + 5 * 32
    assert data[:32] == rec.id and data[32:64] == hashlib.sha256(b"d").digest()
    assert data[104:168] == refs[0] + refs[1] and data[168:] == bytes(96)
    assert LedgerRecord.from_payload(data) == rec


def test_address_is_hashed_public_key(keys):
    k = keys["va"]
    assert k.address == hashlib.sha256(k.public).digest()[:20] == address_of(k.public)


def test_authorize_and_track(rng, keys):
    ledger = Ledger()
    rid = authorize(ledger, keys["va"], keys["user"].address, b"design A", rng)
    rec = ledger.track(rid)
    assert rec.references == () and rec.from_addr == keys["va"].address
    assert rec.to_addr == keys["user"].address


def test_push_then_track_identical_bytes(rng, keys):
    ledger = Ledger()
    rec = LedgerRecord(new_record_id(rng), design_hash(b"x"), keys["va"].address, keys["user"].address)
    ledger.push(rec, keys["va"])
    assert ledger.track(rec.id).payload() == rec.payload()
    assert ledger.raw_entry(rec.id)[:PAYLOAD_LEN] == rec.payload()


def test_register_with_two_references(rng, keys):
    ledger = Ledger()
    a = authorize(ledger, keys["va"], keys["user"].address, b"A", rng)
    b = authorize(ledger, keys["vb"], keys["user"].address, b"B", rng)
    c = register(ledger, keys["user"], b"A+B", [a, b], rng=rng)
    payload = ledger.track(c).payload()
    slots = [payload[104 + 32 * k : 136 + 32 * k] for k in range(5)]
    assert sum(s != bytes(32) for s in slots) == 2


def test_unknown_id(rng):
    with pytest.raises(RecordNotFound):
        Ledger().track(new_record_id(rng))


def test_six_references_rejected(rng, keys):
    with pytest.raises(LedgerError):
        LedgerRecord(new_record_id(rng), design_hash(b"x"), keys["user"].address, keys["user"].address,
                     tuple(new_record_id(rng) for _ in range(6)))


def test_push_checks(rng, keys):
    ledger = Ledger()
    rec = LedgerRecord(new_record_id(rng), design_hash(b"x"), keys["va"].address, keys["user"].address)
    with pytest.raises(LedgerError):
        ledger.push(rec, keys["vb"])  # signer does not own the from address
    ledger.push(rec, keys["va"])
    with pytest.raises(LedgerError):
        ledger.push(rec, keys["va"])  # duplicate id
    dangling = LedgerRecord(new_record_id(rng), design_hash(b"y"), keys["user"].address,
                            keys["user"].address, (new_record_id(rng),))
    with pytest.raises(LedgerError):
        ledger.push(dangling, keys["user"])
    assert len(ledger) == 1


def test_trace_leaf(rng, keys):
    ledger = Ledger()
    rid = authorize(ledger, keys["va"], keys["user"].address, b"A", rng)
    assert ledger.trace(rid) == {keys["va"].address}


def test_trace_two_vendors(rng, keys):
    ledger = Ledger()
    a = authorize(ledger, keys["va"], keys["user"].address, b"A", rng)
    b = authorize(ledger, keys["vb"], keys["user"].address, b"B", rng)
    c = register(ledger, keys["user"], b"C", [a, b], rng=rng)
    assert ledger.trace(c) == {keys["va"].address, keys["vb"].address}


def test_trace_diamond_deduplicates(rng, keys):
    ledger = Ledger()
    a = authorize(ledger, keys["va"], keys["user"].address, b"A", rng)
    b = register(ledger, keys["user"], b"B", [a], rng=rng)
    c = register(ledger, keys["user"], b"C", [a], rng=rng)
    d = register(ledger, keys["user"], b"D", [b, c], rng=rng)
    assert ledger.trace(d) == {keys["va"].address}


def test_three_level_dag(rng, keys):
    ledger = Ledger()
    leaves = {name: authorize(ledger, keys[name], keys["user"].address, name.encode(), rng)
              for name in ("va", "vb", "vc")}
    mid1 = register(ledger, keys["user"], b"m1", [leaves["va"], leaves["vb"]], rng=rng)
    mid2 = register(ledger, keys["user"], b"m2", [leaves["vb"], leaves["vc"]], rng=rng)
    top = register(ledger, keys["user"], b"top", [mid1, mid2, leaves["va"]], rng=rng)
    want = {keys[n].address for n in ("va", "vb", "vc")}
    assert ledger.trace(top) == want
    assert ledger.trace(mid1) == {keys["va"].address, keys["vb"].address}


def test_every_single_byte_tamper_detected(tmp_path, rng, keys):
    path = tmp_path / "ledger.bin"
    ledger = Ledger(path)
    a = authorize(ledger, keys["va"], keys["user"].address, b"A", rng)
    top = register(ledger, keys["user"], b"T", [a], rng=rng)
    clean = path.read_bytes()
    assert len(clean) == 2 * ENTRY_LEN
    for pos in range(len(clean)):
        data = bytearray(clean)
        data[pos] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(VerificationFailure):
            Ledger(path).trace(top)
    path.write_bytes(clean)
    assert Ledger(path).trace(top) == {keys["va"].address}


def test_reopen_and_append_only(tmp_path, rng, keys):
    path = tmp_path / "ledger.bin"
    ledger = Ledger(path)
    ids = [authorize(ledger, keys["va"], keys["user"].address, bytes([k]), rng) for k in range(3)]
    before = path.read_bytes()
    again = Ledger(path)
    assert again.ids() == ids and again.verify_all() == 3
    authorize(again, keys["vb"], keys["user"].address, b"more", rng)
    after = path.read_bytes()
    assert after[: len(before)] == before and len(after) == 4 * ENTRY_LEN


def test_key_file_round_trip(tmp_path, keys):
    keys["va"].save(tmp_path / "k.json")
    loaded = KeyPair.load(tmp_path / "k.json")
    assert loaded.public == keys["va"].public and loaded.address == keys["va"].address
