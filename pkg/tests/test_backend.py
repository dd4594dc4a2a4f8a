import itertools
import random

import numpy as np
import pytest

from privhw.backend import USER, VENDOR, BYTES_PER_AND, CleartextBackend, PartyBackend
from privhw.dealer import LocalDealer, TripleFile, write_triple_files
from privhw.errors import ProtocolError, TripleExhausted
from privhw.transport import run_cooperative

from conftest import two_party


def shared_eval(fn, seed=0):
    """Run ``fn(be)`` on both parties, reveal its output and return it once."""
    out0, out1, be0, be1 = two_party(lambda be: be.reveal(fn(be)), seed)
    assert np.array_equal(out0, out1)
    assert be0.stats == be1.stats
    return out0, be0.stats


def test_share_reveal_round_trip():
    for bit in (0, 1):
        got, stats = shared_eval(lambda be: be.input(VENDOR, np.array([bit]) if be.party == VENDOR else None, (1,)))
        assert got.tolist() == [bit]
        assert stats.reveal_count == 1


def test_reconstruction_of_many_bits():
    bits = np.random.default_rng(1).integers(0, 2, 10_000, dtype=np.uint8)
    got, _ = shared_eval(lambda be: be.input(USER, bits if be.party == USER else None, bits.shape))
    assert np.array_equal(got, bits)


def test_xor_rerandomization_cancels():
    bits = np.random.default_rng(2).integers(0, 2, 64, dtype=np.uint8)
    r = np.random.default_rng(3).integers(0, 2, 64, dtype=np.uint8)

    def prog(be):
        x = be.input(VENDOR, bits if be.party == VENDOR else None, bits.shape)
        mask = be.input(USER, r if be.party == USER else None, r.shape)
        return be.xor(be.xor(x, mask), mask)

    got, stats = shared_eval(prog)
    assert np.array_equal(got, bits) and stats.and_count == 0


@pytest.mark.parametrize("a,b", list(itertools.product((0, 1), repeat=2)))
def test_and_truth_table(a, b):
    def prog(be):
        x = be.input(VENDOR, np.array([a]) if be.party == VENDOR else None, (1,))
        y = be.input(USER, np.array([b]) if be.party == USER else None, (1,))
        return be.and_(x, y)

    got, stats = shared_eval(prog)
    assert got.tolist() == [a & b]
    assert stats.and_count == 1


@pytest.mark.parametrize("t,f", list(itertools.product((0, 1), repeat=2)))
def test_mux_selector(t, f):
    for s in (0, 1):
        def prog(be):
            sel, tt, ff = (be.input(VENDOR, np.array([v]) if be.party == VENDOR else None, (1,)) for v in (s, t, f))
            return be.mux(sel, tt, ff)

        got, stats = shared_eval(prog)
        assert got.tolist() == [t if s else f]
        assert stats.and_count == 1


def test_random_small_circuits_exhaustive():
    rng = random.Random(4)
    ops = ["and", "xor", "or", "not", "mux"]
    for _ in range(40):
        k = rng.randint(1, 3)
        gates = []
        for g in range(3):
            avail = k + g
            gates.append((rng.choice(ops), rng.randrange(avail), rng.randrange(avail), rng.randrange(avail)))
        owners = [rng.choice((VENDOR, USER)) for _ in range(k)]
        rows = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8).T

        def plain(values):
            wires = list(values)
            for op, i, j, l in gates:
                a, b, c = wires[i], wires[j], wires[l]
                wires.append({"and": a & b, "xor": a ^ b, "or": a | b, "not": 1 - a,
                              "mux": b if a else c}[op])
            return wires[-1]

        def prog(be):
            holds = lambda o: isinstance(be, CleartextBackend) or be.party == o
            wires = [be.input(o, rows[i] if holds(o) else None, rows[i].shape) for i, o in enumerate(owners)]
            for op, i, j, l in gates:
                a, b, c = wires[i], wires[j], wires[l]
                wires.append({"and": lambda: be.and_(a, b), "xor": lambda: be.xor(a, b),
                              "or": lambda: be.or_(a, b), "not": lambda: be.not_(a),
                              "mux": lambda: be.mux(a, b, c)}[op]())
            return wires[-1]

        want = np.array([plain(col) for col in rows.T], dtype=np.uint8)
        got, shared_stats = shared_eval(prog)
        clear = CleartextBackend()
        assert np.array_equal(got, want)
        assert np.array_equal(clear.reveal(prog(clear)), want)
        assert clear.stats.and_count == shared_stats.and_count


@pytest.mark.parametrize("values,index", [([3], 0), ([2, 5, 5], 1), ([0, 0, 0, 0], 0), ([1, 7, 3, 7, 6], 1)])
def test_oblivious_max_index_examples(values, index):
    width = 3
    bits = np.array([[(v >> b) & 1 for b in range(width)] for v in values], dtype=np.uint8)
    for be in (CleartextBackend(), CleartextBackend(fast=False)):
        idx = be.reveal(be.oblivious_max_index(be.const(bits)))
        assert int(sum(int(b) << k for k, b in enumerate(idx))) == index
    got, _ = shared_eval(lambda be: be.oblivious_max_index(be.input(VENDOR, bits if be.party == VENDOR else None, bits.shape)))
    assert int(sum(int(b) << k for k, b in enumerate(got))) == index


def test_oblivious_max_index_random():
    rng = np.random.default_rng(5)
    for _ in range(100):
        L, w = int(rng.integers(1, 12)), int(rng.integers(1, 5))
        vals = rng.integers(0, 1 << w, L)
        bits = ((vals[:, None] >> np.arange(w)) & 1).astype(np.uint8)
        be = CleartextBackend(fast=False)
        idx = be.reveal(be.oblivious_max_index(be.const(bits)))
        assert int(sum(int(b) << k for k, b in enumerate(idx))) == int(np.argmax(vals))


def test_oblivious_max_index_constant_cost():
    rng = np.random.default_rng(6)
    counts = set()
    for _ in range(20):
        be = CleartextBackend(fast=False)
        be.oblivious_max_index(be.const(rng.integers(0, 2, (7, 3), dtype=np.uint8)))
        counts.add(be.stats.and_count)
    assert len(counts) == 1


def test_oblivious_max_index_empty():
    be = CleartextBackend()
    with pytest.raises(ValueError):
        be.oblivious_max_index(be.const(np.zeros((0, 2), np.uint8)))


def test_fast_paths_match_generic_gates():
    rng = np.random.default_rng(7)
    for _ in range(150):
        shape = tuple(int(v) for v in rng.integers(0, 5, size=int(rng.integers(1, 3))))
        x = rng.integers(0, 2, size=shape + (int(rng.integers(0, 9)),), dtype=np.uint8)
        fast, slow = CleartextBackend(True, True), CleartextBackend(True, False)
        for op in ("or_reduce", "and_reduce", "first_one", "last_one", "popcount"):
            assert np.array_equal(getattr(fast, op)(x), getattr(slow, op)(x)), op
        assert np.array_equal(fast.prefix_or(x, True), slow.prefix_or(x, True))
        if x.shape[-1]:
            y = rng.integers(0, 2, size=x.shape, dtype=np.uint8)
            for op in ("add", "greater"):
                assert np.array_equal(getattr(fast, op)(x, y), getattr(slow, op)(x, y)), op
        assert fast.stats == slow.stats and fast.trace == slow.trace


def test_arithmetic_against_integers():
    rng = np.random.default_rng(8)
    be = CleartextBackend(fast=False)
    a, b = rng.integers(0, 16, 50), rng.integers(0, 16, 50)
    to_bits = lambda v, w: ((v[:, None] >> np.arange(w)) & 1).astype(np.uint8)
    to_int = lambda bits: (bits.astype(int) << np.arange(bits.shape[-1])).sum(-1)
    assert np.array_equal(to_int(be.add(to_bits(a, 4), to_bits(b, 4))), a + b)
    assert np.array_equal(be.greater(to_bits(a, 4), to_bits(b, 4)), (a > b).astype(np.uint8))
    x = rng.integers(0, 2, (30, 13), dtype=np.uint8)
    assert np.array_equal(to_int(be.popcount(x)), x.sum(-1))


def test_estimated_bytes_model():
    be = CleartextBackend()
    be.and_(be.const(np.ones(37, np.uint8)), be.const(np.ones(37, np.uint8)))
    assert BYTES_PER_AND == 32 and be.stats.estimated_bytes == 32 * 37


def test_trace_independent_of_secret_values():
    rng = np.random.default_rng(9)
    traces = set()
    for _ in range(3):
        vals = rng.integers(0, 2, (6, 3), dtype=np.uint8)

        def prog(be):
            v = be.input(USER, vals if be.party == USER else None, vals.shape)
            return be.oblivious_max_index(v)

        _, _, be0, be1 = two_party(lambda be: be.reveal(prog(be)), record_trace=True)
        assert be0.trace == be1.trace
        traces.add(tuple(be0.trace))
    assert len(traces) == 1


def test_triple_file_exhaustion(tmp_path):
    write_triple_files(tmp_path / "t0", tmp_path / "t1", 5, seed=1)
    tf0, tf1 = TripleFile(tmp_path / "t0"), TripleFile(tmp_path / "t1")
    t0, t1 = tf0.take(5), tf1.take(5)
    assert np.array_equal((t0[0] ^ t1[0]) & (t0[1] ^ t1[1]), t0[2] ^ t1[2])
    with pytest.raises(TripleExhausted):
        tf0.take(1)


def test_desync_detected():
    dealer = LocalDealer(1)

    def party(p, n):
        def run(conn):
            be = PartyBackend(p, conn, dealer.source(p))
            return be.reveal(be.const(np.zeros(n, np.uint8)))

        return run

    with pytest.raises(ProtocolError):
        run_cooperative(party(VENDOR, 3), party(USER, 4))
