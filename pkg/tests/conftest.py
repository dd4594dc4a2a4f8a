"""Shared oracles and harnesses.

The brute-force oracle works on plain clause lists so it never touches the
package's encoder, matrix code or solver.
"""

from __future__ import annotations

import itertools
import random

import numpy as np
import pytest

from privhw.backend import USER, VENDOR, PartyBackend
from privhw.dealer import LocalDealer
from privhw.transport import run_cooperative


def brute_force_sat(num_vars: int, clauses) -> bool:
    """Exhaustive satisfiability of a DIMACS-style clause list."""
    clauses = [tuple(c) for c in clauses]
    for bits in itertools.product((False, True), repeat=num_vars):
        if all(any(bits[abs(l) - 1] == (l > 0) for l in c) for c in clauses):
            return True
    return False


def random_clauses(rng: random.Random, n: int, m: int, k: int | None = None) -> list[tuple[int, ...]]:
    """``m`` random clauses over ``n`` variables; width ``k`` or random 1..min(n, 3)."""
    out = []
    for _ in range(m):
        width = k if k is not None else rng.randint(1, min(n, 3))
        vs = rng.sample(range(1, n + 1), min(width, n))
        out.append(tuple(v if rng.random() < 0.5 else -v for v in vs))
    return out


def two_party(program, seed: int = 0, record_trace: bool = False):
    """Run ``program(be)`` as both parties; returns ``(out0, out1, be0, be1)``."""
    dealer = LocalDealer(seed)
    backends = {}

    def party(p: int):
        def run(conn):
            be = PartyBackend(p, conn, dealer.source(p), rng=np.random.default_rng([seed, p]),
                              record_trace=record_trace)
            backends[p] = be
            return program(be)

        return run

    out0, out1 = run_cooperative(party(VENDOR), party(USER))
    return out0, out1, backends[VENDOR], backends[USER]


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240611)


def unit_propagate(clauses, fixed: dict[int, bool]) -> dict[int, bool] | None:
    """Plain unit propagation from ``fixed``; None on conflict."""
    val = dict(fixed)
    changed = True
    while changed:
        changed = False
        for c in clauses:
            open_lits = []
            sat = False
            for l in c:
                v = val.get(abs(l))
                if v is None:
                    open_lits.append(l)
                elif v == (l > 0):
                    sat = True
                    break
            if sat:
                continue
            if not open_lits:
                return None
            if len(open_lits) == 1:
                l = open_lits[0]
                val[abs(l)] = l > 0
                changed = True
    return val


def random_expr(rng: random.Random, sigs: dict[str, int], width: int, depth: int) -> str:
    """Random s-expression of ``width`` bits over ``sigs``."""
    same = [s for s, w in sigs.items() if w == width]
    if depth == 0 or rng.random() < 0.25:
        if same and rng.random() < 0.8:
            return rng.choice(same)
        return "#b" + format(rng.randrange(1 << width), f"0{width}b")
    op = rng.choice(["ite", "ite", "bvadd", "bvxor", "bvand", "bvor", "bvnot"])
    sub = lambda: random_expr(rng, sigs, width, depth - 1)
    if op == "ite":
        return f"(ite {random_cond(rng, sigs, depth - 1)} {sub()} {sub()})"
    if op == "bvnot":
        return f"(bvnot {sub()})"
    return f"({op} {sub()} {sub()})"


def random_cond(rng: random.Random, sigs: dict[str, int], depth: int) -> str:
    name = rng.choice(sorted(sigs))
    w = sigs[name]
    other = random_expr(rng, sigs, w, max(0, depth - 1))
    return f"(= {name} {other})"


def random_multicone(rng: random.Random, cones: int = 3, max_frame_bits: int = 12) -> dict:
    """Design JSON with independent cones; each cone has one input and one or two registers."""
    inputs, signals, budget = [], [], max_frame_bits
    for k in range(cones):
        w_in = rng.randint(1, 2)
        regs = [(f"r{k}_{j}", rng.randint(1, 2)) for j in range(rng.randint(1, 2))]
        need = w_in + sum(w for _, w in regs)
        if need > budget:
            break
        budget -= need
        inputs.append([f"i{k}", w_in])
        scope = {f"i{k}": w_in, **dict(regs)}
        for name, w in regs:
            sig = {"name": name, "width": w, "next": random_expr(rng, scope, w, 3)}
            if rng.random() < 0.5:
                sig["init"] = rng.randrange(1 << w)
            signals.append(sig)
    observable = [s["name"] for s in signals] + [i[0] for i in inputs]
    return {"id": f"multicone-{rng.random()}", "inputs": inputs, "signals": signals,
            "observable": observable}


def reference_dpll(n: int, clauses, order=None, limit: int = 20000):
    """Plaintext replay of the giant-step rules; returns (result, steps, backtracks).

    Each step does one of: backtrack on conflict, one unit assignment (lowest
    variable), one pure-literal assignment (lowest variable), one decision
    (control order when given and live, else most frequent literal with ties
    to the lowest variable and positive polarity).
    """
    clauses = [tuple(c) for c in clauses]
    value: dict[int, bool] = {}
    trail: list[list] = []  # [var, is_decision, tried_both]
    steps = backtracks = 0
    while True:
        open_cls = [c for c in clauses if not any(value.get(abs(l)) == (l > 0) for l in c)]
        if not open_cls:
            return "SAT", steps, backtracks
        if steps >= limit:
            return "TIMEOUT", steps, backtracks
        steps += 1
        free = [[l for l in c if abs(l) not in value] for c in open_cls]
        if any(not f for f in free):
            backtracks += 1
            while trail and not (trail[-1][1] and not trail[-1][2]):
                del value[trail.pop()[0]]
            if not trail:
                return "UNSAT", steps, backtracks
            var = trail[-1][0]
            value[var] = not value[var]
            trail[-1][2] = True
            continue
        pos = {abs(l) for f in free for l in f if l > 0}
        neg = {abs(l) for f in free for l in f if l < 0}
        units = [f[0] for f in free if len(f) == 1]
        if units:
            var = min(abs(l) for l in units)
            value[var] = var in units
            trail.append([var, False, False])
            continue
        pure = sorted(pos ^ neg)
        if pure:
            value[pure[0]] = pure[0] in pos
            trail.append([pure[0], False, False])
            continue
        choice = None
        for lit in order or ():
            v = abs(lit)
            if v in pos or v in neg:
                choice = (v, v in pos)
        if choice is None:
            counts = {}
            for f in free:
                for l in f:
                    counts[l] = counts.get(l, 0) + 1
            best = max(counts.values())
            choice = min(((abs(l), l < 0) for l, c in counts.items() if c == best))
            choice = (choice[0], not choice[1])
        value[choice[0]] = choice[1]
        trail.append([choice[0], True, False])


def counter_violations(bug: bool) -> int:
    """Plaintext BMC by enumeration: traces where reset#1 holds but counter#2 != 0."""
    bad = 0
    for reset, enable, c in itertools.product((0, 1), (0, 1), range(8)):
        nxt = (1 if bug else 0) if reset else (c + (2 if enable else 1)) % 8
        bad += bool(reset and nxt != 0)
    return bad
