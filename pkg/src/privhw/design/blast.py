"""Bit-blasting of unrolled designs and Tseytin CNF generation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

from ..cnf import CnfFormula
from ..errors import MappingError, WidthError
from .expr import BvAdd, Const, Eq, Expr, Extract, Ite, Not, Ref, And, Or, Xor, children
from .module import UnrolledDesign, split_frame_name

# A bit is either a literal (non-zero int) or a Python bool constant.
Bit = Union[int, bool]


def _is_const(b: Bit) -> bool:
    return type(b) is bool


class GateBuilder:
    """Structural-hashing Tseytin encoder with constant folding.

    Every non-trivial gate gets one fresh variable; ``and``/``or`` use the
    usual k+1 clause definition, ``xor`` and ``ite`` four clauses each.
    """

    def __init__(self, first_free: int = 1) -> None:
        self.next_var = first_free
        self.clauses: list[tuple[int, ...]] = []
        self._cache: dict[tuple, int] = {}

    def fresh(self) -> int:
        v = self.next_var
        self.next_var += 1
        return v

    @property
    def num_variables(self) -> int:
        return self.next_var - 1

    def add_clause(self, lits: Sequence[Bit]) -> None:
        out: list[int] = []
        for l in lits:
            if l is True:
                return
            if l is False:
                continue
            if -l in out:
                return
            if l not in out:
                out.append(l)
        self.clauses.append(tuple(out))

    def assert_bit(self, b: Bit) -> None:
        self.add_clause([b])

    def assert_equal(self, a: Bit, b: Bit) -> None:
        if a == b and type(a) is type(b):
            return
        self.add_clause([neg(a), b])
        self.add_clause([a, neg(b)])

    # -- gates ---------------------------------------------------------------------

    def and_(self, *xs: Bit) -> Bit:
        ops: list[int] = []
        for x in xs:
            if x is False:
                return False
            if x is True:
                continue
            if -x in ops:
                return False
            if x not in ops:
                ops.append(x)
        if not ops:
            return True
        if len(ops) == 1:
            return ops[0]
        key = ("and", tuple(sorted(ops)))
        if key in self._cache:
            return self._cache[key]
        o = self.fresh()
        for x in ops:
            self.clauses.append((-o, x))
        self.clauses.append(tuple([o] + [-x for x in ops]))
        self._cache[key] = o
        return o

    def or_(self, *xs: Bit) -> Bit:
        ops: list[int] = []
        for x in xs:
            if x is True:
                return True
            if x is False:
                continue
            if -x in ops:
                return True
            if x not in ops:
                ops.append(x)
        if not ops:
            return False
        if len(ops) == 1:
            return ops[0]
        key = ("or", tuple(sorted(ops)))
        if key in self._cache:
            return self._cache[key]
        o = self.fresh()
        for x in ops:
            self.clauses.append((o, -x))
        self.clauses.append(tuple([-o] + ops))
        self._cache[key] = o
        return o

    def xor(self, a: Bit, b: Bit) -> Bit:
        if _is_const(a):
            return neg(b) if a else b
        if _is_const(b):
            return neg(a) if b else a
        if a == b:
            return False
        if a == -b:
            return True
        flip = (a < 0) != (b < 0)
        a, b = sorted((abs(a), abs(b)))
        key = ("xor", a, b)
        o = self._cache.get(key)
        if o is None:
            o = self.fresh()
            self.clauses += [(-o, a, b), (-o, -a, -b), (o, -a, b), (o, a, -b)]
            self._cache[key] = o
        return -o if flip else o

    def ite(self, c: Bit, t: Bit, e: Bit) -> Bit:
        if _is_const(c):
            return t if c else e
        if t == e and type(t) is type(e):
            return t
        if _is_const(t) and _is_const(e):
            return c if t else -c
        if t is True:
            return self.or_(c, e)
        if t is False:
            return self.and_(-c, e)
        if e is True:
            return self.or_(-c, t)
        if e is False:
            return self.and_(c, t)
        if t == -e:
            return neg(self.xor(c, t))
        if t == c:
            return self.or_(c, e)
        if t == -c:
            return self.and_(-c, e)
        if e == c:
            return self.and_(c, t)
        if e == -c:
            return self.or_(-c, t)
        if c < 0:
            c, t, e = -c, e, t
        key = ("ite", c, t, e)
        o = self._cache.get(key)
        if o is None:
            o = self.fresh()
            self.clauses += [(-c, -t, o), (-c, t, -o), (c, -e, o), (c, e, -o)]
            self._cache[key] = o
        return o


def neg(b: Bit) -> Bit:
    return (not b) if _is_const(b) else -b


class BitBlaster:
    """Lowers word-level expressions to lists of bits (LSB first)."""

    def __init__(self, gates: GateBuilder, env: Mapping[str, Sequence[Bit]]) -> None:
        self.g = gates
        self.env = env
        self._memo: dict[Expr, list[Bit]] = {}

    def bits(self, e: Expr) -> list[Bit]:
        hit = self._memo.get(e)
        if hit is not None:
            return hit
        out = self._lower(e)
        if len(out) != e.width:
            raise WidthError(f"lowered {type(e).__name__} to {len(out)} bits, expected {e.width}")
        self._memo[e] = out
        return out

    def _lower(self, e: Expr) -> list[Bit]:
        g = self.g
        if isinstance(e, Const):
            return [bool((e.value >> k) & 1) for k in range(e.width)]
        if isinstance(e, Ref):
            try:
                bits = list(self.env[e.name])
            except KeyError:
                raise MappingError(f"no literals for {e.name!r}") from None
            if len(bits) != e.width:
                raise WidthError(f"{e.name} has {len(bits)} bits, expected {e.width}")
            return bits
        if isinstance(e, Ite):
            c = self.bits(e.cond)[0]
            return [g.ite(c, t, f) for t, f in zip(self.bits(e.then), self.bits(e.other))]
        if isinstance(e, Eq):
            a, b = self.bits(e.a), self.bits(e.b)
            return [g.and_(*(neg(g.xor(x, y)) for x, y in zip(a, b)))]
        if isinstance(e, BvAdd):
            a, b = self.bits(e.a), self.bits(e.b)
            out, carry = [], False
            for k, (x, y) in enumerate(zip(a, b)):
                s = g.xor(x, y)
                out.append(g.xor(s, carry))
                if k + 1 < len(a):
                    carry = g.or_(g.and_(x, y), g.and_(carry, s))
            return out
        if isinstance(e, Extract):
            return self.bits(e.a)[e.lo : e.hi + 1]
        if isinstance(e, Not):
            return [neg(x) for x in self.bits(e.a)]
        a, b = self.bits(e.a), self.bits(e.b)
        if isinstance(e, And):
            return [g.and_(x, y) for x, y in zip(a, b)]
        if isinstance(e, Or):
            return [g.or_(x, y) for x, y in zip(a, b)]
        if isinstance(e, Xor):
            return [g.xor(x, y) for x, y in zip(a, b)]
        raise TypeError(e)


# -- maps ----------------------------------------------------------------------------

_KEY = re.compile(r"^(?P<sig>.+)#(?P<frame>\d+)\[(?P<bit>\d+)\]$")


def bit_key(signal: str, frame: int, bit: int) -> str:
    return f"{signal}#{frame}[{bit}]"


def parse_bit_key(key: str) -> tuple[str, int, int]:
    m = _KEY.match(key)
    if not m:
        raise MappingError(f"malformed semantic-map key {key!r}")
    return m["sig"], int(m["frame"]), int(m["bit"])


class SemanticMap(Mapping[str, int]):
    """Injective map from ``signal#frame[bit]`` to CNF variable index."""

    def __init__(self, entries: Mapping[str, int] | None = None) -> None:
        self._entries: dict[str, int] = {}
        self._owners: dict[int, str] = {}
        for k, v in (entries or {}).items():
            self.add(k, v)

    def add(self, key: str, literal: int) -> None:
        parse_bit_key(key)
        if literal < 1:
            raise MappingError(f"literal for {key} must be positive")
        if key in self._entries:
            if self._entries[key] != literal:
                raise MappingError(f"{key} mapped twice")
            return
        if literal in self._owners:
            raise MappingError(f"literal {literal} already bound to {self._owners[literal]}")
        self._entries[key] = literal
        self._owners[literal] = key

    def __getitem__(self, key: str) -> int:
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def literal(self, signal: str, frame: int, bit: int = 0) -> int:
        try:
            return self._entries[bit_key(signal, frame, bit)]
        except KeyError:
            raise MappingError(f"{bit_key(signal, frame, bit)} is not in the semantic map") from None

    def signal_bits(self, signal: str, frame: int) -> list[int]:
        """Literals of every mapped bit of ``signal#frame`` in bit order."""
        bits = sorted(
            (b, lit)
            for k, lit in self._entries.items()
            for s, f, b in [parse_bit_key(k)]
            if s == signal and f == frame
        )
        return [lit for _, lit in bits]

    def max_literal(self) -> int:
        return max(self._entries.values(), default=0)

    def restrict(self, signals: set[str] | Sequence[str]) -> SemanticMap:
        keep = set(signals)
        return SemanticMap({k: v for k, v in self._entries.items() if parse_bit_key(k)[0] in keep})

    def to_json(self) -> dict[str, int]:
        return dict(self._entries)

    @classmethod
    def from_json(cls, doc: Mapping[str, int] | str) -> SemanticMap:
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls({k: int(v) for k, v in doc.items()})

    def __repr__(self) -> str:
        return f"SemanticMap({self._entries!r})"


ControlDepthMap = dict  # "signal#frame" -> depth (1 = outermost condition)


@dataclass(frozen=True)
class EncodedDesign:
    formula: CnfFormula
    semantic_map: SemanticMap
    control_depth: dict[str, int]
    frame_literals: dict[str, list[Bit]]
    bound: int

    def __iter__(self):
        # allows ``formula, smap, depth = bitblast_tseytin(u)``
        return iter((self.formula, self.semantic_map, self.control_depth))


def control_depths(unrolled: UnrolledDesign) -> dict[str, int]:
    """Minimum ite-nesting depth at which each frame signal is read as a condition."""
    depth: dict[str, int] = {}

    def visit(e: Expr, level: int) -> None:
        if isinstance(e, Ite):
            for r in _cond_refs(e.cond):
                depth[r] = min(depth.get(r, level), level)
            for c in children(e):
                visit(c, level + 1)
        else:
            for c in children(e):
                visit(c, level)

    for _, expr in unrolled.constraints:
        visit(expr, 1)
    return depth


def _cond_refs(e: Expr) -> set[str]:
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Ref):
            out.add(node.name)
        stack.extend(children(node))
    return out


def bitblast_tseytin(unrolled: UnrolledDesign) -> EncodedDesign:
    """Encode an unrolled design as CNF with its semantic and control-depth maps.

    Frame variables are numbered first (frame by frame, inputs then
    registers, LSB first); gate outputs follow.  Input bits that are neither
    observable nor read by any constraint get no literal.
    """
    module = unrolled.module
    depth = control_depths(unrolled)
    used: set[str] = set(depth)
    for _, expr in unrolled.constraints:
        stack = [expr]
        while stack:
            node = stack.pop()
            if isinstance(node, Ref):
                used.add(node.name)
            stack.extend(children(node))
    observable = set(module.observable)
    input_names = {n for n, _ in module.inputs}

    gates = GateBuilder()
    env: dict[str, list[Bit]] = {}
    for name, width in unrolled.variables:
        base, _ = split_frame_name(name)
        if base in input_names and base not in observable and name not in used:
            continue
        env[name] = [gates.fresh() for _ in range(width)]

    blaster = BitBlaster(gates, env)
    for target, const in unrolled.init:
        for lit, b in zip(env[target], blaster.bits(const)):
            gates.assert_equal(lit, b)
    for target, expr in unrolled.constraints:
        bits = blaster.bits(expr)
        if len(bits) != len(env[target]):
            raise WidthError(f"constraint for {target} has width {len(bits)}")
        for lit, b in zip(env[target], bits):
            gates.assert_equal(lit, b)

    smap = SemanticMap()
    for name, lits in env.items():
        base, frame = split_frame_name(name)
        if base in observable or name in depth:
            for k, lit in enumerate(lits):
                smap.add(bit_key(base, frame, k), lit)

    formula = CnfFormula(gates.num_variables, tuple(gates.clauses))
    return EncodedDesign(formula, smap, depth, env, unrolled.bound)
