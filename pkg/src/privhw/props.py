"""Bounded temporal properties (OI / NOI / Concat) compiled to CNF.

Operands are boolean expressions over observable signals.  The left operand
is evaluated at the base frame ``i``; the right operand at ``i`` (OI),
``i + 1`` (NOI) or ``i + n`` (Concat with offset ``n``).  OI and NOI accept
an extra ``offset`` delay, which models ``a |-> ##k b`` as OI with offset k.

Assert properties are negated before encoding, so a satisfying assignment of
``design AND compiled`` is a counterexample; cover properties are encoded as
is, so a satisfying assignment is a witness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .cnf import ClauseMatrix, CnfFormula, encode_cnf
from .design.blast import GateBuilder, SemanticMap, parse_bit_key
from .design.expr import BvAdd, Const, Eq, Expr, Extract, Ite, Not, Ref, And, Or, Xor, parse_expr
from .errors import MappingError, PropertyError

KINDS = ("assert", "cover")
OPERATORS = ("OI", "NOI", "Concat")


@dataclass(frozen=True)
class PropertySpec:
    kind: str
    op: str
    frame: int
    lhs: Expr
    rhs: Expr
    offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PropertyError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.op not in OPERATORS:
            raise PropertyError(f"operator must be one of {OPERATORS}, got {self.op!r}")
        if self.frame < 1:
            raise PropertyError("base frame must be >= 1")
        if self.op == "Concat" and self.offset < 1:
            raise PropertyError("Concat needs an offset >= 1")
        if self.offset < 0:
            raise PropertyError("offset must be non-negative")
        for side in (self.lhs, self.rhs):
            if side.width != 1:
                raise PropertyError("property operands must be 1-bit boolean expressions")

    @property
    def rhs_frame(self) -> int:
        shift = {"OI": 0, "NOI": 1, "Concat": 0}[self.op]
        return self.frame + shift + self.offset

    @property
    def signals(self) -> set[str]:
        from .design.expr import refs

        return refs(self.lhs) | refs(self.rhs)

    @classmethod
    def from_json(cls, doc: Mapping | str, widths: Mapping[str, int]) -> PropertySpec:
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(
            kind=doc["kind"],
            op=doc["op"],
            frame=int(doc["frame"]),
            lhs=parse_expr(doc["lhs"], widths),
            rhs=parse_expr(doc["rhs"], widths),
            offset=int(doc.get("offset", 0)),
        )


def signal_widths(smap: SemanticMap) -> dict[str, int]:
    widths: dict[str, int] = {}
    for key in smap:
        sig, _, bit = parse_bit_key(key)
        widths[sig] = max(widths.get(sig, 0), bit + 1)
    return widths


def max_frame(smap: SemanticMap) -> int:
    return max((parse_bit_key(k)[1] for k in smap), default=0)


# Boolean formulas in negation normal form.
#   int                    literal
#   bool                   constant
#   ("and", (f, ...))      conjunction
#   ("or",  (f, ...))      disjunction
Formula = Union[int, bool, tuple]


def _and(*fs: Formula) -> Formula:
    out: list[Formula] = []
    for f in fs:
        if f is True:
            continue
        if f is False:
            return False
        out.extend(f[1] if isinstance(f, tuple) and f[0] == "and" else [f])
    if not out:
        return True
    return out[0] if len(out) == 1 else ("and", tuple(out))


def _or(*fs: Formula) -> Formula:
    out: list[Formula] = []
    for f in fs:
        if f is False:
            continue
        if f is True:
            return True
        out.extend(f[1] if isinstance(f, tuple) and f[0] == "or" else [f])
    if not out:
        return False
    return out[0] if len(out) == 1 else ("or", tuple(out))


def _neg(f: Formula) -> Formula:
    """Negation pushed down to the literals (stays in NNF)."""
    if type(f) is bool:
        return not f
    if isinstance(f, int):
        return -f
    op, parts = f
    negated = [_neg(p) for p in parts]
    return _or(*negated) if op == "and" else _and(*negated)


def _xor(a: Formula, b: Formula) -> Formula:
    return _or(_and(a, _neg(b)), _and(_neg(a), b))


class _Lowering:
    def __init__(self, smap: SemanticMap, frame: int) -> None:
        self.smap = smap
        self.frame = frame

    def bits(self, e: Expr) -> list[Formula]:
        if isinstance(e, Const):
            return [bool((e.value >> k) & 1) for k in range(e.width)]
        if isinstance(e, Ref):
            return [self.smap.literal(e.name, self.frame, k) for k in range(e.width)]
        if isinstance(e, Extract):
            return self.bits(e.a)[e.lo : e.hi + 1]
        if isinstance(e, Not):
            return [_neg(b) for b in self.bits(e.a)]
        if isinstance(e, Eq):
            return [_and(*(_neg(_xor(x, y)) for x, y in zip(self.bits(e.a), self.bits(e.b))))]
        if isinstance(e, Ite):
            c = self.bits(e.cond)[0]
            return [_or(_and(c, t), _and(_neg(c), f)) for t, f in zip(self.bits(e.then), self.bits(e.other))]
        if isinstance(e, BvAdd):
            out, carry = [], False
            for x, y in zip(self.bits(e.a), self.bits(e.b)):
                half = _xor(x, y)
                out.append(_xor(half, carry))
                carry = _or(_and(x, y), _and(carry, half))
            return out
        if isinstance(e, (And, Or, Xor)):
            op = {And: _and, Or: _or, Xor: _xor}[type(e)]
            return [op(x, y) for x, y in zip(self.bits(e.a), self.bits(e.b))]
        raise PropertyError(f"{type(e).__name__} is not supported in properties")


@dataclass(frozen=True)
class CompiledProperty:
    formula: CnfFormula
    aux_base: int
    num_aux: int

    def matrix(self, num_variables: int | None = None) -> ClauseMatrix:
        """Clause matrix, optionally widened to ``num_variables`` rows."""
        mat = encode_cnf(self.formula)
        if num_variables is None or num_variables == mat.n:
            return mat
        if num_variables < mat.n:
            raise PropertyError("cannot shrink property matrix")
        P = np.zeros((num_variables, mat.m), dtype=np.uint8)
        N = np.zeros_like(P)
        P[: mat.n] = mat.P
        N[: mat.n] = mat.N
        return ClauseMatrix(P, N)


def property_formula(spec: PropertySpec, smap: SemanticMap) -> Formula:
    """The NNF formula that the compiled CNF must make satisfiable."""
    try:
        a = _Lowering(smap, spec.frame).bits(spec.lhs)[0]
        b = _Lowering(smap, spec.rhs_frame).bits(spec.rhs)[0]
    except MappingError as exc:
        raise PropertyError(f"unresolvable signal reference: {exc}") from None
    if spec.op == "Concat":
        template = _and(a, b)
    else:
        template = _or(_neg(a), b)
    return _neg(template) if spec.kind == "assert" else template


def compile_property(
    spec: PropertySpec, smap: SemanticMap, aux_base: int, bound: int | None = None
) -> CompiledProperty:
    """Encode ``spec`` over the literals of ``smap``; auxiliaries start at ``aux_base``."""
    if aux_base <= smap.max_literal():
        raise PropertyError(
            f"aux_base {aux_base} overlaps semantic-map literals (max {smap.max_literal()})"
        )
    bound = max_frame(smap) if bound is None else bound
    if spec.rhs_frame > bound or spec.frame > bound:
        raise PropertyError(f"property reaches frame {spec.rhs_frame} beyond bound {bound}")
    f = property_formula(spec, smap)
    gates = GateBuilder(first_free=aux_base)
    conjuncts = f[1] if isinstance(f, tuple) and f[0] == "and" else (f,)
    used = 0
    for c in conjuncts:
        if type(c) is bool:
            if not c:
                gates.clauses.append(())
            continue
        root = c if isinstance(c, int) else _tseytin(gates, c)
        gates.assert_bit(root)
        if isinstance(c, int):
            used = max(used, abs(c))
    for clause in gates.clauses:
        for lit in clause:
            used = max(used, abs(lit))
    num_aux = gates.next_var - aux_base
    n = max(used, aux_base - 1 + num_aux)
    return CompiledProperty(CnfFormula(n, tuple(gates.clauses)), aux_base, num_aux)


def _tseytin(g: GateBuilder, f: Formula):
    if type(f) is bool or isinstance(f, int):
        return f
    op, parts = f
    kids = [_tseytin(g, p) for p in parts]
    return g.and_(*kids) if op == "and" else g.or_(*kids)
