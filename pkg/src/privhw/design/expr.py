"""Word-level bit-vector expressions (a small QF_BV fragment).

Expressions are immutable trees.  Every node knows its bit width; widths are
checked when the node is built, so a well-formed tree never needs re-checking.
The textual form is an SMT-LIB flavoured s-expression::

    (ite (= reset #b1) #b000 (bvadd counter #b001))
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

from ..errors import DesignError, WidthError


@dataclass(frozen=True)
class Const:
    width: int
    value: int

    def __post_init__(self) -> None:
        if self.width < 1:
            raise WidthError("constant width must be positive")
        if not 0 <= self.value < (1 << self.width):
            raise WidthError(f"constant {self.value} does not fit in {self.width} bits")


@dataclass(frozen=True)
class Ref:
    name: str
    width: int


@dataclass(frozen=True)
class Ite:
    cond: Expr
    then: Expr
    other: Expr

    def __post_init__(self) -> None:
        if self.cond.width != 1:
            raise WidthError(f"ite condition has width {self.cond.width}")
        if self.then.width != self.other.width:
            raise WidthError(f"ite branches differ: {self.then.width} vs {self.other.width}")

    @property
    def width(self) -> int:
        return self.then.width


@dataclass(frozen=True)
class Eq:
    a: Expr
    b: Expr

    def __post_init__(self) -> None:
        if self.a.width != self.b.width:
            raise WidthError(f"= operands differ: {self.a.width} vs {self.b.width}")

    width = 1


@dataclass(frozen=True)
class BvAdd:
    a: Expr
    b: Expr

    def __post_init__(self) -> None:
        if self.a.width != self.b.width:
            raise WidthError(f"bvadd operands differ: {self.a.width} vs {self.b.width}")

    @property
    def width(self) -> int:
        return self.a.width


@dataclass(frozen=True)
class Extract:
    hi: int
    lo: int
    a: Expr

    def __post_init__(self) -> None:
        if not 0 <= self.lo <= self.hi < self.a.width:
            raise WidthError(f"extract [{self.hi}:{self.lo}] out of range for width {self.a.width}")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Not:
    a: Expr

    @property
    def width(self) -> int:
        return self.a.width


@dataclass(frozen=True)
class _Bitwise:
    a: Expr
    b: Expr

    def __post_init__(self) -> None:
        if self.a.width != self.b.width:
            raise WidthError(
                f"{type(self).__name__.lower()} operands differ: {self.a.width} vs {self.b.width}"
            )

    @property
    def width(self) -> int:
        return self.a.width


class And(_Bitwise):
    pass


class Or(_Bitwise):
    pass


class Xor(_Bitwise):
    pass


Expr = Union[Const, Ref, Ite, Eq, BvAdd, Extract, Not, And, Or, Xor]

TRUE = Const(1, 1)
FALSE = Const(1, 0)


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Const, Ref)):
        return ()
    if isinstance(e, Ite):
        return (e.cond, e.then, e.other)
    if isinstance(e, (Extract, Not)):
        return (e.a,)
    return (e.a, e.b)


def walk(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(children(node))


def refs(e: Expr) -> set[str]:
    """Names of all signals read by ``e``."""
    return {node.name for node in walk(e) if isinstance(node, Ref)}


def rename(e: Expr, fn: Callable[[str], str]) -> Expr:
    """Copy of ``e`` with every signal reference renamed through ``fn``."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Ref):
        return Ref(fn(e.name), e.width)
    if isinstance(e, Ite):
        return Ite(rename(e.cond, fn), rename(e.then, fn), rename(e.other, fn))
    if isinstance(e, Extract):
        return Extract(e.hi, e.lo, rename(e.a, fn))
    if isinstance(e, Not):
        return Not(rename(e.a, fn))
    return type(e)(rename(e.a, fn), rename(e.b, fn))


def evaluate(e: Expr, env: Mapping[str, int]) -> int:
    """Concrete value of ``e`` given integer values for every referenced signal."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Ref):
        try:
            return env[e.name] & ((1 << e.width) - 1)
        except KeyError:
            raise DesignError(f"no value for signal {e.name!r}") from None
    if isinstance(e, Ite):
        return evaluate(e.then if evaluate(e.cond, env) else e.other, env)
    if isinstance(e, Eq):
        return int(evaluate(e.a, env) == evaluate(e.b, env))
    if isinstance(e, BvAdd):
        return (evaluate(e.a, env) + evaluate(e.b, env)) & ((1 << e.width) - 1)
    if isinstance(e, Extract):
        return (evaluate(e.a, env) >> e.lo) & ((1 << e.width) - 1)
    if isinstance(e, Not):
        return ~evaluate(e.a, env) & ((1 << e.width) - 1)
    a, b = evaluate(e.a, env), evaluate(e.b, env)
    if isinstance(e, And):
        return a & b
    if isinstance(e, Or):
        return a | b
    return a ^ b


# -- s-expression syntax --------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\()|(\))|(\|[^|]*\|)|([^\s()|]+))")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise DesignError(f"cannot tokenize near {text[pos:pos + 20]!r}")
        out.append(next(g for g in m.groups() if g is not None))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


def _read(tokens: list[str], i: int) -> tuple[object, int]:
    if i >= len(tokens):
        raise DesignError("unexpected end of expression")
    tok = tokens[i]
    if tok == "(":
        items = []
        i += 1
        while i < len(tokens) and tokens[i] != ")":
            item, i = _read(tokens, i)
            items.append(item)
        if i >= len(tokens):
            raise DesignError("unbalanced parentheses")
        return items, i + 1
    if tok == ")":
        raise DesignError("unexpected ')'")
    return tok, i + 1


_BINARY = {
    "bvadd": BvAdd,
    "bvand": And,
    "and": And,
    "bvor": Or,
    "or": Or,
    "bvxor": Xor,
    "xor": Xor,
}


def _const_atom(tok: str) -> Const | None:
    if tok.startswith("#b"):
        bits = tok[2:]
        if not bits or set(bits) - {"0", "1"}:
            raise DesignError(f"bad binary constant {tok!r}")
        return Const(len(bits), int(bits, 2))
    if tok.startswith("#x"):
        digits = tok[2:]
        try:
            return Const(4 * len(digits), int(digits, 16))
        except ValueError:
            raise DesignError(f"bad hex constant {tok!r}") from None
    if tok == "true":
        return TRUE
    if tok == "false":
        return FALSE
    return None


def parse_expr(text: str, widths: Mapping[str, int]) -> Expr:
    """Parse an s-expression; ``widths`` gives the width of every signal name."""
    tokens = _tokenize(text)
    tree, end = _read(tokens, 0)
    if end != len(tokens):
        raise DesignError(f"trailing tokens in {text!r}")
    return _build(tree, widths)


def _build(tree: object, widths: Mapping[str, int]) -> Expr:
    if isinstance(tree, str):
        const = _const_atom(tree)
        if const is not None:
            return const
        name = tree[1:-1] if tree.startswith("|") else tree
        if name not in widths:
            raise DesignError(f"unknown signal {name!r}")
        return Ref(name, widths[name])
    assert isinstance(tree, list)
    if not tree:
        raise DesignError("empty application")
    head, args = tree[0], tree[1:]
    if head == "_":
        # (_ bvN w)
        if len(args) != 2 or not str(args[0]).startswith("bv"):
            raise DesignError(f"unsupported indexed term {tree!r}")
        return Const(int(args[1]), int(str(args[0])[2:]))
    if isinstance(head, list):
        if len(head) == 4 and head[0] == "_" and head[1] == "extract" and len(args) == 1:
            return Extract(int(head[2]), int(head[3]), _build(args[0], widths))
        raise DesignError(f"unsupported operator {head!r}")
    sub = [_build(a, widths) for a in args]
    if head == "ite":
        _arity(head, sub, 3)
        return Ite(*sub)
    if head == "=":
        _arity(head, sub, 2)
        return Eq(*sub)
    if head == "distinct":
        _arity(head, sub, 2)
        return Not(Eq(*sub))
    if head in ("not", "bvnot"):
        _arity(head, sub, 1)
        return Not(sub[0])
    if head == "=>":
        _arity(head, sub, 2)
        return Or(Not(sub[0]), sub[1])
    if head in _BINARY:
        if len(sub) < 2:
            raise DesignError(f"{head} needs at least two operands")
        node = sub[0]
        for nxt in sub[1:]:
            node = _BINARY[head](node, nxt)
        return node
    raise DesignError(f"unsupported operator {head!r}")


def _arity(head: str, sub: list, k: int) -> None:
    if len(sub) != k:
        raise DesignError(f"{head} takes {k} operands, got {len(sub)}")


def to_sexpr(e: Expr) -> str:
    if isinstance(e, Const):
        return "#b" + format(e.value, f"0{e.width}b")
    if isinstance(e, Ref):
        return e.name if re.fullmatch(r"[A-Za-z_][\w.$]*", e.name) else f"|{e.name}|"
    if isinstance(e, Ite):
        return f"(ite {to_sexpr(e.cond)} {to_sexpr(e.then)} {to_sexpr(e.other)})"
    if isinstance(e, Eq):
        return f"(= {to_sexpr(e.a)} {to_sexpr(e.b)})"
    if isinstance(e, Extract):
        return f"((_ extract {e.hi} {e.lo}) {to_sexpr(e.a)})"
    if isinstance(e, Not):
        return f"(bvnot {to_sexpr(e.a)})"
    op = {BvAdd: "bvadd", And: "bvand", Or: "bvor", Xor: "bvxor"}[type(e)]
    return f"({op} {to_sexpr(e.a)} {to_sexpr(e.b)})"
