"""CNF formulas and the (P, N) clause-matrix encoding.

Literals are signed integers in the DIMACS convention: ``v`` is the positive
literal of variable ``v`` (1-based) and ``-v`` its negation.  A clause matrix
stores one row per variable and one column per clause:

    P[i, j] = 1  iff  x_{i+1} occurs positively in clause j
    N[i, j] = 1  iff  x_{i+1} occurs negatively in clause j

Padding columns (used by the portfolio to equalise clause counts) carry a
tautology on a single reserved variable, so both bits are set there.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimacsError,
    EncodingError,
    FormulaError,
    MalformedMatrixError,
    NamespaceError,
)

Clause = tuple[int, ...]

MATRIX_MAGIC = b"BMPN"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sHIII")


def _check_clause(clause: Sequence[int], n: int) -> Clause:
    seen: set[int] = set()
    for lit in clause:
        if not isinstance(lit, (int, np.integer)) or lit == 0:
            raise FormulaError(f"invalid literal {lit!r}")
        v = abs(int(lit))
        if v > n:
            raise FormulaError(f"literal {lit} exceeds variable count {n}")
        if lit in seen:
            raise FormulaError(f"duplicate literal {lit} in clause {tuple(clause)}")
        if -lit in seen:
            raise FormulaError(f"tautological clause {tuple(clause)}")
        seen.add(int(lit))
    return tuple(int(x) for x in clause)


@dataclass(frozen=True)
class CnfFormula:
    """A conjunction of clauses over variables ``1..num_variables``."""

    num_variables: int
    clauses: tuple[Clause, ...] = ()

    def __post_init__(self) -> None:
        if self.num_variables < 0:
            raise FormulaError("negative variable count")
        checked = tuple(_check_clause(c, self.num_variables) for c in self.clauses)
        object.__setattr__(self, "clauses", checked)

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def canonical(self) -> CnfFormula:
        """Same formula with every clause's literals sorted by variable index."""
        return CnfFormula(
            self.num_variables,
            tuple(tuple(sorted(c, key=abs)) for c in self.clauses),
        )

    def evaluate(self, assignment: Sequence[bool]) -> bool:
        """Truth value under a total assignment (``assignment[v-1]`` is x_v)."""
        return all(
            any(assignment[abs(l) - 1] == (l > 0) for l in c) for c in self.clauses
        )

    def __and__(self, other: CnfFormula) -> CnfFormula:
        return CnfFormula(
            max(self.num_variables, other.num_variables),
            self.clauses + other.clauses,
        )


@dataclass(frozen=True, eq=False)
class ClauseMatrix:
    """Pair of n x m bit matrices; rows are variables, columns clauses."""

    P: np.ndarray
    N: np.ndarray
    padding_columns: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        P = np.ascontiguousarray(self.P, dtype=np.uint8)
        N = np.ascontiguousarray(self.N, dtype=np.uint8)
        if P.ndim != 2 or P.shape != N.shape:
            raise MalformedMatrixError(f"shape mismatch {P.shape} vs {N.shape}")
        if np.any(P > 1) or np.any(N > 1):
            raise MalformedMatrixError("matrix entries must be bits")
        P.setflags(write=False)
        N.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "padding_columns", tuple(sorted(self.padding_columns)))

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.P.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClauseMatrix):
            return NotImplemented
        return (
            self.P.shape == other.P.shape
            and bool(np.array_equal(self.P, other.P))
            and bool(np.array_equal(self.N, other.N))
            and self.padding_columns == other.padding_columns
        )

    def __hash__(self) -> int:
        return hash((self.P.tobytes(), self.N.tobytes(), self.P.shape, self.padding_columns))

    # -- binary serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        k = len(self.padding_columns)
        if self.padding_columns != tuple(range(self.m - k, self.m)):
            raise EncodingError("binary format requires trailing padding columns")
        head = _MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, self.n, self.m, k)
        return head + pack_rows(self.P) + pack_rows(self.N)

    @classmethod
    def from_bytes(cls, data: bytes) -> ClauseMatrix:
        if len(data) < _MATRIX_HEADER.size:
            raise MalformedMatrixError("truncated matrix header")
        magic, version, n, m, k = _MATRIX_HEADER.unpack_from(data)
        if magic != MATRIX_MAGIC:
            raise MalformedMatrixError(f"bad magic {magic!r}")
        if version != MATRIX_VERSION:
            raise MalformedMatrixError(f"unsupported matrix version {version}")
        if k > m:
            raise MalformedMatrixError("padding count exceeds clause count")
        size = packed_size(n, m)
        body = data[_MATRIX_HEADER.size :]
        if len(body) != 2 * size:
            raise MalformedMatrixError(f"expected {2 * size} body bytes, got {len(body)}")
        P = unpack_rows(body[:size], n, m)
        N = unpack_rows(body[size:], n, m)
        return cls(P, N, tuple(range(m - k, m)))


def _words_per_row(m: int) -> int:
    return (m + 63) // 64


def packed_size(n: int, m: int) -> int:
    """Bytes used by one n x m bit matrix packed as 64-bit little-endian words."""
    return n * _words_per_row(m) * 8


def pack_rows(bits: np.ndarray) -> bytes:
    n, m = bits.shape
    padded = np.zeros((n, _words_per_row(m) * 64), dtype=np.uint8)
    padded[:, :m] = bits
    return np.packbits(padded, axis=1, bitorder="little").tobytes()


def unpack_rows(data: bytes, n: int, m: int) -> np.ndarray:
    width = _words_per_row(m) * 64
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, width // 8)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :m].copy()


def encode_cnf(formula: CnfFormula) -> ClauseMatrix:
    """Encode ``formula`` as its (P, N) clause matrix."""
    n, m = formula.num_variables, formula.num_clauses
    P = np.zeros((n, m), dtype=np.uint8)
    N = np.zeros((n, m), dtype=np.uint8)
    for j, clause in enumerate(formula.clauses):
        for lit in clause:
            v = abs(lit)
            if not 1 <= v <= n:
                raise EncodingError(f"variable {v} out of range 1..{n}")
            if lit > 0:
                P[v - 1, j] = 1
            else:
                N[v - 1, j] = 1
    return ClauseMatrix(P, N)


def decode_matrix(mat: ClauseMatrix) -> CnfFormula:
    """Inverse of :func:`encode_cnf`; declared padding columns are skipped."""
    pad = set(mat.padding_columns)
    both = mat.P & mat.N
    clauses = []
    for j in range(mat.m):
        if j in pad:
            continue
        if both[:, j].any():
            raise MalformedMatrixError(f"column {j} sets both polarities of a variable")
        pos = mat.P[:, j]
        neg = mat.N[:, j]
        clause = []
        for i in np.flatnonzero(pos | neg):
            clause.append(int(i) + 1 if pos[i] else -(int(i) + 1))
        clauses.append(tuple(clause))
    return CnfFormula(mat.n, tuple(clauses))


def conjoin(
    design: ClauseMatrix, prop: ClauseMatrix, *, aux_base: int | None = None
) -> ClauseMatrix:
    """Columns of ``design`` followed by the columns of ``prop``.

    ``aux_base`` is the first auxiliary variable used by the property; it must
    lie above every design variable.
    """
    if aux_base is not None and aux_base <= design.n:
        raise NamespaceError(
            f"property auxiliaries start at {aux_base} but design uses 1..{design.n}"
        )
    n = max(design.n, prop.n)
    P = np.zeros((n, design.m + prop.m), dtype=np.uint8)
    N = np.zeros_like(P)
    P[: design.n, : design.m] = design.P
    N[: design.n, : design.m] = design.N
    P[: prop.n, design.m :] = prop.P
    N[: prop.n, design.m :] = prop.N
    pad = design.padding_columns + tuple(design.m + j for j in prop.padding_columns)
    return ClauseMatrix(P, N, pad)


# -- DIMACS --------------------------------------------------------------------


def parse_dimacs(text: str) -> CnfFormula:
    """Parse a DIMACS CNF document.  Errors carry the offending line number."""
    header: tuple[int, int] | None = None
    clauses: list[Clause] = []
    current: list[int] = []
    current_line = 0
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            if header is not None:
                raise DimacsError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise DimacsError(f"malformed header {line!r}", lineno) from None
            if header[0] < 0 or header[1] < 0:
                raise DimacsError("negative header counts", lineno)
            continue
        if header is None:
            raise DimacsError("clause before header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"bad token {tok!r}", lineno) from None
            if lit == 0:
                try:
                    clauses.append(_check_clause(current, header[0]))
                except FormulaError as exc:
                    raise DimacsError(str(exc), current_line or lineno) from None
                current = []
                continue
            if abs(lit) > header[0]:
                raise DimacsError(f"literal {lit} exceeds {header[0]} variables", lineno)
            if not current:
                current_line = lineno
            current.append(lit)
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        raise DimacsError("last clause is not 0-terminated", current_line)
    if len(clauses) != header[1]:
        raise DimacsError(f"header declares {header[1]} clauses, found {len(clauses)}")
    return CnfFormula(header[0], tuple(clauses))


def emit_dimacs(formula: CnfFormula, comments: Iterable[str] = ()) -> str:
    out = [f"c {c}" for c in comments]
    out.append(f"p cnf {formula.num_variables} {formula.num_clauses}")
    out.extend(" ".join(str(l) for l in c) + (" 0" if c else "0") for c in formula.clauses)
    return "\n".join(out) + "\n"
