"""Design portfolios: uniform padding, per-session masking, OT payloads.

All designs in a portfolio are padded to one public shape ``(n, m)``.  Extra
variable rows are zero.  Extra clause columns are tautologies on a single
reserved padding variable (the last row) so they never constrain anything.
Each session XORs every padded design with one fresh random mask pair; the
user obtains one masked design through OT and the vendor keeps the masks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnf import ClauseMatrix, pack_rows, packed_size, unpack_rows
from .design.blast import SemanticMap
from .errors import PortfolioError

_FILE_HEADER = struct.Struct("<4sHIIIII")
_FILE_MAGIC = b"BMPF"
_PAYLOAD_HEADER = struct.Struct("<III")


@dataclass(frozen=True)
class DesignEntry:
    """One vendor design before padding."""

    matrix: ClauseMatrix
    heuristic: list[int]
    semantic_map: SemanticMap = field(default_factory=SemanticMap)
    description: str = ""
    design_id: bytes = b"\0" * 32


@dataclass(frozen=True)
class PaddedDesign:
    design_id: bytes
    P: np.ndarray
    N: np.ndarray
    heuristic: list[int]
    num_variables: int
    padding_columns: int

    def matrix(self) -> ClauseMatrix:
        m = self.P.shape[1]
        return ClauseMatrix(self.P, self.N, tuple(range(m - self.padding_columns, m)))


@dataclass(frozen=True)
class MaskPair:
    R_P: np.ndarray
    R_N: np.ndarray
    session_id: bytes


@dataclass(frozen=True)
class MaskedEntry:
    design_id: bytes
    P: np.ndarray
    N: np.ndarray
    heuristic: list[int]
    num_variables: int
    padding_columns: int


@dataclass(frozen=True)
class MaskedPortfolio:
    entries: list[MaskedEntry]
    n: int
    m: int
    bound: int
    h_max: int

    def ot_messages(self, pad_to_power_of_two: bool = True, rng=None) -> list[bytes]:
        msgs = [encode_payload(e, self.h_max) for e in self.entries]
        if pad_to_power_of_two:
            target = 1 << (len(msgs) - 1).bit_length()
            rng = rng or np.random.default_rng()
            msgs += [rng.bytes(len(msgs[0])) for _ in range(target - len(msgs))]
        return msgs


def padded_shape(matrices: list[ClauseMatrix]) -> tuple[int, int, bool]:
    """Public shape ``(n, m)`` and whether the padding row is present."""
    n_max = max(mat.n for mat in matrices)
    m_max = max(mat.m for mat in matrices)
    needs_row = any(mat.m < m_max for mat in matrices)
    return n_max + int(needs_row), m_max, needs_row


def pad_matrix(mat: ClauseMatrix, n: int, m: int, pad_row: bool) -> ClauseMatrix:
    if mat.n > n - int(pad_row) or mat.m > m:
        raise PortfolioError(f"{mat.n}x{mat.m} design does not fit {n}x{m}")
    extra = m - mat.m
    if extra and not pad_row:
        raise PortfolioError("padding columns need the reserved padding row")
    P = np.zeros((n, m), dtype=np.uint8)
    N = np.zeros((n, m), dtype=np.uint8)
    P[: mat.n, : mat.m] = mat.P
    N[: mat.n, : mat.m] = mat.N
    if extra:
        P[n - 1, mat.m :] = 1
        N[n - 1, mat.m :] = 1
    return ClauseMatrix(P, N, padding_columns=tuple(range(mat.m, m)))


def strip_padding(mat: ClauseMatrix, num_variables: int | None = None) -> ClauseMatrix:
    """Drop padding columns and, optionally, rows beyond ``num_variables``."""
    keep = [j for j in range(mat.m) if j not in set(mat.padding_columns)]
    n = mat.n if num_variables is None else num_variables
    return ClauseMatrix(mat.P[:n, keep], mat.N[:n, keep])


@dataclass
class Portfolio:
    """Vendor-secret plaintext portfolio (padded, unmasked)."""

    designs: list[PaddedDesign]
    n: int
    m: int
    bound: int
    h_max: int
    catalog: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.designs)

    def mask(self, session_id: bytes, rng: np.random.Generator | None = None) -> tuple[MaskedPortfolio, MaskPair]:
        """Fresh mask pair for one session and the masked portfolio it produces."""
        rng = rng or np.random.default_rng()
        R_P = rng.integers(0, 2, size=(self.n, self.m), dtype=np.uint8)
        R_N = rng.integers(0, 2, size=(self.n, self.m), dtype=np.uint8)
        entries = [
            MaskedEntry(d.design_id, d.P ^ R_P, d.N ^ R_N, d.heuristic, d.num_variables, d.padding_columns)
            for d in self.designs
        ]
        return MaskedPortfolio(entries, self.n, self.m, self.bound, self.h_max), MaskPair(R_P, R_N, session_id)

    # -- files -----------------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [_FILE_HEADER.pack(_FILE_MAGIC, 1, self.size, self.n, self.m, self.bound, self.h_max)]
        for d in self.designs:
            out.append(d.design_id)
            out.append(struct.pack("<II", d.num_variables, d.padding_columns))
            out.append(pack_rows(d.P) + pack_rows(d.N))
            out.append(np.array(d.heuristic + [0] * (self.h_max - len(d.heuristic)), dtype="<i4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, catalog: dict | None = None) -> Portfolio:
        if len(data) < _FILE_HEADER.size:
            raise PortfolioError("portfolio file too short")
        magic, version, count, n, m, bound, h_max = _FILE_HEADER.unpack_from(data)
        if magic != _FILE_MAGIC or version != 1:
            raise PortfolioError("not a portfolio file")
        off = _FILE_HEADER.size
        rows = packed_size(n, m)
        designs = []
        for _ in range(count):
            design_id = data[off : off + 32]
            nv, pad = struct.unpack_from("<II", data, off + 32)
            off += 40
            P = unpack_rows(data[off : off + rows], n, m)
            N = unpack_rows(data[off + rows : off + 2 * rows], n, m)
            off += 2 * rows
            heu = np.frombuffer(data, "<i4", h_max, off).tolist()
            off += 4 * h_max
            designs.append(PaddedDesign(design_id, P, N, [h for h in heu if h], nv, pad))
        if off != len(data):
            raise PortfolioError("trailing bytes in portfolio file")
        return cls(designs, n, m, bound, h_max, catalog or {})

    def save(self, path: str | Path) -> Path:
        """Write the portfolio and its public ``.catalog.json`` sidecar."""
        path = Path(path)
        path.write_bytes(self.to_bytes())
        catalog_path(path).write_text(json.dumps(self.catalog, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: str | Path) -> Portfolio:
        path = Path(path)
        side = catalog_path(path)
        catalog = json.loads(side.read_text()) if side.exists() else {}
        return cls.from_bytes(path.read_bytes(), catalog)


def catalog_path(path: Path) -> Path:
    return path.with_suffix(".catalog.json")


def make_portfolio(entries: list[DesignEntry], bound: int) -> Portfolio:
    if not entries:
        raise PortfolioError("a portfolio needs at least one design")
    n, m, pad_row = padded_shape([e.matrix for e in entries])
    h_max = max(len(e.heuristic) for e in entries)
    designs = []
    for e in entries:
        padded = pad_matrix(e.matrix, n, m, pad_row)
        if any(not 1 <= h <= e.matrix.n for h in e.heuristic):
            raise PortfolioError("heuristic literal outside the design's variables")
        designs.append(
            PaddedDesign(e.design_id, padded.P, padded.N, list(e.heuristic), e.matrix.n, len(padded.padding_columns))
        )
    catalog = {
        "n": n,
        "m": m,
        "bound": bound,
        "h_max": h_max,
        "designs": [
            {
                "index": k + 1,
                "design_id": e.design_id.hex(),
                "description": e.description,
                "semantic_map": dict(e.semantic_map.items()),
            }
            for k, e in enumerate(entries)
        ],
    }
    return Portfolio(designs, n, m, bound, h_max, catalog)


def build_portfolio(
    designs: list[ClauseMatrix],
    heuristics: list[list[int]],
    bound: int = 1,
    rng: np.random.Generator | None = None,
    session_id: bytes = b"\0" * 16,
) -> tuple[MaskedPortfolio, MaskPair]:
    """Pad and mask a list of designs in one go."""
    if len(designs) != len(heuristics):
        raise PortfolioError("one heuristic order per design is required")
    entries = [DesignEntry(d, list(h)) for d, h in zip(designs, heuristics)]
    return make_portfolio(entries, bound).mask(session_id, rng)


# -- OT payloads -------------------------------------------------------------------


def encode_payload(entry: MaskedEntry, h_max: int) -> bytes:
    heu = entry.heuristic + [0] * (h_max - len(entry.heuristic))
    return (
        _PAYLOAD_HEADER.pack(entry.num_variables, entry.padding_columns, h_max)
        + pack_rows(entry.P)
        + pack_rows(entry.N)
        + np.array(heu, dtype="<i4").tobytes()
    )


@dataclass(frozen=True)
class Selection:
    """What the user holds after OT: a masked design and its heuristic order."""

    P: np.ndarray
    N: np.ndarray
    heuristic: list[int]
    num_variables: int
    padding_columns: int

    def demasked(self, mask: MaskPair) -> ClauseMatrix:
        """Plaintext view (for tests and vendor-side checks only)."""
        m = self.P.shape[1]
        return ClauseMatrix(self.P ^ mask.R_P, self.N ^ mask.R_N, tuple(range(m - self.padding_columns, m)))


def decode_payload(data: bytes, n: int, m: int) -> Selection:
    if len(data) < _PAYLOAD_HEADER.size:
        raise PortfolioError("truncated selection payload")
    nv, pad, h_max = _PAYLOAD_HEADER.unpack_from(data)
    rows = packed_size(n, m)
    if len(data) != _PAYLOAD_HEADER.size + 2 * rows + 4 * h_max:
        raise PortfolioError("selection payload length mismatch")
    off = _PAYLOAD_HEADER.size
    P = unpack_rows(data[off : off + rows], n, m)
    N = unpack_rows(data[off + rows : off + 2 * rows], n, m)
    heu = np.frombuffer(data, "<i4", h_max, off + 2 * rows).tolist()
    return Selection(P, N, heu, nv, pad)
