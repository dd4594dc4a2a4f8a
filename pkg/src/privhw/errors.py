"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class PrivHWError(Exception):
    """Base class for every error raised by this package."""


class FormulaError(PrivHWError):
    """A CNF formula or clause violates its invariants."""


class EncodingError(FormulaError):
    """A formula cannot be encoded as a clause matrix."""


class MalformedMatrixError(FormulaError):
    """A clause matrix has both polarity bits set outside padding columns."""


class NamespaceError(FormulaError):
    """Variable ranges of two formulas collide."""


class DimacsError(FormulaError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DesignError(PrivHWError):
    """Malformed design IR (unknown signal, bad width, cycle, ...)."""


class WidthError(DesignError):
    """Operand widths are inconsistent."""


class BoundError(DesignError):
    pass


class MappingError(DesignError):
    """A signal bit has no literal in the semantic map."""


class PropertyError(PrivHWError):
    pass


class ProtocolError(PrivHWError):
    """Peer misbehaved or the message stream is out of sync; the session must abort."""


class ProtocolAbort(ProtocolError):
    """The peer sent an ABORT frame."""


class TripleExhausted(PrivHWError):
    """The multiplication-triple pool ran dry and refill is not configured."""


class PortfolioError(PrivHWError):
    pass


class LedgerError(PrivHWError):
    pass


class RecordNotFound(LedgerError):
    pass


class VerificationFailure(LedgerError):
    """A stored record's signature or address binding does not verify."""

    def __init__(self, record_id: bytes, reason: str) -> None:
        self.record_id = record_id
        super().__init__(f"record {record_id.hex()}: {reason}")
