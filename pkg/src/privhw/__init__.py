"""Private verification of hardware IP: oblivious design selection, two-party
SAT-based bounded model checking and a signed provenance ledger."""

from .cnf import ClauseMatrix, CnfFormula, decode_matrix, encode_cnf
from .solver import GiantStepStats, Result, solve, solve_matrix

__version__ = "0.1.0"

__all__ = [
    "ClauseMatrix",
    "CnfFormula",
    "GiantStepStats",
    "Result",
    "decode_matrix",
    "encode_cnf",
    "solve",
    "solve_matrix",
]
