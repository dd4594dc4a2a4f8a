"""Word-level design IR and its lowering to CNF."""

from .blast import (
    BitBlaster,
    EncodedDesign,
    GateBuilder,
    SemanticMap,
    bit_key,
    bitblast_tseytin,
    control_depths,
    parse_bit_key,
)
from .expr import (
    And,
    BvAdd,
    Const,
    Eq,
    Expr,
    Extract,
    Ite,
    Not,
    Or,
    Ref,
    Xor,
    evaluate,
    parse_expr,
    refs,
    to_sexpr,
)
from .heuristic import build_heuristic_order
from .module import (
    DesignModule,
    StateSignal,
    UnrolledDesign,
    fan_in,
    prune_coi,
    simulate,
    unroll,
)

__all__ = [
    "And",
    "BitBlaster",
    "BvAdd",
    "Const",
    "DesignModule",
    "EncodedDesign",
    "Eq",
    "Expr",
    "Extract",
    "GateBuilder",
    "Ite",
    "Not",
    "Or",
    "Ref",
    "SemanticMap",
    "StateSignal",
    "UnrolledDesign",
    "Xor",
    "bit_key",
    "bitblast_tseytin",
    "build_heuristic_order",
    "control_depths",
    "evaluate",
    "fan_in",
    "parse_bit_key",
    "parse_expr",
    "prune_coi",
    "refs",
    "simulate",
    "to_sexpr",
    "unroll",
]
