"""Control-flow guided branching order."""

from __future__ import annotations

from typing import Mapping

from ..errors import BoundError, MappingError
from .blast import SemanticMap
from .module import split_frame_name


def build_heuristic_order(
    depth: Mapping[str, int], smap: SemanticMap, bound: int
) -> list[int]:
    """Control literals ordered by ascending branching priority.

    The last element is branched on first.  Later frames dominate earlier
    ones; within a frame, outer (smaller depth) conditions dominate inner
    ones; remaining ties are listed by ascending literal index.
    """
    keyed = []
    for name, d in depth.items():
        signal, frame = split_frame_name(name)
        if not 1 <= frame <= bound:
            raise BoundError(f"{name} lies outside bound {bound}")
        if d < 1:
            raise MappingError(f"depth of {name} must be >= 1")
        lits = smap.signal_bits(signal, frame)
        if not lits:
            raise MappingError(f"control signal {name} has no literal in the semantic map")
        keyed.extend(((frame, -d, lit), lit) for lit in lits)
    keyed.sort()
    order = [lit for _, lit in keyed]
    if len(set(order)) != len(order):
        raise MappingError("control literals are not distinct")
    return order
