"""Glue between the design, property and portfolio stages."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from .cnf import ClauseMatrix, conjoin, encode_cnf
from .design import DesignModule, EncodedDesign, SemanticMap, bitblast_tseytin, build_heuristic_order, prune_coi, unroll
from .portfolio import DesignEntry
from .props import PropertySpec, compile_property, signal_widths


@dataclass
class CompiledDesign:
    module: DesignModule
    bound: int
    encoded: EncodedDesign
    matrix: ClauseMatrix
    heuristic: list[int]

    @property
    def semantic_map(self) -> SemanticMap:
        return self.encoded.semantic_map

    def entry(self, description: str = "") -> DesignEntry:
        return DesignEntry(
            self.matrix, list(self.heuristic), self.semantic_map,
            description or self.module.design_id.hex(), self.module.design_id,
        )


def compile_design(module: DesignModule, bound: int, prune_for: Iterable[str] | None = None) -> CompiledDesign:
    """Unroll, bit-blast and encode ``module``; optionally prune to a cone of influence first."""
    if prune_for is not None:
        module = prune_coi(module, prune_for)
    enc = bitblast_tseytin(unroll(module, bound))
    heuristic = build_heuristic_order(enc.control_depth, enc.semantic_map, bound)
    return CompiledDesign(module, bound, enc, encode_cnf(enc.formula), heuristic)


def property_signals(doc: Mapping | str, module: DesignModule) -> set[str]:
    """Signals a property reads, resolved against the design's declarations."""
    return PropertySpec.from_json(doc, module.widths).signals


def compile_property_matrix(doc: Mapping | str, smap: SemanticMap, num_design_vars: int) -> ClauseMatrix:
    """Property clauses over ``smap`` with auxiliaries above ``num_design_vars``.

    The result has at least ``num_design_vars`` rows so it can be stacked
    under the design columns.
    """
    spec = PropertySpec.from_json(doc, signal_widths(smap))
    compiled = compile_property(spec, smap, aux_base=num_design_vars + 1)
    return compiled.matrix(max(compiled.formula.num_variables, num_design_vars))


def check_instance(design: CompiledDesign, doc: Mapping | str) -> ClauseMatrix:
    """Design conjoined with the compiled property, ready for the solver."""
    prop = compile_property_matrix(doc, design.semantic_map, design.matrix.n)
    return conjoin(design.matrix, prop, aux_base=design.matrix.n + 1)


def catalog_property_compiler(doc: Mapping | str):
    """``compile_prop`` callback for the user session: compiles against the catalog's public map."""

    def compile_prop(entry: Mapping, catalog: Mapping) -> ClauseMatrix:
        smap = SemanticMap(entry["semantic_map"])
        return compile_property_matrix(doc, smap, int(catalog["n"]))

    return compile_prop

