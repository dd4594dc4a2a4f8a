"""Design modules, cone-of-influence pruning and time-frame unrolling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..errors import BoundError, DesignError
from .expr import Const, Expr, evaluate, parse_expr, refs, rename, to_sexpr


@dataclass(frozen=True)
class StateSignal:
    name: str
    width: int
    next: Expr
    init: int | None = None


@dataclass(frozen=True)
class DesignModule:
    """A synchronous design: free inputs plus registers with next-state logic."""

    inputs: tuple[tuple[str, int], ...]
    signals: tuple[StateSignal, ...]
    observable: tuple[str, ...] = ()
    design_id: bytes = field(default=b"\x00" * 32)

    def __post_init__(self) -> None:
        names = [n for n, _ in self.inputs] + [s.name for s in self.signals]
        if len(set(names)) != len(names):
            raise DesignError("duplicate signal names")
        if any("#" in n or "[" in n for n in names):
            raise DesignError("signal names may not contain '#' or '['")
        widths = self.widths
        for s in self.signals:
            if s.next.width != s.width:
                raise DesignError(f"next-state of {s.name} has width {s.next.width}, expected {s.width}")
            for r in refs(s.next):
                if r not in widths:
                    raise DesignError(f"{s.name} reads undeclared signal {r!r}")
            if s.init is not None and not 0 <= s.init < (1 << s.width):
                raise DesignError(f"init value of {s.name} does not fit")
        for o in self.observable:
            if o not in widths:
                raise DesignError(f"observable {o!r} is not declared")
        if len(self.design_id) != 32:
            raise DesignError("design id must be 32 bytes")

    @property
    def widths(self) -> dict[str, int]:
        out = dict(self.inputs)
        out.update((s.name, s.width) for s in self.signals)
        return out

    @property
    def signal_names(self) -> list[str]:
        return [n for n, _ in self.inputs] + [s.name for s in self.signals]

    def state(self, name: str) -> StateSignal:
        for s in self.signals:
            if s.name == name:
                return s
        raise KeyError(name)

    def step(self, values: Mapping[str, int]) -> dict[str, int]:
        """Next-state values from the current values of all signals."""
        return {s.name: evaluate(s.next, values) for s in self.signals}

    # -- JSON ---------------------------------------------------------------------

    @classmethod
    def from_json(cls, doc: Mapping | str) -> DesignModule:
        if isinstance(doc, str):
            doc = json.loads(doc)
        inputs = []
        for item in doc.get("inputs", []):
            if isinstance(item, Mapping):
                inputs.append((item["name"], int(item["width"])))
            else:
                inputs.append((item[0], int(item[1])))
        widths = dict(inputs)
        widths.update((s["name"], int(s["width"])) for s in doc.get("signals", []))
        signals = tuple(
            StateSignal(
                s["name"],
                int(s["width"]),
                parse_expr(s["next"], widths),
                None if s.get("init") is None else int(s["init"]),
            )
            for s in doc.get("signals", [])
        )
        raw_id = doc.get("id", "")
        try:
            design_id = bytes.fromhex(raw_id)
            if len(design_id) != 32:
                raise ValueError
        except ValueError:
            design_id = hashlib.sha256(str(raw_id).encode()).digest()
        return cls(tuple(inputs), signals, tuple(doc.get("observable", [])), design_id)

    def to_json(self) -> dict:
        return {
            "id": self.design_id.hex(),
            "inputs": [{"name": n, "width": w} for n, w in self.inputs],
            "signals": [
                {"name": s.name, "width": s.width, "next": to_sexpr(s.next)}
                | ({"init": s.init} if s.init is not None else {})
                for s in self.signals
            ],
            "observable": list(self.observable),
        }


def fan_in(module: DesignModule, roots: Iterable[str]) -> set[str]:
    """Transitive fan-in of ``roots`` through next-state dependencies."""
    deps = {s.name: refs(s.next) for s in module.signals}
    seen: set[str] = set()
    stack = list(roots)
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        stack.extend(deps.get(name, ()))
    return seen


def prune_coi(module: DesignModule, property_signals: Iterable[str]) -> DesignModule:
    """Keep only the cone of influence of ``property_signals``."""
    property_signals = list(property_signals)
    declared = module.widths
    for name in property_signals:
        if name not in declared:
            raise DesignError(f"unknown property signal {name!r}")
    keep = fan_in(module, property_signals)
    return DesignModule(
        inputs=tuple((n, w) for n, w in module.inputs if n in keep),
        signals=tuple(s for s in module.signals if s.name in keep),
        observable=tuple(o for o in module.observable if o in keep),
        design_id=module.design_id,
    )


def frame_name(signal: str, frame: int) -> str:
    return f"{signal}#{frame}"


def split_frame_name(name: str) -> tuple[str, int]:
    base, _, t = name.rpartition("#")
    return base, int(t)


@dataclass(frozen=True)
class UnrolledDesign:
    """Frame-indexed expansion of a module over ``bound`` clock cycles.

    ``variables`` lists every frame instance ``signal#t`` with its width;
    ``constraints`` equate ``signal#(t+1)`` with the next-state expression
    over frame-``t`` instances, and ``init`` pins frame-1 registers.
    """

    module: DesignModule
    bound: int
    variables: tuple[tuple[str, int], ...]
    constraints: tuple[tuple[str, Expr], ...]
    init: tuple[tuple[str, Const], ...] = ()


def unroll(module: DesignModule, bound: int) -> UnrolledDesign:
    if bound < 1:
        raise BoundError(f"bound must be >= 1, got {bound}")
    variables = []
    for t in range(1, bound + 1):
        variables.extend((frame_name(n, t), w) for n, w in module.inputs)
        variables.extend((frame_name(s.name, t), s.width) for s in module.signals)
    constraints = []
    for t in range(1, bound):
        for s in module.signals:
            expr = rename(s.next, lambda n, t=t: frame_name(n, t))
            constraints.append((frame_name(s.name, t + 1), expr))
    init = tuple(
        (frame_name(s.name, 1), Const(s.width, s.init))
        for s in module.signals
        if s.init is not None
    )
    return UnrolledDesign(module, bound, tuple(variables), tuple(constraints), init)


def simulate(module: DesignModule, bound: int, inputs: list[Mapping[str, int]],
             initial: Mapping[str, int]) -> list[dict[str, int]]:
    """Concrete trace: frame values for frames ``1..bound``.

    ``inputs[t-1]`` gives input values at frame ``t``; ``initial`` gives
    frame-1 register values (declared init values take precedence).
    """
    regs = {s.name: (s.init if s.init is not None else initial[s.name]) for s in module.signals}
    trace = []
    for t in range(bound):
        frame = dict(inputs[t])
        frame.update(regs)
        trace.append(frame)
        regs = module.step(frame)
    return trace
