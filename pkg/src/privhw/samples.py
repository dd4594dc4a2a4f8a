"""Small designs used by the tests, the CLI demo and the benchmark sweep."""

from __future__ import annotations

from .design.module import DesignModule


def counter(bug: bool = False, with_led: bool = False) -> DesignModule:
    """3-bit counter with synchronous reset; increments by 2 when enabled, else by 1.

    ``bug`` makes the reset branch load 1 instead of 0.  ``with_led`` adds an
    unrelated toggling register that COI pruning should remove.
    """
    reset_value = "#b001" if bug else "#b000"
    signals = [
        {
            "name": "counter",
            "width": 3,
            "next": f"(ite (= reset #b1) {reset_value} "
            "(ite (= enable #b1) (bvadd counter #b010) (bvadd counter #b001)))",
        }
    ]
    if with_led:
        signals.append({"name": "led", "width": 1, "next": "(bvnot led)"})
    return DesignModule.from_json(
        {
            "id": "counter-bug" if bug else "counter",
            "inputs": [["reset", 1], ["enable", 1]],
            "signals": signals,
            "observable": ["counter", "reset"],
        }
    )


COUNTER_PROPERTY = {"kind": "assert", "op": "NOI", "frame": 1, "lhs": "reset", "rhs": "(= counter #b000)"}


def mux_cascade(depth: int, width: int = 2, bug: bool = False) -> DesignModule:
    """Two registers driven by identical nested-mux cascades of ``depth`` controls.

    Control ``c_k`` is nested inside ``c_{k+1}``, so ``c_depth`` is the
    outermost condition.  Under the outermost true control ``c_k`` a register
    takes ``reg + a_k``, and it holds its value when no control fires.  ``x``
    and ``y`` share every control and data input and both start at 0, so they
    stay equal.  ``bug`` makes ``y`` add 1 instead of ``a_1`` in the innermost
    branch, which lets the two registers diverge.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    one = "#b" + "0" * (width - 1) + "1"

    def cascade(reg: str, buggy: bool) -> str:
        expr = reg
        for k in range(1, depth + 1):
            data = f"(bvadd {reg} {one})" if buggy and k == 1 else f"(bvadd {reg} a{k})"
            expr = f"(ite (= c{k} #b1) {data} {expr})"
        return expr

    inputs = [[f"c{k}", 1] for k in range(1, depth + 1)]
    inputs += [[f"a{k}", width] for k in range(1, depth + 1)]
    return DesignModule.from_json(
        {
            "id": f"mux-cascade-d{depth}-w{width}" + ("-bug" if bug else ""),
            "inputs": inputs,
            "signals": [
                {"name": "x", "width": width, "init": 0, "next": cascade("x", False)},
                {"name": "y", "width": width, "init": 0, "next": cascade("y", bug)},
            ],
            "observable": ["x", "y"],
        }
    )


def mux_cascade_property(bound: int) -> dict:
    """``x = y`` at the last frame; holds unless the design carries the bug."""
    return {"kind": "assert", "op": "OI", "frame": bound, "lhs": "true", "rhs": "(= x y)"}
