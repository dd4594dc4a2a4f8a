"""Giant-step DPLL over clause matrices, written against :class:`Backend`.

Each iteration of the main loop evaluates one fixed circuit over all ``n*m``
matrix cells: clause status, conflict detection, the lowest unit-implied
variable, the lowest pure variable and a heuristic decision.  Four bits are
then revealed (all clauses satisfied, conflict, unit available, pure
available) and exactly one action is applied:

    conflict  -> chronological backtrack
    unit      -> assign the implied value
    pure      -> assign the pure polarity
    otherwise -> assign the heuristic decision

Assignments live in the backend as shared bits.  The trail keeps the shared
one-hot selector of each assignment with plaintext bookkeeping flags, so
assigning, undoing and flipping are XOR-only and every iteration has the same
AND-gate count.  The revealed action kind per step is the leakage surface of
this design.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backend import Backend, CleartextBackend, GateStats
from .cnf import ClauseMatrix, CnfFormula, encode_cnf

DEFAULT_STEP_LIMIT = 20000


class Result(str, Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    TIMEOUT = "TIMEOUT"


@dataclass
class GiantStepStats:
    result: Result | None = None
    giant_steps: int = 0
    decisions: int = 0
    propagations: int = 0
    pure_eliminations: int = 0
    backtracks: int = 0
    gates: GateStats = field(default_factory=GateStats)
    step_and_counts: list[int] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "result": self.result.value if self.result else None,
            "giant_steps": self.giant_steps,
            "decisions": self.decisions,
            "propagations": self.propagations,
            "pure_eliminations": self.pure_eliminations,
            "backtracks": self.backtracks,
            "and_gates": self.gates.and_count,
            "estimated_bytes": self.gates.estimated_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class Sweep:
    """Shared intermediate values of one giant step."""

    sat: np.ndarray  # [m] clause satisfied
    unassigned: np.ndarray  # [n]
    pl: np.ndarray  # [n, m] unassigned positive occurrence in an open clause
    nl: np.ndarray  # [n, m] unassigned negative occurrence in an open clause
    pos_any: np.ndarray  # [n]
    neg_any: np.ndarray  # [n]
    conflict: np.ndarray  # [1]
    unit_sel: np.ndarray  # [n] one-hot, lowest unit-implied variable
    unit_val: np.ndarray  # [1]
    any_unit: np.ndarray  # [1]
    pure_sel: np.ndarray  # [n]
    pure_val: np.ndarray  # [1]
    any_pure: np.ndarray  # [1]
    all_sat: np.ndarray  # [1]


@dataclass
class TrailEntry:
    sel: np.ndarray
    selval: np.ndarray
    is_decision: bool
    tried_both: bool = False


@dataclass
class SolverState:
    P: np.ndarray
    N: np.ndarray
    cells: np.ndarray  # stacked [P, N, P or N], computed once
    assigned: np.ndarray
    value: np.ndarray
    trail: list[TrailEntry] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.P.shape[1]

    @classmethod
    def initial(cls, be: Backend, P: np.ndarray, N: np.ndarray) -> SolverState:
        if P.shape != N.shape or P.ndim != 2:
            raise ValueError("P and N must be matrices of equal shape")
        n = P.shape[0]
        # P or N is not P xor N on padding tautology columns
        cells = np.stack([P, N, be.or_(P, N)])
        return cls(P, N, cells, be.const(0, (n,)), be.const(0, (n,)))

    def assign(self, be: Backend, sel: np.ndarray, selval: np.ndarray, is_decision: bool) -> None:
        self.assigned = be.xor(self.assigned, sel)
        self.value = be.xor(self.value, selval)
        self.trail.append(TrailEntry(sel, selval, is_decision))

    def backtrack(self, be: Backend) -> bool:
        """Undo to the latest untried decision and flip it; False when none is left."""
        while self.trail:
            top = self.trail[-1]
            if top.is_decision and not top.tried_both:
                self.value = be.xor(self.value, top.sel)
                top.selval = be.xor(top.selval, top.sel)
                top.tried_both = True
                return True
            self.trail.pop()
            self.assigned = be.xor(self.assigned, top.sel)
            self.value = be.xor(self.value, top.selval)
        return False


def _count_at_least(be: Backend, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per column of ``x[n, m]``: (at least one set, at least two set).

    Saturating pairwise merge; each merge costs 3 ANDs in 2 rounds.
    """
    if x.shape[0] == 0:
        zero = be.const(0, (x.shape[1],))
        return zero, zero
    a, t = x, be.const(0, x.shape)
    while a.shape[0] > 1:
        k = a.shape[0] // 2
        a1, a2 = a[0 : 2 * k : 2], a[1 : 2 * k : 2]
        t1, t2 = t[0 : 2 * k : 2], t[1 : 2 * k : 2]
        both, tt = be.and_(np.stack([a1, t1]), np.stack([a2, t2]))
        na = be.xor(be.xor(a1, a2), both)
        nt = be.or_(be.xor(be.xor(t1, t2), tt), both)
        if a.shape[0] % 2:
            na = np.concatenate([na, a[2 * k :]])
            nt = np.concatenate([nt, t[2 * k :]])
        a, t = na, nt
    return a[0], t[0]


def sweep(be: Backend, st: SolverState) -> Sweep:
    n, m = st.n, st.m
    tp = st.value
    tn = be.xor(st.assigned, st.value)
    true_pos, true_neg = be.and_(st.cells[:2], np.stack([tp, tn])[:, :, None])
    lit_true = be.xor(true_pos, true_neg)
    sat = be.or_reduce(lit_true, axis=0) if n else be.const(0, (m,))
    open_ = be.not_(sat)
    unassigned = be.not_(st.assigned)
    uo = be.and_(unassigned[:, None], open_[None, :])
    pl, nl, occ = be.and_(st.cells, uo[None])

    at_least_one, at_least_two = _count_at_least(be, occ)
    # conflict: open clause with no unassigned literal; unit: exactly one
    conflict_cols, unit = be.and_(
        np.stack([open_, at_least_one]), be.not_(np.stack([at_least_one, at_least_two]))
    )

    unit_lits = be.and_(np.stack([pl, nl]), unit[None, None, :])
    up, un, pos_any, neg_any = be.or_reduce(np.concatenate([unit_lits, np.stack([pl, nl])]), axis=-1)
    unit_var = be.or_(up, un)
    unit_sel, pure_sel = be.first_one(np.stack([unit_var, be.xor(pos_any, neg_any)]))
    unit_val, pure_val = be.or_reduce(be.and_(np.stack([unit_sel, pure_sel]), np.stack([up, pos_any])))
    any_unit, any_pure = be.or_reduce(np.stack([unit_var, pure_sel]))
    conflict, unsat_any = be.or_reduce(np.stack([conflict_cols, open_]))

    return Sweep(
        sat=sat,
        unassigned=unassigned,
        pl=pl,
        nl=nl,
        pos_any=pos_any,
        neg_any=neg_any,
        conflict=conflict[None],
        unit_sel=unit_sel,
        unit_val=unit_val[None],
        any_unit=any_unit[None],
        pure_sel=pure_sel,
        pure_val=pure_val[None],
        any_pure=any_pure[None],
        all_sat=be.not_(unsat_any)[None],
    )


def literal_counts(be: Backend, sw: Sweep) -> np.ndarray:
    """Binary occurrence counts ``[2n, w]`` ordered x1+, x1-, x2+, x2-, ..."""
    n = sw.pl.shape[0]
    interleaved = np.empty((2 * n, sw.pl.shape[1]), dtype=np.uint8)
    interleaved[0::2] = sw.pl
    interleaved[1::2] = sw.nl
    return be.popcount(interleaved)


def decide_dlis(be: Backend, sw: Sweep) -> tuple[np.ndarray, np.ndarray]:
    """Most frequent literal in open clauses; ties to lowest variable, then positive."""
    n = sw.pl.shape[0]
    if n == 0:
        return be.const(0, (0,)), be.const(0, (1,))
    onehot = be.argmax_onehot(literal_counts(be, sw))
    sel = be.xor(onehot[0::2], onehot[1::2])
    val = be.xor_reduce(onehot[0::2])[None]
    return sel, val


def decide_ctrl(
    be: Backend, sw: Sweep, hsel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Highest-priority live control variable.

    ``hsel[k]`` is the one-hot variable row of the k-th heuristic entry (all
    zero for padding).  Entries are scanned in list order and the last live
    one wins; its polarity is positive whenever the positive literal is live.
    Returns ``(sel, val, found)``.
    """
    h, n = hsel.shape
    if h == 0:
        return be.const(0, (n,)), be.const(0, (1,)), be.const(0, (1,))
    sp, sn = be.or_reduce(be.and_(hsel[None], np.stack([sw.pos_any, sw.neg_any])[:, None, :]), axis=-1)
    live = be.or_(sp, sn)
    winner = be.last_one(live)
    picked = be.or_reduce(be.and_(winner[:, None], np.concatenate([hsel, sp[:, None]], axis=1)), axis=0)
    found = be.or_reduce(live)[None]
    return picked[:n], picked[n:], found


def heuristic_matrix(order: list[int], n: int, rows: int | None = None) -> np.ndarray:
    """One-hot rows for a heuristic order; literal 0 entries become zero rows."""
    rows = len(order) if rows is None else rows
    if len(order) > rows:
        raise ValueError("heuristic order longer than the row budget")
    H = np.zeros((rows, n), dtype=np.uint8)
    for k, lit in enumerate(order):
        if lit == 0:
            continue
        if not 1 <= abs(lit) <= n:
            raise ValueError(f"heuristic literal {lit} outside 1..{n}")
        H[k, abs(lit) - 1] = 1
    return H


def giant_step(
    be: Backend, st: SolverState, hsel: np.ndarray | None
) -> tuple[np.ndarray, Sweep, np.ndarray, np.ndarray]:
    """Evaluate one step's circuit; returns revealed flags and the chosen action."""
    sw = sweep(be, st)
    n = st.n
    choice = np.concatenate(decide_dlis(be, sw))
    if hsel is not None:
        c_sel, c_val, found = decide_ctrl(be, sw, hsel)
        choice = be.mux(found, np.concatenate([c_sel, c_val]), choice)
    choice = be.mux(sw.any_pure, np.concatenate([sw.pure_sel, sw.pure_val]), choice)
    choice = be.mux(sw.any_unit, np.concatenate([sw.unit_sel, sw.unit_val]), choice)
    sel, val = choice[:n], choice[n:]
    selval = be.and_(sel, val)
    flags = be.reveal(np.concatenate([sw.all_sat, sw.conflict, sw.any_unit, sw.any_pure]))
    return flags, sw, sel, selval


def solve(
    be: Backend,
    P: np.ndarray,
    N: np.ndarray,
    hsel: np.ndarray | None = None,
    step_limit: int = DEFAULT_STEP_LIMIT,
) -> GiantStepStats:
    """Run the giant-step loop on backend-held matrices.

    ``hsel`` switches from pure DLIS to control-guided decisions.  Only the
    verdict, the step counters and the per-step action kinds become public.
    """
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    if hsel is not None and hsel.shape[1:] != (P.shape[0],):
        raise ValueError("heuristic matrix width must equal the variable count")
    start = be.stats.copy()
    stats = GiantStepStats()
    st = SolverState.initial(be, P, N)
    while True:
        before = be.stats.and_count
        flags, _, sel, selval = giant_step(be, st, hsel)
        all_sat, conflict, any_unit, any_pure = (bool(f) for f in flags)
        if all_sat:
            stats.result = Result.SAT
            break
        if stats.giant_steps >= step_limit:
            stats.result = Result.TIMEOUT
            break
        stats.giant_steps += 1
        stats.step_and_counts.append(be.stats.and_count - before)
        if conflict:
            stats.backtracks += 1
            if not st.backtrack(be):
                stats.result = Result.UNSAT
                break
        elif any_unit:
            stats.propagations += 1
            st.assign(be, sel, selval, is_decision=False)
        elif any_pure:
            stats.pure_eliminations += 1
            st.assign(be, sel, selval, is_decision=False)
        else:
            stats.decisions += 1
            st.assign(be, sel, selval, is_decision=True)
    stats.gates = be.stats - start
    return stats


def solve_matrix(
    mat: ClauseMatrix,
    heuristic: list[int] | None = None,
    step_limit: int = DEFAULT_STEP_LIMIT,
    backend: Backend | None = None,
) -> GiantStepStats:
    """Cleartext convenience wrapper: ``heuristic`` is a control order or None for DLIS."""
    be = backend or CleartextBackend()
    hsel = None
    if heuristic is not None:
        hsel = be.const(heuristic_matrix(heuristic, mat.n))
    return solve(be, be.const(mat.P), be.const(mat.N), hsel, step_limit)


def solve_formula(
    formula: CnfFormula,
    heuristic: list[int] | None = None,
    step_limit: int = DEFAULT_STEP_LIMIT,
    backend: Backend | None = None,
) -> GiantStepStats:
    return solve_matrix(encode_cnf(formula), heuristic, step_limit, backend)
