"""DLIS versus control-guided solving over a sweep of generated designs."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass
from collections.abc import Iterable

import numpy as np

from . import ot
from .backend import USER, VENDOR, PartyBackend
from .dealer import LocalDealer
from .portfolio import encode_payload, make_portfolio
from .samples import COUNTER_PROPERTY, counter, mux_cascade, mux_cascade_property
from .solver import DEFAULT_STEP_LIMIT, solve_matrix
from .transport import run_cooperative
from .workflow import check_instance, compile_design

OT_FANOUT = 32
BLOCK_BITS = 128
COLUMNS = ["Design", "Bound", "Var", "Cls", "DesignSizeBlocks", "OTms", "Demask",
           "DLIS steps", "Ctrl steps", "Result"]


@dataclass
class BenchCase:
    name: str
    module: object
    bound: int
    prop: dict


@dataclass
class BenchRow:
    design: str
    bound: int
    var: int
    cls: int
    design_size_blocks: int
    ot_ms: float
    demask_s: float
    dlis_steps: int
    ctrl_steps: int
    result: str
    dlis_result: str
    ctrl_result: str

    def csv_row(self) -> list:
        return [self.design, self.bound, self.var, self.cls, self.design_size_blocks,
                f"{self.ot_ms:.1f}", f"{self.demask_s:.4f}", self.dlis_steps, self.ctrl_steps, self.result]

    def to_dict(self) -> dict:
        return asdict(self)


def default_cases(depths: Iterable[int] = (1, 2, 3), bounds: Iterable[int] = (1, 2, 3)) -> list[BenchCase]:
    cases = [
        BenchCase("counter", counter(), 2, COUNTER_PROPERTY),
        BenchCase("counter-bug", counter(bug=True), 2, COUNTER_PROPERTY),
    ]
    for bug in (False, True):
        for d in depths:
            for b in bounds:
                name = f"mux-cascade-d{d}" + ("-bug" if bug else "")
                cases.append(BenchCase(name, mux_cascade(d, bug=bug), b, mux_cascade_property(b)))
    return cases


def measure_ot(payload: bytes, fanout: int, rng: np.random.Generator) -> float:
    """Milliseconds for one in-process 1-of-``fanout`` exchange of ``payload``-sized messages."""
    msgs = [payload] + [rng.bytes(len(payload)) for _ in range(fanout - 1)]
    t = time.perf_counter()
    got = ot.ot_exchange(msgs, 1, rng.bytes(16), rng)
    elapsed = time.perf_counter() - t
    if got != payload:
        raise AssertionError("OT returned the wrong message")
    return 1000 * elapsed


def measure_demask(masked_P: np.ndarray, masked_N: np.ndarray, R_P: np.ndarray, R_N: np.ndarray,
                   seed: int | None = None) -> float:
    """Seconds to share both parties' matrices and XOR them inside the two-party backend."""
    dealer = LocalDealer(seed)
    shape = masked_P.shape

    def party(p: int):
        def run(conn):
            be = PartyBackend(p, conn, dealer.source(p))
            pm = be.input(USER, masked_P if p == USER else None, shape)
            nm = be.input(USER, masked_N if p == USER else None, shape)
            rp = be.input(VENDOR, R_P if p == VENDOR else None, shape)
            rn = be.input(VENDOR, R_N if p == VENDOR else None, shape)
            be.xor(pm, rp), be.xor(nm, rn)
            return be.stats.and_count

        return run

    t = time.perf_counter()
    ands = run_cooperative(party(VENDOR), party(USER))
    elapsed = time.perf_counter() - t
    if any(ands):
        raise AssertionError("demasking used AND gates")
    return elapsed


def run_case(case: BenchCase, step_limit: int = DEFAULT_STEP_LIMIT, seed: int | None = None) -> BenchRow:
    rng = np.random.default_rng(seed)
    cd = compile_design(case.module, case.bound)
    full = check_instance(cd, case.prop)
    pf = make_portfolio([cd.entry(case.name)], case.bound)
    masked, mask = pf.mask(rng.bytes(16), rng)
    payload = encode_payload(masked.entries[0], pf.h_max)

    dlis = solve_matrix(full, step_limit=step_limit)
    ctrl = solve_matrix(full, cd.heuristic, step_limit=step_limit)
    verdicts = {dlis.result.value, ctrl.result.value}
    return BenchRow(
        design=case.name,
        bound=case.bound,
        var=cd.matrix.n,
        cls=cd.matrix.m,
        design_size_blocks=math.ceil(8 * len(payload) / BLOCK_BITS),
        ot_ms=measure_ot(payload, OT_FANOUT, rng),
        demask_s=measure_demask(masked.entries[0].P, masked.entries[0].N, mask.R_P, mask.R_N, seed),
        dlis_steps=dlis.giant_steps,
        ctrl_steps=ctrl.giant_steps,
        result=verdicts.pop() if len(verdicts) == 1 else "MISMATCH",
        dlis_result=dlis.result.value,
        ctrl_result=ctrl.result.value,
    )


def run_bench(cases: list[BenchCase], step_limit: int = DEFAULT_STEP_LIMIT, seed: int | None = None,
              progress=None) -> list[BenchRow]:
    rows = []
    for k, case in enumerate(cases):
        rows.append(run_case(case, step_limit, None if seed is None else seed + k))
        if progress is not None:
            progress(rows[-1])
    return rows


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(row.csv_row())
    return buf.getvalue()
