"""Verification sessions: demask, conjoin with the property, solve, reveal.

:func:`verification_program` is the single circuit program both parties run.
Public parameters (shapes, heuristic kind, step limit) are agreed in the
handshake; every secret enters through :meth:`Backend.input`.

Session flow over one connection (vendor listens, user connects)::

    vendor -> HANDSHAKE {catalog}
    user   -> HANDSHAKE {heuristic, step_limit, property shape}
    OT     -> user obtains one masked design and its heuristic order
    2PC    -> P = P~ xor R_P, N = N~ xor R_N, append property, solve
    both   -> VERDICT (vendor first), checked for equality
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from . import ot
from .backend import USER, VENDOR, Backend, CleartextBackend, PartyBackend
from .cnf import ClauseMatrix
from .dealer import LocalDealer, RemoteTriples
from .errors import ProtocolError
from .portfolio import MaskPair, Portfolio, Selection, decode_payload
from .solver import DEFAULT_STEP_LIMIT, GiantStepStats, Result, heuristic_matrix, solve
from .transport import (
    Connection,
    FrameType,
    Listener,
    Role,
    duplex_pair,
    recv_handshake,
    run_cooperative,
    send_handshake,
)

log = logging.getLogger(__name__)

HEURISTICS = ("dlis", "ctrl")


@dataclass(frozen=True)
class PublicParams:
    """Everything both parties must agree on before the circuit runs."""

    n: int  # padded design rows
    m: int  # padded design columns
    prop_n: int  # rows of the widened property matrix
    prop_m: int
    h_rows: int
    heuristic: str = "dlis"
    step_limit: int = DEFAULT_STEP_LIMIT

    def __post_init__(self) -> None:
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"heuristic must be one of {HEURISTICS}")
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")

    @property
    def total_n(self) -> int:
        return max(self.n, self.prop_n)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> PublicParams:
        try:
            return cls(**{k: d[k] for k in cls.__dataclass_fields__})
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad session parameters: {exc}") from None


@dataclass
class UserInputs:
    selection: Selection
    prop: ClauseMatrix


@dataclass
class SessionOutcome:
    result: Result
    stats: GiantStepStats
    demask_and_gates: int
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {"result": self.result.value, "giant_steps": self.stats.giant_steps,
               "and_gates": self.stats.gates.and_count}
        out.update(self.extra)
        return out


def verification_program(
    be: Backend,
    params: PublicParams,
    vendor: MaskPair | None = None,
    user: UserInputs | None = None,
) -> SessionOutcome:
    n, m, tn = params.n, params.m, params.total_n
    if user is not None:
        if user.selection.P.shape != (n, m):
            raise ProtocolError("selected design does not match the public shape")
        if user.prop.P.shape != (params.prop_n, params.prop_m):
            raise ProtocolError("property matrix does not match the announced shape")
    if vendor is not None and vendor.R_P.shape != (n, m):
        raise ProtocolError("mask shape does not match the public shape")

    Pm = be.input(USER, user and user.selection.P, (n, m))
    Nm = be.input(USER, user and user.selection.N, (n, m))
    RP = be.input(VENDOR, vendor and vendor.R_P, (n, m))
    RN = be.input(VENDOR, vendor and vendor.R_N, (n, m))
    before = be.stats.and_count
    P, N = be.xor(Pm, RP), be.xor(Nm, RN)
    demask_ands = be.stats.and_count - before

    shape = (params.prop_n, params.prop_m)
    pP = be.input(USER, user and user.prop.P, shape)
    pN = be.input(USER, user and user.prop.N, shape)
    P = _stack(be, P, pP, tn)
    N = _stack(be, N, pN, tn)

    hsel = None
    if params.heuristic == "ctrl":
        H = None
        if user is not None:
            H = heuristic_matrix(user.selection.heuristic, tn, params.h_rows)
        hsel = be.input(USER, H, (params.h_rows, tn))

    stats = solve(be, P, N, hsel, params.step_limit)
    return SessionOutcome(stats.result, stats, demask_ands)


def _stack(be: Backend, design: np.ndarray, prop: np.ndarray, rows: int) -> np.ndarray:
    """Design columns followed by property columns, both widened to ``rows``."""

    def widen(a: np.ndarray) -> np.ndarray:
        if a.shape[0] == rows:
            return a
        return np.concatenate([a, be.const(0, (rows - a.shape[0], a.shape[1]))], axis=0)

    return np.concatenate([widen(design), widen(prop)], axis=1)


# -- in-process drivers ------------------------------------------------------------


def run_verification(
    params: PublicParams,
    mask: MaskPair,
    user: UserInputs,
    mode: str = "cleartext",
    seed: int | None = None,
    record_trace: bool = False,
) -> tuple[SessionOutcome, ...]:
    """Run the program once in plaintext, or as two parties sharing a dealer.

    ``shared`` runs both parties cooperatively in this thread; ``threads``
    runs them on two OS threads.  Returns one outcome per party (one for
    ``cleartext``, two otherwise).
    """
    if mode == "cleartext":
        return (verification_program(CleartextBackend(record_trace), params, mask, user),)
    if mode not in ("shared", "threads"):
        raise ValueError(f"unknown mode {mode!r}")
    dealer = LocalDealer(seed)

    def party(p: int):
        def run(conn: Connection) -> SessionOutcome:
            rng = None if seed is None else np.random.default_rng([seed, p])
            be = PartyBackend(p, conn, dealer.source(p), rng=rng, record_trace=record_trace)
            try:
                out = verification_program(
                    be, params, mask if p == VENDOR else None, user if p == USER else None
                )
            except BaseException as exc:
                conn.abort(str(exc))
                conn.close()
                raise
            out.extra["trace"] = be.trace
            return out

        return run

    if mode == "shared":
        outcomes = run_cooperative(party(VENDOR), party(USER))
    else:
        outcomes = _run_threads(party(VENDOR), party(USER))
    if outcomes[0].result != outcomes[1].result:
        raise ProtocolError("parties disagree on the verdict")
    return tuple(outcomes)


def _run_threads(fn0, fn1) -> tuple:
    c0, c1 = duplex_pair()
    results: list = [None, None]
    errors: list = []

    def wrap(i: int, fn, conn: Connection) -> None:
        try:
            results[i] = fn(conn)
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)

    t = threading.Thread(target=wrap, args=(1, fn1, c1), daemon=True)
    t.start()
    wrap(0, fn0, c0)
    t.join()
    if errors:
        raise errors[0]
    return tuple(results)


# -- networked sessions ------------------------------------------------------------


def exchange_verdict(conn: Connection, party: int, outcome: SessionOutcome) -> dict:
    """Send our verdict and check the peer's; the vendor speaks first."""
    mine = {"result": outcome.result.value, "giant_steps": outcome.stats.giant_steps}
    payload = json.dumps(mine, sort_keys=True).encode()
    if party == VENDOR:
        conn.send_frame(FrameType.VERDICT, payload)
        theirs = json.loads(conn.expect(FrameType.VERDICT))
    else:
        theirs = json.loads(conn.expect(FrameType.VERDICT))
        conn.send_frame(FrameType.VERDICT, payload)
    if theirs != mine:
        raise ProtocolError(f"verdict mismatch: local {mine}, peer {theirs}")
    return theirs


def vendor_session(
    conn: Connection,
    portfolio: Portfolio,
    dealer: tuple[str, int],
    rng: np.random.Generator | None = None,
) -> SessionOutcome:
    sid = os.urandom(16) if rng is None else rng.bytes(16)
    try:
        send_handshake(conn, Role.VENDOR, sid, {"catalog": portfolio.catalog or _bare_catalog(portfolio)})
        hs = recv_handshake(conn, expect_role=Role.USER, session_id=sid)
        params = PublicParams.from_dict(hs.extra)
        if (params.n, params.m, params.h_rows) != (portfolio.n, portfolio.m, portfolio.h_max):
            raise ProtocolError("user parameters do not match the portfolio shape")
        masked, mask = portfolio.mask(sid, rng)
        ot.send_messages(conn, masked.ot_messages(rng=rng), sid)
        triples = RemoteTriples.open(*dealer, party=VENDOR, session_id=sid)
        try:
            be = PartyBackend(VENDOR, conn, triples, rng=rng)
            outcome = verification_program(be, params, vendor=mask)
        finally:
            triples.close()
        exchange_verdict(conn, VENDOR, outcome)
        return outcome
    except Exception as exc:  # any local failure must unblock the peer
        conn.abort(str(exc))
        raise


def _bare_catalog(p: Portfolio) -> dict:
    return {"n": p.n, "m": p.m, "bound": p.bound, "h_max": p.h_max,
            "designs": [{"index": k + 1} for k in range(p.size)]}


@dataclass
class UserRequest:
    index: int  # 1-based design choice, never transmitted
    heuristic: str = "ctrl"
    step_limit: int = DEFAULT_STEP_LIMIT


def user_session(
    conn: Connection,
    request: UserRequest,
    compile_prop,
    dealer: tuple[str, int],
    rng: np.random.Generator | None = None,
) -> SessionOutcome:
    """User side.  ``compile_prop(catalog_entry, catalog)`` returns the
    property :class:`ClauseMatrix` already widened past the design rows."""
    try:
        hs = recv_handshake(conn, expect_role=Role.VENDOR)
        sid = hs.session_id
        catalog = hs.extra.get("catalog") or {}
        designs = catalog.get("designs", [])
        if not 1 <= request.index <= len(designs):
            raise ValueError(f"design index {request.index} outside 1..{len(designs)}")
        n, m = int(catalog["n"]), int(catalog["m"])
        prop = compile_prop(designs[request.index - 1], catalog)
        if prop.n < n:
            prop = ClauseMatrix(
                np.vstack([prop.P, np.zeros((n - prop.n, prop.m), np.uint8)]),
                np.vstack([prop.N, np.zeros((n - prop.n, prop.m), np.uint8)]),
            )
        params = PublicParams(n, m, prop.n, prop.m, int(catalog["h_max"]), request.heuristic, request.step_limit)
        send_handshake(conn, Role.USER, sid, params.to_dict())

        count = 1 << (len(designs) - 1).bit_length()
        payload = ot.receive_choice(conn, request.index, count, sid, rng=rng)
        selection = decode_payload(payload, n, m)
        triples = RemoteTriples.open(*dealer, party=USER, session_id=sid)
        try:
            be = PartyBackend(USER, conn, triples, rng=rng)
            outcome = verification_program(be, params, user=UserInputs(selection, prop))
        finally:
            triples.close()
        exchange_verdict(conn, USER, outcome)
        return outcome
    except Exception as exc:  # any local failure must unblock the peer
        conn.abort(str(exc))
        raise


def serve_vendor(
    listener: Listener,
    portfolio: Portfolio,
    dealer: tuple[str, int],
    parallel: int = 1,
    max_sessions: int | None = None,
    seed: int | None = None,
    on_session=None,
) -> int:
    """Accept user sessions until ``max_sessions`` have run; returns the count served.

    Sessions run one at a time unless ``parallel`` > 1.  A failed session is
    logged and does not stop the server.
    """
    served = 0
    slots = threading.Semaphore(max(1, parallel))
    workers: list[threading.Thread] = []

    def handle(conn: Connection, k: int) -> None:
        try:
            rng = None if seed is None else np.random.default_rng([seed, k])
            outcome = vendor_session(conn, portfolio, dealer, rng)
            log.info("session %d: %s in %d giant steps", k, outcome.result.value, outcome.stats.giant_steps)
            if on_session is not None:
                on_session(outcome)
        except Exception as exc:  # one bad session must not take the server down
            log.warning("session %d aborted: %s", k, exc)
        finally:
            conn.close()
            slots.release()

    while max_sessions is None or served < max_sessions:
        slots.acquire()
        conn = listener.accept()
        if parallel <= 1:
            handle(conn, served)
        else:
            t = threading.Thread(target=handle, args=(conn, served), daemon=True)
            t.start()
            workers.append(t)
        served += 1
    for t in workers:
        t.join()
    return served
