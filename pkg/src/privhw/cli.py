"""Command-line entry points for both roles.

Exit codes: 0 success, 1 usage or input error, 2 protocol abort, 3 solver
timeout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .cnf import ClauseMatrix, emit_dimacs, decode_matrix, encode_cnf, parse_dimacs
from .dealer import DealerServer
from .design import DesignModule, SemanticMap
from .errors import PrivHWError, ProtocolError
from .ledger import KeyPair, Ledger, LedgerRecord, design_hash, new_record_id
from .portfolio import Portfolio, make_portfolio
from .session import UserRequest, serve_vendor, user_session
from .solver import DEFAULT_STEP_LIMIT, Result, solve_matrix
from .transport import Listener, connect, parse_endpoint
from .workflow import (
    catalog_property_compiler,
    compile_design,
    compile_property_matrix,
    property_signals,
)

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_TIMEOUT = 0, 1, 2, 3
ENDPOINT_ENV = "PRIVHW_ENDPOINT"

log = logging.getLogger("privhw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _rng(args) -> np.random.Generator | None:
    return None if args.seed is None else np.random.default_rng(args.seed)


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _hex(value: str, size: int, what: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise UsageError(f"{what} must be hex") from None
    if len(raw) != size:
        raise UsageError(f"{what} must be {size} bytes")
    return raw


# -- design pipeline ---------------------------------------------------------------


def cmd_compile_design(args) -> int:
    module = DesignModule.from_json(_read_json(args.design))
    prune_for = None
    if args.prune_for:
        prune_for = property_signals(_read_json(args.prune_for), module)
    cd = compile_design(module, args.bound, prune_for)
    Path(args.out).write_bytes(cd.matrix.to_bytes())
    if args.map:
        Path(args.map).write_text(json.dumps(dict(cd.semantic_map.items()), indent=2, sort_keys=True))
    if args.heu:
        Path(args.heu).write_text(json.dumps(cd.heuristic))
    if args.dimacs:
        Path(args.dimacs).write_text(emit_dimacs(decode_matrix(cd.matrix)))
    _emit({"variables": cd.matrix.n, "clauses": cd.matrix.m, "controls": len(cd.heuristic)})
    return EXIT_OK


def cmd_compile_property(args) -> int:
    smap = SemanticMap(_read_json(args.map))
    n = args.design_vars
    if args.design:
        n = ClauseMatrix.from_bytes(Path(args.design).read_bytes()).n
    if n is None:
        raise UsageError("give --design or --design-vars")
    prop = compile_property_matrix(_read_json(args.property), smap, n)
    Path(args.out).write_bytes(prop.to_bytes())
    _emit({"variables": prop.n, "clauses": prop.m})
    return EXIT_OK


def cmd_prune(args) -> int:
    from .design import prune_coi

    module = DesignModule.from_json(_read_json(args.design))
    keep = property_signals(_read_json(args.property), module)
    pruned = prune_coi(module, keep)
    Path(args.out).write_text(json.dumps(pruned.to_json(), indent=2))
    _emit({"signals_before": len(module.signal_names), "signals_after": len(pruned.signal_names)})
    return EXIT_OK


def cmd_build_portfolio(args) -> int:
    entries = []
    for path in args.designs:
        module = DesignModule.from_json(_read_json(path))
        entries.append(compile_design(module, args.bound).entry(Path(path).stem))
    portfolio = make_portfolio(entries, args.bound)
    portfolio.save(args.out)
    _emit({"designs": portfolio.size, "n": portfolio.n, "m": portfolio.m, "h_max": portfolio.h_max})
    return EXIT_OK


def cmd_solve(args) -> int:
    data = Path(args.formula).read_bytes()
    if data[:4] == b"BMPN":
        mat = ClauseMatrix.from_bytes(data)
    else:
        mat = encode_cnf(parse_dimacs(data.decode()))
    heuristic = _read_json(args.heu) if args.heu else None
    stats = solve_matrix(mat, heuristic, step_limit=args.step_limit)
    _emit(stats.to_dict())
    return EXIT_TIMEOUT if stats.result == Result.TIMEOUT else EXIT_OK


# -- sessions ------------------------------------------------------------------------


def cmd_vendor_serve(args) -> int:
    portfolio = Portfolio.load(args.portfolio)
    dealer = parse_endpoint(args.dealer)
    host, port = parse_endpoint(args.listen)
    with Listener(host, port) as listener:
        log.info("vendor listening on %s:%d", host, listener.port)
        if args.port_file:
            Path(args.port_file).write_text(str(listener.port))
        served = serve_vendor(listener, portfolio, dealer, args.parallel, args.max_sessions, args.seed,
                              on_session=lambda o: _emit(o.summary()))
    log.info("served %d sessions", served)
    return EXIT_OK


def cmd_user_verify(args) -> int:
    endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise UsageError(f"give --endpoint or set {ENDPOINT_ENV}")
    prop_doc = _read_json(args.property)
    request = UserRequest(args.select, args.heuristic, args.step_limit)
    with connect(*parse_endpoint(endpoint)) as conn:
        outcome = user_session(conn, request, catalog_property_compiler(prop_doc),
                               parse_endpoint(args.dealer), _rng(args))
    _emit(outcome.summary())
    return EXIT_TIMEOUT if outcome.result == Result.TIMEOUT else EXIT_OK


def cmd_dealer_serve(args) -> int:
    host, port = parse_endpoint(args.listen)
    server = DealerServer(host, port, args.seed)
    log.info("dealer listening on %s:%d", host, server.port)
    if args.port_file:
        Path(args.port_file).write_text(str(server.port))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_bench(args) -> int:
    cases = bench_mod.default_cases(args.depths, args.bounds)
    progress = None
    if args.verbose:
        progress = lambda row: print(",".join(map(str, row.csv_row())), file=sys.stderr, flush=True)  # noqa: E731
    rows = bench_mod.run_bench(cases, args.step_limit, args.seed, progress)
    report = bench_mod.to_csv(rows)
    if args.out:
        Path(args.out).write_text(report)
    else:
        sys.stdout.write(report)
    return EXIT_OK


# -- ledger --------------------------------------------------------------------------


def cmd_ledger_keygen(args) -> int:
    key = KeyPair.generate(_rng(args))
    key.save(args.out)
    _emit({"address": key.address.hex(), "public": key.public.hex()})
    return EXIT_OK


def cmd_ledger_push(args) -> int:
    key = KeyPair.load(args.key)
    if args.design_file:
        digest = design_hash(Path(args.design_file).read_bytes())
    elif args.design_hash:
        digest = _hex(args.design_hash, 32, "--design-hash")
    else:
        raise UsageError("give --design-file or --design-hash")
    to_addr = _hex(args.to, 20, "--to") if args.to else key.address
    refs = tuple(_hex(r, 32, "--ref") for r in args.ref)
    rid = _hex(args.id, 32, "--id") if args.id else new_record_id(_rng(args))
    record = LedgerRecord(rid, digest, key.address, to_addr, refs)
    Ledger(args.ledger).push(record, key)
    _emit({"id": rid.hex()})
    return EXIT_OK


def cmd_ledger_track(args) -> int:
    record = Ledger(args.ledger).track(_hex(args.id, 32, "--id"))
    _emit(record.to_json())
    return EXIT_OK


def cmd_ledger_trace(args) -> int:
    vendors = Ledger(args.ledger).trace(_hex(args.id, 32, "--id"))
    _emit(sorted(v.hex() for v in vendors))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privhw", description="Private hardware IP verification toolkit.")
    parser.add_argument("--seed", type=int, default=None, help="fix all randomness except live OT")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile-design", help="unroll and encode a design")
    p.add_argument("design")
    p.add_argument("--bound", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map")
    p.add_argument("--heu")
    p.add_argument("--dimacs")
    p.add_argument("--prune-for", metavar="PROPERTY", help="prune to the cone of influence of this property")
    p.set_defaults(func=cmd_compile_design)

    p = sub.add_parser("compile-property", help="encode a property over a semantic map")
    p.add_argument("property")
    p.add_argument("--map", required=True)
    p.add_argument("--design", help="compiled design matrix, to place auxiliaries above it")
    p.add_argument("--design-vars", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile_property)

    p = sub.add_parser("prune", help="cone-of-influence pruning of a design")
    p.add_argument("design")
    p.add_argument("--property", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("build-portfolio", help="compile, pad and store a vendor portfolio")
    p.add_argument("designs", nargs="+")
    p.add_argument("--bound", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_portfolio)

    p = sub.add_parser("solve", help="plaintext giant-step solve of a DIMACS or matrix file")
    p.add_argument("formula")
    p.add_argument("--heu", help="heuristic order JSON; DLIS when omitted")
    p.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT)
    p.set_defaults(func=cmd_solve)

    vendor = sub.add_parser("vendor").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = vendor.add_parser("serve", help="serve a portfolio to users")
    p.add_argument("--portfolio", required=True)
    p.add_argument("--listen", default=":7001")
    p.add_argument("--dealer", required=True, metavar="HOST:PORT")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--max-sessions", type=int)
    p.add_argument("--port-file")
    p.set_defaults(func=cmd_vendor_serve)

    user = sub.add_parser("user").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = user.add_parser("verify", help="select a design obliviously and check a property")
    p.add_argument("--endpoint", help=f"vendor HOST:PORT (default ${ENDPOINT_ENV})")
    p.add_argument("--select", type=int, required=True, help="1-based design index")
    p.add_argument("--property", required=True)
    p.add_argument("--heuristic", choices=("dlis", "ctrl"), default="ctrl")
    p.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT)
    p.add_argument("--dealer", required=True, metavar="HOST:PORT")
    p.set_defaults(func=cmd_user_verify)

    dealer = sub.add_parser("dealer").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = dealer.add_parser("serve", help="run the multiplication-triple dealer")
    p.add_argument("--listen", default=":7000")
    p.add_argument("--port-file")
    p.set_defaults(func=cmd_dealer_serve)

    p = sub.add_parser("bench", help="DLIS versus control-guided sweep as CSV")
    p.add_argument("--depths", type=_int_list, default=[1, 2, 3])
    p.add_argument("--bounds", type=_int_list, default=[1, 2, 3])
    p.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    ledger = sub.add_parser("ledger").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ledger.add_parser("keygen")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ledger_keygen)
    p = ledger.add_parser("push")
    p.add_argument("--ledger", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--to", help="recipient address (hex); defaults to the signer")
    p.add_argument("--design-file")
    p.add_argument("--design-hash")
    p.add_argument("--ref", action="append", default=[])
    p.add_argument("--id", help="record id (hex); random when omitted")
    p.set_defaults(func=cmd_ledger_push)
    for name, func in (("track", cmd_ledger_track), ("trace", cmd_ledger_trace)):
        p = ledger.add_parser(name)
        p.add_argument("--ledger", required=True)
        p.add_argument("--id", required=True)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (UsageError, PrivHWError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
