"""Command-line interface: ``spherekhin {moment,constants,verify,tightness}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, constants
from .errors import SphereKhinError
from .moments import CoeffVector, MomentQuery, sum_moment
from .report import ReportDocument, dumps, write_report
from .verifier import INEQUALITY_IDS, SweepConfig, run_sweep, tightness_search, Budget

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("spherekhin")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    p.add_argument("--nodes", type=int, default=None, help="Gauss-Jacobi nodes per level")
    p.add_argument("--out", default=None, help="output path")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--config", default=None, help="JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherekhin", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("moment", help="E|v + sum a_j xi_j|^p")
    m.add_argument("--d", type=int, required=True)
    m.add_argument("--p", type=float, required=True)
    m.add_argument("--a", type=_floats, required=True, help="comma-separated coefficients")
    m.add_argument("--shift", type=float, default=0.0, help="|v|")
    m.add_argument("--method", choices=("exact", "mc", "auto"), default="auto")
    _common(m)

    c = sub.add_parser("constants", help="all constants for (p, d) as JSON")
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--out", default=None)

    v = sub.add_parser("verify", help="run verification sweeps and write a report")
    v.add_argument("--ids", type=lambda s: [x.strip() for x in s.split(",") if x.strip()], default=None,
                   help=f"comma-separated subset of {','.join(INEQUALITY_IDS)}")
    v.add_argument("--p", type=_floats, default=None, help="p grid")
    v.add_argument("--d", type=_ints, default=None, help="d grid")
    v.add_argument("--n", type=_ints, default=None, help="n grid")
    v.add_argument("--vectors", type=int, default=None, help="random vectors per cell")
    v.add_argument("--cap", type=int, default=None, help="largest n evaluated by nested quadrature")
    v.add_argument("--method", choices=("mc", "auto"), default=None,
                   help="'auto' uses exact quadrature up to --cap; 'mc' forces Monte Carlo beyond n = 2")
    _common(v)

    t = sub.add_parser("tightness", help="smallest observed deficit ratio")
    t.add_argument("--id", choices=("thm-main", "thm-diag"), default="thm-main")
    t.add_argument("--p", type=float, required=True)
    t.add_argument("--d", type=int, required=True)
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--budget", type=int, default=2000, help="total moment evaluations")
    t.add_argument("--restarts", type=int, default=8)
    _common(t)
    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _emit(text: str, out: str | None):
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def cmd_moment(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    samples = args.samples if args.samples is not None else cfg.get("samples", 1_000_000)
    query = MomentQuery(args.d, args.p, CoeffVector(tuple(args.a)), shift=args.shift)
    est = sum_moment(query, args.method, N=samples, seed=seed, K=args.nodes)
    _emit(dumps(est.to_dict()), args.out)
    return EXIT_PASS


def cmd_constants(args) -> int:
    cs = constants.constant_set(args.p, args.d).to_dict()
    cs["branch"] = "low" if args.p <= constants.BRANCH_POINT else "high"
    cs["c_diag_proof_route"] = constants.c_diag_proof_route(args.p, args.d)
    cs["m_cut_margin"] = constants.m_cut_margin(args.p) if args.p > constants.BRANCH_POINT else None
    cs["branch_jump_at_4"] = {k: list(v) for k, v in constants.branch_jump(args.d).items()}
    _emit(dumps(cs), args.out)
    return EXIT_PASS


def sweep_config_from_args(args) -> SweepConfig:
    data = _load_config(args.config)
    flags = {"ids": args.ids, "p_grid": args.p, "d_grid": args.d, "n_grid": args.n,
             "vectors_per_cell": args.vectors, "samples": args.samples, "nodes": args.nodes,
             "seed": args.seed, "out": args.out, "format": args.format, "exact_cap": args.cap}
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.method == "mc":
        data["exact_cap"] = 2
    data.setdefault("seed", 0)
    return SweepConfig.from_dict(data)


def cmd_verify(args) -> int:
    cfg = sweep_config_from_args(args)
    progress = None
    if args.verbose:
        progress = lambda k, n: log.info("%d/%d jobs", k, n)
    records = run_sweep(cfg, progress=progress)
    doc = ReportDocument.build(records, cfg.to_dict())
    if cfg.out:
        write_report(doc, cfg.out, cfg.format)
    else:
        sys.stdout.write(doc.to_jsonl())
    print(dumps(doc.summary), file=sys.stderr)
    return doc.exit_status


def cmd_tightness(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    samples = args.samples if args.samples is not None else cfg.get("samples", 200_000)
    if args.budget <= 0:
        raise UsageError("--budget must be positive")
    numerics = Budget(samples=samples, nodes=args.nodes, seed=seed, max_retries=0)
    rep = tightness_search(args.id, args.p, args.d, args.n, budget=args.budget, seed=seed,
                           restarts=args.restarts, numerics=numerics)
    _emit(dumps(rep.to_dict()), args.out)
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[rep.verdict]


COMMANDS = {"moment": cmd_moment, "constants": cmd_constants, "verify": cmd_verify, "tightness": cmd_tightness}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on malformed flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SphereKhinError, UsageError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
