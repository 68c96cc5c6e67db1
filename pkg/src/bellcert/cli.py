"""Command-line front end.

Subcommands: tsirelson, certify, flex, sweep, hist, select, curve.
Scalar results go to stdout (6 decimals); provenance (level, tolerances,
noise grid) goes to stderr or into file headers.  Exit codes: 0 success,
2 usage error, 3 infeasible, 4 solver failure, 5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .certify import probability_box, tsirelson_bound
from .entropy import certify_entropy
from .errors import (
    BellcertError,
    CheckpointMismatchError,
    EmptyBoxError,
    InfeasibleError,
    SolverError,
    UnboundedError,
)
from .flex import flex
from .npa import LEVELS
from .scenario import CoefficientMatrix, Protocol, Scenario, classical_bound
from .sdp import DEFAULT_GAP_TOL
from .search import (
    Criterion,
    SearchConfig,
    Selection,
    histogram,
    iter_records,
    run_search,
    select_top,
    write_histogram_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_IO = 5

#: Environment override for the solver gap tolerance.
GAP_TOL_ENV = "BELLCERT_GAP_TOL"


def _gap_tol(args) -> float:
    if args.gap_tol is not None:
        return args.gap_tol
    env = os.environ.get(GAP_TOL_ENV)
    return float(env) if env else DEFAULT_GAP_TOL


def _parse_spot(text: str, scenario: Scenario) -> tuple[int, int]:
    """User-facing 1-based "x,y" to internal 0-based indices."""
    try:
        x_text, y_text = text.split(",")
        x, y = int(x_text) - 1, int(y_text) - 1
    except ValueError:
        raise argparse.ArgumentTypeError(f"spot must look like '1,1', got {text!r}")
    if not (0 <= x < scenario.n_alice and 0 <= y < scenario.n_bob):
        raise argparse.ArgumentTypeError(f"spot {text} outside scenario {scenario}")
    return x, y


def _parse_grid(text: str) -> list[float]:
    """Comma-separated values; each may be a 'start:stop:step' range
    (stop inclusive within half a step)."""
    grid: list[float] = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            start, stop, step = (float(v) for v in part.split(":"))
            v = start
            while v <= stop + step / 2:
                grid.append(round(v, 12))
                v += step
        elif part:
            grid.append(float(part))
    return grid


def _provenance(args, **extra) -> str:
    fields = {"level": args.level, "gap_tol": _gap_tol(args), **extra}
    return " ".join(f"{k}={v}" for k, v in sorted(fields.items()))


def _cmd_tsirelson(args) -> int:
    alpha = CoefficientMatrix.from_string(args.alpha)
    value = tsirelson_bound(alpha, args.level, gap_tol=_gap_tol(args))
    print(f"# {_provenance(args)}", file=sys.stderr)
    print(f"{value:.6f}")
    return EXIT_OK


def _cmd_certify(args) -> int:
    alpha = CoefficientMatrix.from_string(args.alpha)
    spot = _parse_spot(args.spot, alpha.scenario)
    bound = tsirelson_bound(alpha, args.level, gap_tol=_gap_tol(args))
    protocol = Protocol(alpha, bound, *spot)
    box = probability_box(protocol, args.p, args.level, tsirelson=bound, gap_tol=_gap_tol(args))
    report = certify_entropy(box)
    print(f"# {_provenance(args, p=args.p, spot=args.spot)}", file=sys.stderr)
    print(f"tsirelson {bound:.6f}")
    print(f"classical_bound {classical_bound(alpha)}")
    print(f"bell_value_constraint {box.bell_value_constraint:.6f}")
    for key, lo, hi in zip(("--", "-+", "+-", "++"), box.lower, box.upper):
        print(f"box {key} {lo:.6f} {hi:.6f}")
    print(f"shannon_certified {report.shannon_certified:.6f}")
    print(f"min_entropy_certified {report.min_entropy_certified:.6f}")
    print(f"shannon_ansatz {report.shannon_ansatz:.6f}")
    print(f"analytic_bound {report.analytic_bound:.6f}")
    print(f"witness {' '.join(f'{v:.6f}' for v in report.witness_distribution)}")
    return EXIT_OK


def _cmd_flex(args) -> int:
    alpha = CoefficientMatrix.from_string(args.alpha)
    bound = tsirelson_bound(alpha, args.level, gap_tol=_gap_tol(args))
    report = flex(alpha, bound, args.p, args.level, gap_tol=_gap_tol(args))
    print(f"# {_provenance(args, p=args.p, bound=f'{bound:.6f}')}", file=sys.stderr)
    print(f"{report.flex:.6f}")
    if args.cells:
        with open(args.cells, "w", encoding="utf-8") as fh:
            fh.write(f"# {_provenance(args, p=args.p, bound=f'{bound:.6f}')}\n")
            fh.write("a,b,x,y,max_probability\n")
            for (a, b, x, y), v in sorted(report.per_cell_max.items(),
                                          key=lambda kv: (kv[0][2], kv[0][3], kv[0][0], kv[0][1])):
                fh.write(f"{a},{b},{x + 1},{y + 1},{v:.6f}\n")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scenario = Scenario(args.N, args.M)
    spots = None
    if args.spots != "all":
        spots = tuple(_parse_spot(s, scenario) for s in args.spots.split(";"))
    sample = None
    if args.sample:
        seed_text, _, count_text = args.sample.partition(":")
        sample = (int(seed_text), int(count_text))
    config = SearchConfig(
        scenario=scenario,
        output_path=args.out,
        noise_levels=tuple(args.noise),
        level=args.level,
        spot_settings=spots,
        dedupe_symmetries=args.dedupe,
        sample=sample,
        checkpoint_interval=args.checkpoint,
        compute_flex=args.flex,
        workers=args.workers,
        gap_tol=_gap_tol(args),
    )
    summary = run_search(config, stop_after_shards=args.max_shards)
    print(json.dumps(summary.as_dict(), sort_keys=True, indent=1))
    return EXIT_OK


def _cmd_hist(args) -> int:
    bins = histogram(iter_records(args.records), args.measure, args.p, args.bin_width)
    metadata = {"measure": args.measure, "p": args.p, "bin_width": args.bin_width,
                "records": args.records}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_histogram_csv(bins, fh, metadata)
    else:
        write_histogram_csv(bins, sys.stdout, metadata)
    return EXIT_OK


def _cmd_select(args) -> int:
    filters = tuple(Criterion.parse(t, eps=args.eps) for t in args.filter)
    if args.smoothest:
        objective = "smoothest"
    elif args.minimize:
        objective = f"min:{args.minimize}"
    else:
        objective = f"max:{args.maximize}"
    selection = Selection(filters=filters, objective=objective)
    ranked = select_top(iter_records(args.records), selection, top=args.top)
    if not ranked:
        print("no records match the criteria", file=sys.stderr)
        return EXIT_OK
    print(f"# objective={objective} filters={';'.join(args.filter) or 'none'}",
          file=sys.stderr)
    for rec, value in ranked:
        spot = ",".join(str(v) for v in rec["spot"])
        print(f"{value:.6f}\t{rec['alpha']}\t{spot}")
    return EXIT_OK


def _cmd_curve(args) -> int:
    alpha = CoefficientMatrix.from_string(args.alpha)
    spot = _parse_spot(args.spot, alpha.scenario)
    bound = tsirelson_bound(alpha, args.level, gap_tol=_gap_tol(args))
    protocol = Protocol(alpha, bound, *spot)
    grid = _parse_grid(args.p_grid)
    rows = []
    for p in grid:
        box = probability_box(protocol, p, args.level, tsirelson=bound, gap_tol=_gap_tol(args))
        rep = certify_entropy(box)
        rows.append((p, rep.shannon_certified, rep.shannon_ansatz,
                     rep.min_entropy_certified, rep.analytic_bound))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write(f"# {_provenance(args, spot=args.spot, bound=f'{bound:.6f}')}\n")
        out.write("p,shannon_certified,shannon_ansatz,min_entropy_certified,analytic_bound\n")
        for p, h, ha, hm, hb in rows:
            out.write(f"{p:.6g},{h:.6f},{ha:.6f},{hm:.6f},{hb:.6f}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellcert",
        description="Bell-expression randomness certification toolbox",
    )
    parser.add_argument("--version", action="version", version=f"bellcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--level", choices=LEVELS, default="1+AB",
                       help="moment hierarchy level (default 1+AB)")
        p.add_argument("--gap-tol", type=float, default=None,
                       help=f"solver gap tolerance (default {DEFAULT_GAP_TOL}; "
                            f"env {GAP_TOL_ENV})")

    p = sub.add_parser("tsirelson", help="quantum bound of an expression")
    p.add_argument("--alpha", required=True, help="matrix like '1,1;1,-1'")
    add_common(p)
    p.set_defaults(func=_cmd_tsirelson)

    p = sub.add_parser("certify", help="probability box and entropy certificate")
    p.add_argument("--alpha", required=True)
    p.add_argument("--spot", required=True, help="1-based 'x,y'")
    p.add_argument("--p", type=float, required=True, help="white-noise level")
    add_common(p)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("flex", help="box self-testing measure")
    p.add_argument("--alpha", required=True)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--cells", default=None, help="write per-cell maxima CSV here")
    add_common(p)
    p.set_defaults(func=_cmd_flex)

    p = sub.add_parser("sweep", help="enumerate protocols, certify, persist JSONL")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, nargs="+", default=[1e-6, 0.1, 0.2])
    p.add_argument("--spots", default="all", help="'all' or '1,1;2,1;...' (1-based)")
    p.add_argument("--sample", default=None, help="SEED:COUNT random protocol subset")
    p.add_argument("--dedupe", action="store_true",
                   help="keep one expression per relabeling orbit")
    p.add_argument("--flex", action="store_true", help="also compute flex per noise")
    p.add_argument("--checkpoint", type=int, default=64, help="protocols per shard")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-shards", type=int, default=None,
                   help="stop after this many total shards (resume later)")
    add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("hist", help="entropy histogram CSV from sweep records")
    p.add_argument("--records", required=True)
    p.add_argument("--measure", default="shannon",
                   choices=["shannon", "shannon_ansatz", "min_entropy"])
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--bin-width", type=float, default=0.02)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("select", help="rank protocols from sweep records")
    p.add_argument("--records", required=True)
    p.add_argument("--filter", action="append", default=[],
                   help="e.g. 'shannon_ansatz@1e-06>1.7' or 'shannon_ansatz@1e-06~2.0'")
    p.add_argument("--eps", type=float, default=0.05, help="tolerance for '~' filters")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--maximize", default="shannon_ansatz@0.2")
    group.add_argument("--minimize", default=None)
    group.add_argument("--smoothest", action="store_true",
                       help="minimize the maximum |dH/dp| across the noise grid")
    p.add_argument("--top", type=int, default=None)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("curve", help="entropy-vs-noise CSV for one protocol")
    p.add_argument("--alpha", required=True)
    p.add_argument("--spot", required=True)
    p.add_argument("--p-grid", default="1e-6,0.01:0.30:0.01",
                   help="comma list and/or start:stop:step")
    p.add_argument("--out", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleError, EmptyBoxError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverError, UnboundedError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, CheckpointMismatchError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, BellcertError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
