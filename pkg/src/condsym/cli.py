"""
Command-line front end.

    condsym verify --entry thm1.i --params m=1,lam=1,lam1=1,lam2=1,lam3=0
    condsym detsys --family power-plain --ansatz "xi=f;eta=g*V+h" --assume "n!=1"
    condsym numcheck --system ode10 --candidate "h=6*x^(-2)" --params lam=0,lam2=0
    condsym catalog verify-all --workers 4 --json

Exit codes: 0 success, 1 negative verdict or failed numeric gate, 2 bad input,
3 unsupported class or internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Sequence

from . import __version__
from .handlers import run_command
from .report import dumps, render_text

logger = logging.getLogger(__name__)

DEFAULT_LOG_LEVEL = os.getenv("CONDSYM_LOG_LEVEL", "WARNING")


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level: int | str = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = DEFAULT_LOG_LEVEL.upper()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # subcommands must not reset flags given before them
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="emit a report-v1 JSON document")
    common.add_argument(
        "-v", "--verbose", action="count", default=argparse.SUPPRESS, help="log more (repeat for debug)"
    )

    parser = argparse.ArgumentParser(
        prog="condsym",
        description="Q-conditional symmetries of reaction-diffusion-convection equations.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"condsym {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", parents=[common], help="verify an operator")
    source = verify.add_mutually_exclusive_group(required=True)
    source.add_argument("--entry", help="catalog entry id")
    source.add_argument("--equation", help='equation, e.g. "Vxx = Vt" or "Ut = D(U^m*Ux,x) + C(U)"')
    verify.add_argument("--operator", help='operator, e.g. "Q = Dt + V*DV"; overrides the entry operator')
    verify.add_argument("--params", help="parameter values k=v,k=v (rationals)")
    verify.add_argument("--candidate", help="solution of the entry's constraint system, f=...;g=...")
    verify.add_argument("--form", choices=("U", "V"), default="V")
    verify.add_argument("--assume", help="extra inequations, e.g. n!=1")

    detsys = commands.add_parser("detsys", parents=[common], help="print a determining system")
    detsys.add_argument("--family", required=True, help="power-plain, exp-plain, power-convective or exp-convective")
    detsys.add_argument("--ansatz", help='structured ansatz to split under, e.g. "xi=f;eta=g*V+h"')
    detsys.add_argument("--assume", help="inequations on n, e.g. n!=1")
    detsys.add_argument("--full", action="store_true", help="print derivatives in D(...) form")

    numcheck = commands.add_parser("numcheck", parents=[common], help="run a numeric check")
    target = numcheck.add_mutually_exclusive_group(required=True)
    target.add_argument("--entry", help="catalog entry with an invariant-flow fixture")
    target.add_argument("--system", help="constraint system id")
    numcheck.add_argument("--params", help="parameter values k=v,k=v")
    numcheck.add_argument("--candidate", help="candidate solution f=...;g=...;h=...")
    numcheck.add_argument("--grid", type=int, help="number of grid points")
    numcheck.add_argument("--order", type=int, choices=(2, 4), default=4, help="finite-difference order")
    numcheck.add_argument("--t-end", type=float, dest="t_end", help="final time of the flow check")
    numcheck.add_argument("--mutate", action="store_true", help="run the entry's broken-operator control")

    catalog = commands.add_parser("catalog", parents=[common], help="browse or verify the catalog")
    actions = catalog.add_subparsers(dest="action", required=True)
    actions.add_parser("list", parents=[common], help="list entries and systems")
    show = actions.add_parser("show", parents=[common], help="show one entry, alias or system")
    show.add_argument("id")
    verify_all = actions.add_parser("verify-all", parents=[common], help="run every fixture and mutation")
    verify_all.add_argument("--workers", type=int, help="parallel entries (default CONDSYM_WORKERS or 1)")

    equiv = commands.add_parser("equiv", parents=[common], help="compare operators or apply a transform")
    equiv.add_argument("--op1", help="first operator")
    equiv.add_argument("--op2", help="second operator")
    equiv.add_argument("--entry", help="catalog entry to transform")
    equiv.add_argument("--transform", help="galilean, shift, rd-specialization or multiplier")
    equiv.add_argument("--params", help="parameter values k=v,k=v")
    equiv.add_argument("--candidate", help="candidate solution for entries with a constraint system")
    equiv.add_argument("--multiplier", help="multiplier expression for the multiplier transform")
    return parser


def _command(args: argparse.Namespace) -> tuple[str, dict[str, Any]]:
    if args.command == "verify":
        return "verify", {
            "entry": args.entry,
            "equation": args.equation,
            "operator": args.operator,
            "params": args.params,
            "candidate": args.candidate,
            "form": args.form,
            "assumptions": args.assume,
        }
    if args.command == "detsys":
        return "detsys", {
            "family": args.family,
            "ansatz": args.ansatz,
            "assumptions": args.assume,
            "compact": not args.full,
        }
    if args.command == "numcheck":
        return "numcheck", {
            "entry": args.entry,
            "system": args.system,
            "params": args.params,
            "candidate": args.candidate,
            "grid": args.grid,
            "order": args.order,
            "t_end": args.t_end,
            "mutate": args.mutate,
        }
    if args.command == "catalog":
        if args.action == "list":
            return "catalog_list", {}
        if args.action == "show":
            return "catalog_show", {"id": args.id}
        return "catalog_verify_all", {"workers": args.workers}
    return "equiv", {
        "op1": args.op1,
        "op2": args.op2,
        "entry": args.entry,
        "transform": args.transform,
        "params": args.params,
        "candidate": args.candidate,
        "multiplier": args.multiplier,
    }


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(getattr(args, "verbose", 0))
    name, arguments = _command(args)
    arguments = {k: v for k, v in arguments.items() if v is not None}
    report = run_command(name, arguments)
    if getattr(args, "json", False):
        print(dumps(report))
    else:
        print(render_text(report))
    return report["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
