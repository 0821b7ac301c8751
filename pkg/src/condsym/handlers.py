"""
Command handlers shared by the CLI and the MCP server.

Handlers take the arguments as a user types them (strings for parameters,
candidates and assumptions) and return an Outcome. `run_command` turns the
outcome, or the error that stopped the handler, into a report-v1 envelope
with one of the exit codes 0/1/2/3.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import sympy as sp

from . import symexpr as se
from .catalog import Catalog, CatalogError, Constraint, get_catalog
from .invariance import (
    CONDITIONAL,
    FAMILIES,
    LIE,
    NOT_A_SYMMETRY,
    EvolutionPDE,
    InvarianceError,
    SymmetryOperator,
    Verdict,
    equivalent_up_to_multiplier,
    family_pde,
    generate_determining_system,
    split_determining,
    verify as verify_operator,
)
from .numerics import Grid1D, NumericsError, invariant_flow_check, ode_constraint_check
from .parser import (
    ParseError,
    parse_ansatz,
    parse_bindings,
    parse_candidate,
    parse_equation,
    parse_operator,
    parse_raw_operator,
)
from .report import ReportError, build_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_UNSUPPORTED = 3

DEFAULT_WORKERS = int(os.getenv("CONDSYM_WORKERS", "1"))
DEFAULT_CONSTRAINT_GRID = 1001

_UNSUPPORTED_PARSE = {"unsupported_operator_class", "not_rdc", "non_power_diffusivity"}
_UNSUPPORTED_CATALOG = {"bad_catalog"}
_UNSUPPORTED_NUMERICS = {"unsupported_operator", "unsupported_system"}
_USAGE_NUMERICS = {"grid_too_small", "stencil_underflow"}


class CommandError(RuntimeError):
    """Invalid command arguments; carries the exit code to report."""

    def __init__(self, code: str, message: str, exit_code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code
        self.message = message
        self.exit_code = exit_code


@dataclass
class Outcome:
    status: str
    payload: dict[str, Any]
    exit_code: int = EXIT_OK
    assumptions: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Argument coercion
# ---------------------------------------------------------------------------


def _joined(value: str | Mapping[str, Any] | None, separator: str) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return separator.join(f"{k}={v}" for k, v in value.items())


def _bindings(params: str | Mapping[str, Any] | None) -> dict[str, sp.Rational]:
    return parse_bindings(_joined(params, ","))


def _candidate(candidate: str | Mapping[str, Any] | None) -> dict[str, sp.Expr]:
    return parse_candidate(_joined(candidate, ";"))


def _ledger(assumptions: str | list[str] | None) -> se.Assumptions:
    """Parse ``n!=1, m!=-1`` into an assumptions ledger."""
    if not assumptions:
        return se.EMPTY
    items = assumptions.split(",") if isinstance(assumptions, str) else list(assumptions)
    ledger = se.EMPTY
    for item in items:
        if not item.strip():
            continue
        try:
            constraint = Constraint.parse(item)
        except CatalogError as exc:
            raise CommandError("bad_assumption", exc.message) from exc
        if constraint.op != "!=":
            raise CommandError("bad_assumption", f"only inequations 'a != b' are supported, got '{item.strip()}'")
        ledger = constraint.to_assumptions(ledger)
    return ledger


def _one_of(what: str, **options: Any) -> str:
    given = [name for name, value in options.items() if value]
    if len(given) != 1:
        raise CommandError("bad_arguments", f"{what}: give exactly one of {', '.join('--' + k for k in options)}")
    return given[0]


# ---------------------------------------------------------------------------
# Payload helpers
# ---------------------------------------------------------------------------


def _verdict_payload(op: SymmetryOperator, verdict: Verdict) -> dict[str, Any]:
    row: dict[str, Any] = {"operator": op.render(), "status": verdict.status}
    if op.multiplier != 1:
        row["normalized_by"] = op.multiplier
    if verdict.status == NOT_A_SYMMETRY:
        row["witness"] = verdict.witness
        row["witness_term"] = f"V_x^{verdict.witness_degree}"
    if verdict.multiplier is not None:
        row["lie_multiplier"] = verdict.multiplier
    return row


def _overall(statuses: list[str]) -> str:
    if NOT_A_SYMMETRY in statuses:
        return NOT_A_SYMMETRY
    if CONDITIONAL in statuses:
        return CONDITIONAL
    return LIE


def _verify_all(
    pde: EvolutionPDE, operators: tuple[SymmetryOperator, ...], ledger: se.Assumptions
) -> tuple[str, list[dict[str, Any]]]:
    rows = []
    for op in operators:
        rows.append(_verdict_payload(op, verify_operator(pde, op, ledger)))
    return _overall([row["status"] for row in rows]), rows


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------


def verify(
    entry: str | None = None,
    equation: str | None = None,
    operator: str | None = None,
    params: str | Mapping[str, Any] | None = None,
    candidate: str | Mapping[str, Any] | None = None,
    form: str = "V",
    assumptions: str | None = None,
    catalog: Catalog | None = None,
) -> Outcome:
    """Conditional-symmetry verdict for a catalog entry or an equation/operator pair."""
    source = _one_of("verify", entry=entry, equation=equation)
    ledger = _ledger(assumptions)
    bindings = _bindings(params)
    if source == "equation":
        if not operator:
            raise CommandError("bad_arguments", "verify --equation needs --operator")
        if candidate:
            raise CommandError("bad_arguments", "--candidate only applies to catalog entries")
        pde = parse_equation(equation).substitute(bindings)
        op = parse_operator(operator).substitute(bindings)
        status, rows = _verify_all(pde, (op,), ledger)
        payload = {"equation": pde.render(), "operators": rows}
    else:
        catalog = catalog or get_catalog()
        record = catalog.resolve(entry)
        instance = catalog.instantiate(
            entry, bindings, candidate=_candidate(candidate), form=form, operator_text=operator
        )
        ledger = ledger.merged(catalog.assumptions(record))
        status, rows = _verify_all(instance.pde, instance.operators, ledger)
        if instance.roots:
            root_name = record.roots[0][0]
            for row, root in zip(rows, instance.roots):
                row["root"] = {root_name: root}
        payload = {
            "entry": record.id,
            "form": form,
            "params": dict(bindings),
            "equation": instance.pde.render(),
            "operators": rows,
        }
    payload["verdict"] = status
    exit_code = EXIT_FAILED if status == NOT_A_SYMMETRY else EXIT_OK
    return Outcome(status, payload, exit_code, ledger.describe())


def detsys(
    family: str,
    ansatz: str | None = None,
    assumptions: str | None = None,
    compact: bool = True,
) -> Outcome:
    """Determining system of a family, optionally split under a structured ansatz."""
    if family not in FAMILIES:
        raise CommandError("unknown_family", f"unknown family '{family}'; expected one of {', '.join(FAMILIES)}")
    ledger = _ledger(assumptions)
    pde = family_pde(family)
    system = generate_determining_system(pde, ledger)
    if ansatz:
        system = split_determining(system, parse_ansatz(ansatz), ledger)
    rendered = system.render(compact=compact)
    payload = {
        "family": family,
        "equation": pde.render(),
        "ansatz": ansatz,
        "unknowns": list(system.unknowns),
        "count": len(system),
        "equations": [{"label": label, "equation": text} for label, text in zip(system.labels, rendered)],
        "merges": list(system.merges),
    }
    return Outcome("ok", payload, EXIT_OK, system.assumptions.describe())


def _flow_payload(report: Any) -> dict[str, Any]:
    failing = []
    if report.max_flow_deviation > report.tolerance:
        failing.append(f"flow deviation {report.max_flow_deviation:.3e} > {report.tolerance:g}")
    if report.max_pde_residual > report.tolerance:
        failing.append(f"pde residual {report.max_pde_residual:.3e} > {report.tolerance:g}")
    for ratio in report.refinement_ratios:
        if ratio is not None and not 3.0 <= ratio <= 5.0:
            failing.append(f"refinement ratio {ratio:.3f} outside [3, 5]")
    return {
        "kind": "flow",
        "entry": report.entry_id,
        "params": report.params,
        "perturbed": report.perturbed,
        "levels": [{k: row[k] for k in ("n", "spacing", "deviation", "residual", "failure") if k in row} for row in report.levels],
        "refinement_ratios": report.refinement_ratios,
        "max_flow_deviation": report.max_flow_deviation,
        "max_pde_residual": report.max_pde_residual,
        "tolerance": report.tolerance,
        "passed": report.passed,
        "failing": failing,
        "notes": report.notes,
    }


def _constraint_payload(report: Any) -> dict[str, Any]:
    failing = []
    if report.max_residual > report.tolerance:
        failing.append(f"fd residual {report.max_residual:.3e} > {report.tolerance:g}")
    if report.integration is not None and report.integration["max_relative_error"] > 10 * report.tolerance:
        failing.append(f"integration error {report.integration['max_relative_error']:.3e}")
    return {
        "kind": "constraint",
        "system": report.system_id,
        "order": report.order,
        "levels": report.levels,
        "refinement_ratio": report.ratio,
        "exact": report.exact,
        "symbolic_residuals": report.symbolic_residuals,
        "symbolic_grid_residual": report.symbolic_grid_residual,
        "integration": report.integration,
        "tolerance": report.tolerance,
        "passed": report.passed,
        "failing": failing,
    }


def numcheck(
    entry: str | None = None,
    system: str | None = None,
    params: str | Mapping[str, Any] | None = None,
    candidate: str | Mapping[str, Any] | None = None,
    grid: int | None = None,
    order: int = 4,
    t_end: float | None = None,
    mutate: bool = False,
    catalog: Catalog | None = None,
) -> Outcome:
    """Invariant-flow check of an entry, or finite-difference check of a constraint system."""
    source = _one_of("numcheck", entry=entry, system=system)
    catalog = catalog or get_catalog()
    bindings = _bindings(params)
    if source == "entry":
        record = catalog.resolve(entry)
        overrides = None
        if mutate:
            if record.flow is None or not record.flow.mutation:
                raise CommandError("bad_arguments", f"{record.id} has no flow negative control")
            overrides = record.flow.mutation
        level = None
        if grid is not None:
            x0, x1 = record.flow.domain if record.flow else (0, 1)
            level = Grid1D(float(x0), float(x1), int(grid))
        report = invariant_flow_check(
            record.id, bindings or None, level, t_end, overrides=overrides, catalog=catalog
        )
        payload = _flow_payload(report)
    else:
        if not candidate:
            raise CommandError("bad_arguments", "numcheck --system needs --candidate")
        record = catalog.system(system)
        x0, x1 = record.domain
        level = Grid1D(float(x0), float(x1), int(grid or DEFAULT_CONSTRAINT_GRID))
        report = ode_constraint_check(system, _candidate(candidate), bindings, level, order=order, catalog=catalog)
        payload = _constraint_payload(report)
    passed = payload["passed"]
    return Outcome("pass" if passed else "fail", payload, EXIT_OK if passed else EXIT_FAILED)


def catalog_list(catalog: Catalog | None = None) -> Outcome:
    catalog = catalog or get_catalog()
    entries = catalog.list_entries()
    payload = {
        "entries": entries,
        "systems": [s.summary() for s in catalog.systems.values()],
        "count": len(catalog.entries),
    }
    return Outcome("ok", payload)


def catalog_show(id: str, catalog: Catalog | None = None) -> Outcome:
    catalog = catalog or get_catalog()
    if id in catalog.systems:
        record = catalog.system(id)
        payload = {
            **record.summary(),
            "kind": "system",
            "derived": [f"{name} = {value}" for name, value in record.derived],
            "equation_list": [f"{eq} = 0" for eq in record.equations],
            "domain": list(record.domain),
            "provenance": record.provenance,
        }
        return Outcome("ok", payload)
    if id in catalog.aliases:
        alias = catalog.aliases[id]
        payload = {
            "kind": "alias",
            "id": alias.id,
            "alias_of": alias.target,
            "equation": alias.equation,
            "notes": alias.notes,
            "target": catalog.resolve(alias.target).describe(),
        }
        return Outcome("ok", payload)
    record = catalog.resolve(id)
    payload = {"kind": "entry", **record.describe(), "fixtures": len(record.fixtures)}
    payload["mutations"] = [m.name for m in record.mutations]
    return Outcome("ok", payload)


def _check_entry(catalog: Catalog, entry_id: str) -> dict[str, Any]:
    record = catalog.entries[entry_id]
    ledger = catalog.assumptions(record)
    fixtures = []
    for fixture in record.fixtures:
        instance = catalog.instantiate(entry_id, fixture.params, candidate=fixture.candidate)
        status, _ = _verify_all(instance.pde, instance.operators, ledger)
        fixtures.append({"params": fixture.params, "status": status, "ok": status == fixture.expect})
    mutations = []
    base = record.fixtures[0]
    for mutation in record.mutations:
        instance = catalog.instantiate(
            entry_id,
            base.params,
            candidate=base.candidate,
            overrides=mutation.overrides or None,
            operator_text=mutation.operator_text,
        )
        status, rows = _verify_all(instance.pde, instance.operators, ledger)
        witness = next((row.get("witness") for row in rows if "witness" in row), None)
        mutations.append(
            {"name": mutation.name, "status": status, "witness": witness, "ok": status == NOT_A_SYMMETRY}
        )
    ok = all(f["ok"] for f in fixtures) and all(m["ok"] for m in mutations)
    if not ok:
        logger.warning("catalog entry %s failed verification", entry_id)
    return {"id": entry_id, "ok": ok, "fixtures": fixtures, "mutations": mutations}


def catalog_verify_all(workers: int | None = None, catalog: Catalog | None = None) -> Outcome:
    """Fixtures and mutations of every entry; the report is ordered by entry id."""
    catalog = catalog or get_catalog()
    workers = workers or DEFAULT_WORKERS
    if workers < 1:
        raise CommandError("bad_arguments", "--workers must be at least 1")
    ids = sorted(catalog.entries)

    def run(entry_id: str) -> dict[str, Any]:
        try:
            return _check_entry(catalog, entry_id)
        except Exception as exc:
            logger.warning("catalog entry %s raised %s", entry_id, exc)
            code = getattr(exc, "code", "internal")
            return {"id": entry_id, "ok": False, "error": {"code": code, "message": str(exc)}}

    if workers == 1:
        results = [run(entry_id) for entry_id in ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ids))
    results.sort(key=lambda row: row["id"])
    failed = [row["id"] for row in results if not row["ok"]]
    payload = {"entries": results, "count": len(results), "failed": failed}
    return Outcome("fail" if failed else "pass", payload, EXIT_FAILED if failed else EXIT_OK)


def equiv(
    op1: str | None = None,
    op2: str | None = None,
    entry: str | None = None,
    transform: str | None = None,
    params: str | Mapping[str, Any] | None = None,
    candidate: str | Mapping[str, Any] | None = None,
    multiplier: str | None = None,
    catalog: Catalog | None = None,
) -> Outcome:
    """Operator equivalence up to a multiplier, or an equivalence transform of a catalog entry."""
    if op1 or op2:
        if not (op1 and op2) or entry:
            raise CommandError("bad_arguments", "equiv needs both --op1 and --op2, or --entry with --transform")
        factor = equivalent_up_to_multiplier(parse_raw_operator(op1), parse_raw_operator(op2))
        payload = {"op1": op1, "op2": op2, "equivalent": factor is not None, "multiplier": factor}
        return Outcome("pass" if factor is not None else "fail", payload, EXIT_OK if factor is not None else EXIT_FAILED)
    if not (entry and transform):
        raise CommandError("bad_arguments", "equiv needs both --op1 and --op2, or --entry with --transform")
    catalog = catalog or get_catalog()
    record = catalog.resolve(entry)
    result = catalog.apply_equivalence(
        entry, transform, _bindings(params), candidate=_candidate(candidate), multiplier=multiplier
    )
    ledger = catalog.assumptions(record)
    before_status, before_rows = _verify_all(result.before.pde, result.before.operators, ledger)
    after_status, after_rows = _verify_all(result.after.pde, result.after.operators, ledger)
    payload = {
        "entry": result.entry_id,
        "transform": result.transform,
        "description": result.description,
        "before": {"equation": result.before.pde.render(), "status": before_status, "operators": before_rows},
        "after": {"equation": result.after.pde.render(), "status": after_status, "operators": after_rows},
    }
    preserved = after_status != NOT_A_SYMMETRY
    return Outcome("pass" if preserved else "fail", payload, EXIT_OK if preserved else EXIT_FAILED, ledger.describe())


COMMAND_HANDLERS: dict[str, Callable[..., Outcome]] = {
    "verify": verify,
    "detsys": detsys,
    "numcheck": numcheck,
    "catalog_list": catalog_list,
    "catalog_show": catalog_show,
    "catalog_verify_all": catalog_verify_all,
    "equiv": equiv,
}


# ---------------------------------------------------------------------------
# Error mapping
# ---------------------------------------------------------------------------


def classify(exc: BaseException) -> tuple[str, int]:
    """(code, exit code) for an exception raised by a handler."""
    code = getattr(exc, "code", "internal")
    if isinstance(exc, CommandError):
        return code, exc.exit_code
    if isinstance(exc, ParseError):
        return code, EXIT_UNSUPPORTED if code in _UNSUPPORTED_PARSE else EXIT_USAGE
    if isinstance(exc, CatalogError):
        return code, EXIT_UNSUPPORTED if code in _UNSUPPORTED_CATALOG else EXIT_USAGE
    if isinstance(exc, InvarianceError):
        return code, EXIT_USAGE if code == "bad_operator" else EXIT_UNSUPPORTED
    if isinstance(exc, se.AssumptionError):
        return code, EXIT_USAGE
    if isinstance(exc, se.SymexprError):
        return code, EXIT_UNSUPPORTED
    if isinstance(exc, NumericsError):
        if code in _UNSUPPORTED_NUMERICS:
            return code, EXIT_UNSUPPORTED
        if code in _USAGE_NUMERICS:
            return code, EXIT_USAGE
        return code, EXIT_FAILED
    return "internal", EXIT_UNSUPPORTED


def _error_payload(exc: BaseException, code: str) -> dict[str, Any]:
    message = getattr(exc, "message", None) or str(exc) or type(exc).__name__
    error: dict[str, Any] = {"code": code, "message": message}
    if isinstance(exc, ParseError):
        error["diagnostics"] = exc.render().splitlines()
    return {"error": error}


def run_command(name: str, arguments: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Run one command and return its report-v1 envelope; never raises for handler errors."""
    args = dict(arguments or {})
    started = time.perf_counter()
    handler = COMMAND_HANDLERS.get(name)
    try:
        if handler is None:
            raise CommandError("unknown_command", f"unknown command '{name}'")
        outcome = handler(**args)
    except Exception as exc:
        code, exit_code = classify(exc)
        if code == "internal":
            logger.exception("Unexpected error in %s", name)
        else:
            logger.debug("%s failed with %s: %s", name, code, exc)
        outcome = Outcome("error", _error_payload(exc, code), exit_code)
    elapsed = time.perf_counter() - started
    try:
        return build_report(
            name, {k: v for k, v in args.items() if k != "catalog"}, outcome.status, outcome.exit_code, outcome.payload,
            assumptions=outcome.assumptions, elapsed=elapsed,
        )
    except ReportError:
        logger.exception("Report for %s failed validation", name)
        fallback = {"error": {"code": "bad_report", "message": f"report for {name} failed validation"}}
        return build_report(name, {}, "error", EXIT_UNSUPPORTED, fallback, elapsed=elapsed)
