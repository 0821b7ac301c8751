"""
MCP server exposing the condsym commands as tools.

Every tool returns the same report-v1 envelope the CLI prints with --json.
"""

from __future__ import annotations

import logging
from collections.abc import AsyncIterator
from contextlib import asynccontextmanager
from typing import Any

from mcp.server.fastmcp import FastMCP

from .catalog import get_catalog
from .handlers import run_command

logger = logging.getLogger(__name__)


@asynccontextmanager
async def _lifespan(server: FastMCP) -> AsyncIterator[None]:
    """Load and validate the packaged catalog before the first call."""
    try:
        get_catalog()
    except Exception as exc:
        logger.warning("Catalog load failed, catalog tools will report errors: %s", exc)
    yield


mcp = FastMCP(
    "condsym-mcp",
    instructions=(
        "Exact verification of Q-conditional symmetry operators for reaction-diffusion-convection "
        "equations. Parameters are k=v lists with rational values; every tool returns a report-v1 "
        "document whose exit_code is 0 on success, 1 for a negative verdict, 2 for bad input and "
        "3 for unsupported classes."
    ),
    lifespan=_lifespan,
)


def _run(command: str, **arguments: Any) -> dict[str, Any]:
    return run_command(command, {k: v for k, v in arguments.items() if v is not None})


@mcp.tool()
def verify_symmetry(
    entry: str | None = None,
    equation: str | None = None,
    operator: str | None = None,
    params: str | None = None,
    candidate: str | None = None,
    form: str = "V",
    assumptions: str | None = None,
) -> dict[str, Any]:
    """Decide whether an operator is a Q-conditional symmetry of an equation.

    Args:
        entry: Catalog entry id (e.g., "thm1.i"). Mutually exclusive with equation.
        equation: Equation text, "Vxx = V^n*Vt - lam*Vx + F(V)" or a U-form "Ut = D(U^m*Ux,x) + ...".
        operator: Operator text "Q = Dt + xi*Dx + eta*DV". Overrides the entry operator when both are given.
        params: Parameter values "m=1,lam=1,..." (rationals such as 1/2 or decimals).
        candidate: Solution of the entry's constraint system, "f=0;g=0;h=1".
        form: "V" (canonical form, default) or "U" (original variables) for catalog entries.
        assumptions: Extra inequations, e.g. "n!=1,lam2!=0".

    Returns:
        report-v1 dict; payload has "verdict" (ConditionalSymmetry, LieSymmetry or NotASymmetry)
        and one row per operator with the witness coefficient when the verdict is negative.
    """
    return _run(
        "verify", entry=entry, equation=equation, operator=operator, params=params, candidate=candidate, form=form,
        assumptions=assumptions,
    )


@mcp.tool()
def determining_system(family: str, ansatz: str | None = None, assumptions: str | None = None) -> dict[str, Any]:
    """Generate the nonclassical determining equations of a family.

    Args:
        family: One of "power-plain", "exp-plain", "power-convective", "exp-convective".
        ansatz: Optional structured ansatz to substitute and split, e.g. "xi=f;eta=g*V+h".
        assumptions: Inequations on the exponent, e.g. "n!=1".

    Returns:
        report-v1 dict; payload "equations" lists {label, equation} with label the V_x power
        (and the V-atom class after splitting).
    """
    return _run("detsys", family=family, ansatz=ansatz, assumptions=assumptions)


@mcp.tool()
def numeric_check(
    entry: str | None = None,
    system: str | None = None,
    params: str | None = None,
    candidate: str | None = None,
    grid: int | None = None,
    order: int = 4,
    mutate: bool = False,
) -> dict[str, Any]:
    """Run an invariant-flow check (entry) or a constraint-system residual check (system).

    Args:
        entry: Catalog entry with a flow fixture (thm1.i, thm1.ii, thm2.i, thm2.iv).
        system: Constraint system id (sys9, ode10, sys8ad, sys14ad).
        params: Parameter values; defaults to the entry's flow fixture.
        candidate: Candidate solution for a system, e.g. "h=6*x^(-2)".
        grid: Number of grid points (default 201 for flows, 1001 for systems).
        order: Finite-difference order, 2 or 4.
        mutate: Run the entry's broken-operator negative control instead.

    Returns:
        report-v1 dict; status "pass" or "fail" with the failing metrics listed.
    """
    return _run(
        "numcheck", entry=entry, system=system, params=params, candidate=candidate, grid=grid, order=order,
        mutate=mutate,
    )


@mcp.tool()
def catalog_list() -> dict[str, Any]:
    """List catalog entries, aliases and constraint systems."""
    return _run("catalog_list")


@mcp.tool()
def catalog_show(id: str) -> dict[str, Any]:
    """Show one catalog entry, alias or constraint system.

    Args:
        id: Entry, alias or system id (e.g., "thm2.ii", "remark2.cubic", "sys9").
    """
    return _run("catalog_show", id=id)


@mcp.tool()
def catalog_verify_all(workers: int | None = None) -> dict[str, Any]:
    """Run every catalog fixture and negative control.

    Args:
        workers: Entries checked in parallel (default CONDSYM_WORKERS or 1).

    Returns:
        report-v1 dict; status "pass" when every entry behaves as recorded, else "fail"
        with the failing ids in payload "failed".
    """
    return _run("catalog_verify_all", workers=workers)


@mcp.tool()
def operator_equivalence(
    op1: str | None = None,
    op2: str | None = None,
    entry: str | None = None,
    transform: str | None = None,
    params: str | None = None,
    multiplier: str | None = None,
) -> dict[str, Any]:
    """Compare two operators up to a multiplier, or move a catalog entry through an equivalence transform.

    Args:
        op1: First operator text.
        op2: Second operator text.
        entry: Catalog entry id, used with transform.
        transform: "galilean", "shift", "rd-specialization" or "multiplier".
        params: Parameter values for the entry.
        multiplier: Multiplier expression for the "multiplier" transform.

    Returns:
        report-v1 dict; for op1/op2 the payload has "equivalent" and "multiplier", for
        transforms the verdicts before and after.
    """
    return _run(
        "equiv", op1=op1, op2=op2, entry=entry, transform=transform, params=params, multiplier=multiplier
    )


def main() -> None:
    mcp.run()
