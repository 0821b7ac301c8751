"""
Catalog of equation/operator pairs and their constraint systems.

The records ship as package data (``data/catalog-v1.jsonl``), one JSON object
per line. Equations and operators are templates in the parser grammar; they
are parsed once at load and instantiated by substituting exact rational
parameter values. Verification always runs on the V-form; the U-form is kept
for display and for cross-checking the substitution.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import sympy as sp

from . import symexpr as se
from .invariance import (
    CONDITIONAL,
    LIE,
    EvolutionPDE,
    InvarianceError,
    SymmetryOperator,
)
from .parser import ParseError, parse_equation, parse_expression, parse_operator

logger = logging.getLogger(__name__)

CATALOG_SCHEMA = "catalog-v1"
MIN_FIXTURES = 5
EQUIVALENCE_TRANSFORMS = ("galilean", "shift", "rd-specialization", "multiplier")

_CONSTRAINT = re.compile(r"^(?P<lhs>.+?)\s*(?P<op>!=|<=|>=|<|>)\s*(?P<rhs>.+)$")


class CatalogError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    lhs: sp.Expr
    op: str
    rhs: sp.Expr
    text: str

    @classmethod
    def parse(cls, text: str) -> Constraint:
        match = _CONSTRAINT.match(text.strip())
        if match is None:
            raise CatalogError("bad_catalog", f"cannot read constraint '{text}'")
        return cls(
            parse_expression(match["lhs"]),
            match["op"],
            parse_expression(match["rhs"]),
            text.strip(),
        )

    def holds(self, values: Mapping[str, sp.Expr]) -> bool:
        difference = se.substitute(self.lhs - self.rhs, values)
        if difference.free_symbols:
            raise CatalogError(
                "missing_parameter", f"constraint {self.text} needs {sorted(map(str, difference.free_symbols))}"
            )
        if self.op == "!=":
            return difference != 0
        if self.op == "<":
            return bool(difference < 0)
        if self.op == "<=":
            return bool(difference <= 0)
        if self.op == ">":
            return bool(difference > 0)
        return bool(difference >= 0)

    def to_assumptions(self, ledger: se.Assumptions) -> se.Assumptions:
        if self.op != "!=":
            return ledger
        return ledger.exclude(self.lhs, self.rhs, self.text)


@dataclass(frozen=True)
class Fixture:
    params: dict[str, str]
    candidate: dict[str, str] = field(default_factory=dict)
    expect: str = CONDITIONAL


@dataclass(frozen=True)
class Mutation:
    """Perturbation of the operator only: parameter overrides or a replacement operator."""

    name: str
    overrides: dict[str, str] = field(default_factory=dict)
    operator_text: str | None = None


@dataclass(frozen=True)
class FlowFixture:
    params: dict[str, str]
    profile: tuple[sp.Rational, sp.Rational]
    domain: tuple[sp.Rational, sp.Rational]
    t_end: sp.Rational
    mutation: dict[str, str] | None = None


@dataclass(frozen=True)
class ConstraintSystem:
    id: str
    title: str
    unknowns: tuple[str, ...]
    parameters: tuple[str, ...]
    derived: tuple[tuple[str, str], ...]
    equations: tuple[str, ...]
    domain: tuple[sp.Rational, sp.Rational]
    provenance: str = ""
    expressions: tuple[sp.Expr, ...] = ()

    def summary(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "unknowns": list(self.unknowns),
            "parameters": list(self.parameters),
            "equations": len(self.equations),
        }


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    title: str
    params: tuple[str, ...]
    constraints: tuple[Constraint, ...]
    derived: tuple[tuple[str, str], ...]
    roots: tuple[tuple[str, str], ...]
    guards: tuple[Constraint, ...]
    u_equation: str
    u_operator: str
    v_equation: str
    v_operator: str
    system: str | None
    system_params: dict[str, str]
    purely_conditional: bool
    flags: tuple[str, ...]
    see_also: tuple[str, ...]
    notes: str
    provenance: str
    fixtures: tuple[Fixture, ...]
    mutations: tuple[Mutation, ...]
    flow: FlowFixture | None = None

    def summary(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "params": list(self.params),
            "system": self.system,
            "purely_conditional": self.purely_conditional,
            "flags": list(self.flags),
        }

    def describe(self) -> dict[str, Any]:
        return {
            **self.summary(),
            "constraints": [c.text for c in self.constraints],
            "derived": [f"{name} = {value}" for name, value in self.derived],
            "roots": [f"{name}: {poly} = 0" for name, poly in self.roots],
            "u_equation": self.u_equation,
            "u_operator": self.u_operator,
            "v_equation": self.v_equation,
            "v_operator": self.v_operator,
            "see_also": list(self.see_also),
            "notes": self.notes,
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class Alias:
    id: str
    target: str
    equation: str
    notes: str = ""


@dataclass(frozen=True)
class Instance:
    """A concrete equation with one operator per root (one when there are no roots)."""

    entry_id: str
    pde: EvolutionPDE
    operators: tuple[SymmetryOperator, ...]
    values: dict[str, sp.Expr]
    roots: tuple[sp.Expr, ...] = ()
    form: str = "V"

    @property
    def operator(self) -> SymmetryOperator:
        return self.operators[0]


@dataclass(frozen=True)
class EquivalenceResult:
    entry_id: str
    transform: str
    description: str
    before: Instance
    after: Instance


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _rational(text: Any, where: str) -> sp.Rational:
    try:
        value = sp.Rational(str(text))
    except (TypeError, ValueError) as exc:
        raise CatalogError("bad_catalog", f"{where}: '{text}' is not a rational literal") from exc
    return value


def _require(record: dict[str, Any], key: str, line: int) -> Any:
    if key not in record:
        raise CatalogError("bad_catalog", f"line {line}: record is missing '{key}'")
    return record[key]


def _parse_system(record: dict[str, Any], line: int) -> ConstraintSystem:
    equations = tuple(_require(record, "equations", line))
    try:
        expressions = tuple(parse_expression(text) for text in equations)
    except ParseError as exc:
        raise CatalogError("bad_catalog", f"line {line}: {exc.render()}") from exc
    x0, x1 = record.get("domain", ["0", "1"])
    return ConstraintSystem(
        id=_require(record, "id", line),
        title=record.get("title", ""),
        unknowns=tuple(_require(record, "unknowns", line)),
        parameters=tuple(record.get("parameters", ())),
        derived=tuple((name, value) for name, value in record.get("derived", ())),
        equations=equations,
        domain=(_rational(x0, record["id"]), _rational(x1, record["id"])),
        provenance=record.get("provenance", ""),
        expressions=expressions,
    )


def _parse_mutation(record: dict[str, Any]) -> Mutation:
    return Mutation(
        name=record.get("name", ""),
        overrides=dict(record.get("operator", {})),
        operator_text=record.get("operator_text"),
    )


def _parse_flow(record: dict[str, Any] | None, entry_id: str) -> FlowFixture | None:
    if not record:
        return None
    v0, slope = record["profile"]
    x0, x1 = record.get("domain", ["0", "1"])
    return FlowFixture(
        params=dict(record["params"]),
        profile=(_rational(v0, entry_id), _rational(slope, entry_id)),
        domain=(_rational(x0, entry_id), _rational(x1, entry_id)),
        t_end=_rational(record.get("t_end", "1/2"), entry_id),
        mutation=record.get("mutation"),
    )


def _parse_entry(record: dict[str, Any], line: int) -> CatalogEntry:
    entry_id = _require(record, "id", line)
    try:
        constraints = tuple(Constraint.parse(text) for text in record.get("constraints", ()))
        guards = tuple(Constraint.parse(text) for text in record.get("guards", ()))
    except ParseError as exc:
        raise CatalogError("bad_catalog", f"{entry_id}: {exc.render()}") from exc
    fixtures = tuple(
        Fixture(dict(item["params"]), dict(item.get("candidate", {})), item.get("expect", CONDITIONAL))
        for item in record.get("fixtures", ())
    )
    return CatalogEntry(
        id=entry_id,
        title=record.get("title", ""),
        params=tuple(_require(record, "params", line)),
        constraints=constraints,
        derived=tuple((name, value) for name, value in record.get("derived", ())),
        roots=tuple((name, poly) for name, poly in record.get("roots", ())),
        guards=guards,
        u_equation=_require(record, "u_equation", line),
        u_operator=_require(record, "u_operator", line),
        v_equation=_require(record, "v_equation", line),
        v_operator=_require(record, "v_operator", line),
        system=record.get("system"),
        system_params=dict(record.get("system_params", {})),
        purely_conditional=bool(record.get("purely_conditional", False)),
        flags=tuple(record.get("flags", ())),
        see_also=tuple(record.get("see_also", ())),
        notes=record.get("notes", ""),
        provenance=record.get("provenance", ""),
        fixtures=fixtures,
        mutations=tuple(_parse_mutation(item) for item in record.get("mutations", ())),
        flow=_parse_flow(record.get("flow"), entry_id),
    )


class Catalog:
    """Immutable set of entries, aliases and constraint systems."""

    def __init__(
        self,
        entries: Iterable[CatalogEntry],
        systems: Iterable[ConstraintSystem],
        aliases: Iterable[Alias] = (),
    ):
        self.entries: dict[str, CatalogEntry] = {}
        self.systems: dict[str, ConstraintSystem] = {}
        self.aliases: dict[str, Alias] = {}
        for entry in entries:
            self._claim(entry.id)
            self.entries[entry.id] = entry
        for system in systems:
            self._claim(system.id)
            self.systems[system.id] = system
        for alias in aliases:
            self._claim(alias.id)
            self.aliases[alias.id] = alias
        self._templates: dict[tuple[str, str], Any] = {}
        self._lock = threading.Lock()

    def _claim(self, item_id: str) -> None:
        if item_id in self.entries or item_id in self.systems or item_id in self.aliases:
            raise CatalogError("bad_catalog", f"duplicate id '{item_id}'")

    # -- lookup -------------------------------------------------------------

    def resolve(self, entry_id: str) -> CatalogEntry:
        alias = self.aliases.get(entry_id)
        if alias is not None:
            entry_id = alias.target
        entry = self.entries.get(entry_id)
        if entry is None:
            raise CatalogError("unknown_entry", f"no catalog entry '{entry_id}'")
        return entry

    def system(self, system_id: str) -> ConstraintSystem:
        system = self.systems.get(system_id)
        if system is None:
            raise CatalogError("unknown_entry", f"no constraint system '{system_id}'")
        return system

    def list_entries(self) -> list[dict[str, Any]]:
        rows = [entry.summary() for entry in self.entries.values()]
        rows.extend(
            {"id": alias.id, "title": f"alias of {alias.target}", "alias_of": alias.target}
            for alias in self.aliases.values()
        )
        return rows

    # -- templates ----------------------------------------------------------

    def template(self, entry: CatalogEntry, key: str) -> Any:
        """Parsed template ``key`` (u_equation, u_operator, v_equation, v_operator), cached."""
        cache_key = (entry.id, key)
        with self._lock:
            if cache_key in self._templates:
                return self._templates[cache_key]
        text = getattr(entry, key)
        try:
            parsed = parse_equation(text) if key.endswith("equation") else parse_operator(text)
        except (ParseError, InvarianceError) as exc:
            detail = exc.render() if isinstance(exc, ParseError) else exc.message
            raise CatalogError("bad_catalog", f"{entry.id}.{key}: {detail}") from exc
        with self._lock:
            self._templates[cache_key] = parsed
        return parsed

    def validate(self) -> None:
        for alias in self.aliases.values():
            if alias.target not in self.entries:
                raise CatalogError("bad_catalog", f"alias {alias.id} points at unknown entry {alias.target}")
        for entry in self.entries.values():
            for key in ("u_equation", "u_operator", "v_equation", "v_operator"):
                self.template(entry, key)
            if entry.system and entry.system not in self.systems:
                raise CatalogError("bad_catalog", f"{entry.id} references unknown system {entry.system}")
            if len(entry.fixtures) < MIN_FIXTURES:
                raise CatalogError(
                    "bad_catalog", f"{entry.id} has {len(entry.fixtures)} fixtures; at least {MIN_FIXTURES} required"
                )
            if not entry.mutations:
                raise CatalogError("bad_catalog", f"{entry.id} has no mutation")
            for fixture in entry.fixtures:
                if fixture.expect not in (CONDITIONAL, LIE):
                    raise CatalogError("bad_catalog", f"{entry.id}: unknown expected status {fixture.expect}")
                if set(fixture.params) != set(entry.params):
                    raise CatalogError("bad_catalog", f"{entry.id}: fixture parameters {sorted(fixture.params)}")

    # -- instantiation --------------------------------------------------------

    def parameter_values(self, entry: CatalogEntry, bindings: Mapping[str, Any]) -> dict[str, sp.Expr]:
        """Bound parameters plus derived constants, after checking the constraints."""
        unknown = sorted(set(bindings) - set(entry.params))
        if unknown:
            raise CatalogError(
                "unknown_parameter", f"{entry.id} has no parameter(s) {', '.join(unknown)}; expected {', '.join(entry.params)}"
            )
        missing = [name for name in entry.params if name not in bindings]
        if missing:
            raise CatalogError("missing_parameter", f"{entry.id} needs {', '.join(missing)}")
        values: dict[str, sp.Expr] = {name: sp.Rational(str(bindings[name])) for name in entry.params}
        for constraint in entry.constraints:
            if not constraint.holds(values):
                raise CatalogError("constraint_violation", f"{entry.id} requires {constraint.text}")
        for name, text in entry.derived:
            values[name] = se.substitute(parse_expression(text), values)
        return values

    def assumptions(self, entry: CatalogEntry) -> se.Assumptions:
        ledger = se.EMPTY
        for constraint in entry.constraints:
            ledger = constraint.to_assumptions(ledger)
        return ledger

    def _roots(self, entry: CatalogEntry, values: dict[str, sp.Expr]) -> tuple[str | None, tuple[sp.Expr, ...]]:
        if not entry.roots:
            return None, ()
        name, text = entry.roots[0]
        symbol = se.PARAMETERS[name]
        poly = sp.Poly(se.substitute(parse_expression(text), values), symbol)
        solutions = sp.roots(poly)
        if sum(solutions.values()) != poly.degree() or any(not r.is_Rational for r in solutions):
            raise CatalogError(
                "irrational_roots",
                f"{entry.id}: roots of {poly.as_expr()} = 0 are not rational; choose parameters with rational roots",
            )
        found = sorted(solutions, key=lambda r: -r)
        for root in found:
            at_root = {**values, name: root}
            for guard in entry.guards:
                if not guard.holds(at_root):
                    raise CatalogError("degenerate_root", f"{entry.id}: root {name} = {root} violates {guard.text}")
        return name, tuple(found)

    def candidate_values(
        self, entry: CatalogEntry, candidate: Mapping[str, Any] | None, values: dict[str, sp.Expr]
    ) -> dict[str, sp.Expr]:
        if entry.system is None:
            if candidate:
                raise CatalogError("unknown_parameter", f"{entry.id} takes no candidate functions")
            return {}
        system = self.system(entry.system)
        candidate = dict(candidate or {})
        missing = [name for name in system.unknowns if name not in candidate]
        if missing:
            raise CatalogError(
                "missing_parameter", f"{entry.id} needs a solution of {system.id}: give {', '.join(missing)}"
            )
        resolved = {
            name: se.substitute(parse_expression(value) if isinstance(value, str) else value, values)
            for name, value in candidate.items()
        }
        system_values = {**values, **{k: sp.Rational(v) for k, v in entry.system_params.items()}}
        residuals = self.constraint_residual(system.id, resolved, system_values)
        failing = [i + 1 for i, value in enumerate(residuals) if value != 0]
        if failing:
            raise CatalogError(
                "constraint_violation",
                f"candidate does not solve {system.id}: equation(s) {', '.join(map(str, failing))} are nonzero",
            )
        return resolved

    def instantiate(
        self,
        entry_id: str,
        bindings: Mapping[str, Any],
        *,
        candidate: Mapping[str, Any] | None = None,
        form: str = "V",
        overrides: Mapping[str, str] | None = None,
        operator_text: str | None = None,
    ) -> Instance:
        """Concrete equation and operator(s).

        ``overrides`` perturb parameters or candidate functions in the operator
        only; ``operator_text`` replaces the operator altogether. Both exist for
        negative controls.
        """
        if form not in ("U", "V"):
            raise CatalogError("bad_form", f"form must be U or V, not {form}")
        if entry_id in self.aliases:
            alias = self.aliases[entry_id]
            raise CatalogError(
                "unknown_entry", f"{entry_id} is an alias of {alias.target} and cannot be instantiated by itself"
            )
        entry = self.resolve(entry_id)
        values = self.parameter_values(entry, bindings)
        functions = self.candidate_values(entry, candidate, values)
        root_name, roots = self._roots(entry, values)
        pde = self.template(entry, f"{form.lower()}_equation").substitute(values)
        if operator_text is not None:
            try:
                template = parse_operator(operator_text)
            except ParseError as exc:
                raise CatalogError("bad_operator", exc.render()) from exc
        else:
            template = self.template(entry, f"{form.lower()}_operator")

        operators = []
        for root in roots or (None,):
            scope = dict(values)
            if root is not None:
                scope[root_name] = root
            op_scope = {**scope, **functions}
            for name, text in (overrides or {}).items():
                if name not in op_scope:
                    raise CatalogError("unknown_parameter", f"cannot perturb '{name}' in {entry.id}")
                op_scope[name] = se.substitute(parse_expression(text), op_scope)
            operators.append(template.substitute(op_scope))
        logger.debug("instantiated %s with %d operator(s)", entry.id, len(operators))
        return Instance(entry.id, pde, tuple(operators), values, roots, form)

    def constraint_residual(
        self,
        system_id: str,
        candidate: Mapping[str, Any],
        params: Mapping[str, Any] | None = None,
    ) -> list[sp.Expr]:
        """Each equation of the system with the candidate substituted; all zero for a solution."""
        system = self.system(system_id)
        missing = [name for name in system.unknowns if name not in candidate]
        if missing:
            raise CatalogError("missing_parameter", f"{system_id} needs {', '.join(missing)}")
        values: dict[str, sp.Expr] = {
            name: sp.sympify(value) if not isinstance(value, str) else parse_expression(value)
            for name, value in (params or {}).items()
        }
        for name, text in system.derived:
            derived = se.substitute(parse_expression(text), values)
            if not derived.free_symbols:
                values[name] = derived
        functions = {
            name: parse_expression(value) if isinstance(value, str) else sp.sympify(value)
            for name, value in candidate.items()
        }
        functions = {name: se.substitute(value, values) for name, value in functions.items()}
        bindings = {**values, **functions}
        return [se.substitute(expr, bindings) for expr in system.expressions]

    # -- equivalence ----------------------------------------------------------

    def apply_equivalence(
        self,
        entry_id: str,
        transform_id: str,
        bindings: Mapping[str, Any],
        *,
        candidate: Mapping[str, Any] | None = None,
        multiplier: str | None = None,
    ) -> EquivalenceResult:
        if transform_id not in EQUIVALENCE_TRANSFORMS:
            raise CatalogError(
                "inapplicable_transform",
                f"unknown transform '{transform_id}'; expected one of {', '.join(EQUIVALENCE_TRANSFORMS)}",
            )
        entry = self.resolve(entry_id)
        if transform_id == "rd-specialization":
            if "lam" not in entry.params:
                raise CatalogError("inapplicable_transform", f"{entry.id} has no convection parameter lam")
            before = self.instantiate(entry.id, bindings, candidate=candidate)
            after = self.instantiate(entry.id, {**bindings, "lam": 0}, candidate=candidate)
            return EquivalenceResult(entry.id, transform_id, "lam = 0", before, after)

        before = self.instantiate(entry.id, bindings, candidate=candidate)
        if transform_id == "multiplier":
            return _apply_multiplier(before, multiplier)
        if transform_id == "galilean":
            return _apply_galilean(before)
        return _apply_shift(before)


def _transformed(instance: Instance, transforms: list[se.PointTransform]) -> Instance:
    residual = instance.pde.residual
    operators = []
    for op in instance.operators:
        tau, xi, eta = sp.Integer(1), op.xi, op.eta
        for transform in transforms:
            tau, xi, eta = se.transform_operator_coefficients(tau, xi, eta, transform)
        operators.append(SymmetryOperator(xi, eta, "V"))
    for transform in transforms:
        residual = se.apply_point_transform(residual, transform)
    pde = EvolutionPDE.from_equation(residual)
    return Instance(instance.entry_id, pde, tuple(operators), instance.values, instance.roots)


def _apply_galilean(instance: Instance) -> EquivalenceResult:
    pde = instance.pde
    speed = se.normalize(sp.cancel(-pde.F1 / pde.F0))
    if speed.free_symbols or speed == 0:
        raise CatalogError(
            "inapplicable_transform", f"convection {se.render(pde.F1)} is not a constant multiple of {se.render(pde.F0)}"
        )
    transform = se.galilean(speed)
    after = _transformed(instance, [transform])
    return EquivalenceResult(instance.entry_id, "galilean", transform.describe(), instance, after)


def _apply_shift(instance: Instance) -> EquivalenceResult:
    """Remove the quadratic reaction term of V_t = V_xx + lam*V*V_x + R(V), R cubic."""
    pde = instance.pde
    rate = se.normalize(sp.cancel(pde.F1 / se.V))
    if pde.F0 != 1 or rate.free_symbols or rate == 0:
        raise CatalogError("inapplicable_transform", "shift needs constant diffusivity and convection lam*V*Vx")
    try:
        reaction = sp.Poly(-pde.F2, se.V)
    except sp.PolynomialError as exc:
        raise CatalogError("inapplicable_transform", f"reaction {se.render(-pde.F2)} is not polynomial") from exc
    if reaction.degree() != 3 or reaction.free_symbols - {se.V}:
        raise CatalogError("inapplicable_transform", "shift needs a cubic reaction with numeric coefficients")
    a3, a2 = reaction.coeff_monomial(se.V**3), reaction.coeff_monomial(se.V**2)
    k = sp.Rational(-a2, 3 * a3)
    lam = -rate
    transforms = [se.shift(k), se.galilean(lam * k)]
    after = _transformed(instance, transforms)
    description = "; ".join(t.describe() for t in transforms)
    return EquivalenceResult(instance.entry_id, "shift", description, instance, after)


def _apply_multiplier(instance: Instance, multiplier: str | None) -> EquivalenceResult:
    if not multiplier:
        raise CatalogError("inapplicable_transform", "the multiplier transform needs a multiplier expression")
    factor = parse_expression(multiplier)
    if se.is_zero(factor):
        raise CatalogError("inapplicable_transform", "multiplier must not vanish identically")
    operators = tuple(op.raw().scaled(factor).normalized() for op in instance.operators)
    after = Instance(instance.entry_id, instance.pde, operators, instance.values, instance.roots, instance.form)
    return EquivalenceResult(instance.entry_id, "multiplier", f"Q -> ({se.render(factor)})*Q", instance, after)


def load_catalog(path: str | Path | None = None, *, validate: bool = True) -> Catalog:
    """Read a catalog-v1 file; the packaged data file by default."""
    if path is None:
        text = resources.files("condsym").joinpath("data/catalog-v1.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries: list[CatalogEntry] = []
    systems: list[ConstraintSystem] = []
    aliases: list[Alias] = []
    header_seen = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CatalogError("bad_catalog", f"line {line_no}: {exc.msg}") from exc
        kind = record.get("kind")
        if kind == "header":
            if record.get("schema") != CATALOG_SCHEMA:
                raise CatalogError("bad_catalog", f"unsupported catalog schema {record.get('schema')!r}")
            header_seen = True
        elif not header_seen:
            raise CatalogError("bad_catalog", f"line {line_no}: record before the {CATALOG_SCHEMA} header")
        elif kind == "entry":
            entries.append(_parse_entry(record, line_no))
        elif kind == "system":
            systems.append(_parse_system(record, line_no))
        elif kind == "alias":
            aliases.append(
                Alias(_require(record, "id", line_no), _require(record, "target", line_no),
                      record.get("equation", ""), record.get("notes", ""))
            )
        else:
            raise CatalogError("bad_catalog", f"line {line_no}: unknown record kind {kind!r}")
    catalog = Catalog(entries, systems, aliases)
    if validate:
        catalog.validate()
    logger.debug("loaded %d entries, %d systems, %d aliases", len(entries), len(systems), len(aliases))
    return catalog


_catalog: Catalog | None = None
_catalog_lock = threading.Lock()


def get_catalog() -> Catalog:
    global _catalog
    with _catalog_lock:
        if _catalog is None:
            _catalog = load_catalog()
        return _catalog


# Module-level conveniences over the packaged catalog.


def list_entries() -> list[dict[str, Any]]:
    return get_catalog().list_entries()


def instantiate(entry_id: str, bindings: Mapping[str, Any], **kwargs: Any) -> Instance:
    return get_catalog().instantiate(entry_id, bindings, **kwargs)


def constraint_residual(
    system_id: str, candidate: Mapping[str, Any], params: Mapping[str, Any] | None = None
) -> list[sp.Expr]:
    return get_catalog().constraint_residual(system_id, candidate, params)


def apply_equivalence(entry_id: str, transform_id: str, bindings: Mapping[str, Any], **kwargs: Any) -> EquivalenceResult:
    return get_catalog().apply_equivalence(entry_id, transform_id, bindings, **kwargs)
