"""
Conditional invariance of evolution equations V_xx = F0*V_t + F1*V_x + F2.

Operators are Q = Dt + xi*Dx + eta*DV. The conditional residual applies the
second prolongation of Q to the equation and reduces it on the invariant
surface condition V_t = eta - xi*V_x; what remains is a polynomial of degree
at most 3 in V_x whose coefficients are the determining equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import sympy as sp
from sympy.core.function import AppliedUndef

from . import symexpr as se

logger = logging.getLogger(__name__)

CONDITIONAL = "ConditionalSymmetry"
LIE = "LieSymmetry"
NOT_A_SYMMETRY = "NotASymmetry"

FAMILIES = ("power-plain", "exp-plain", "power-convective", "exp-convective")

V_t = se.jet("V", "t")
V_x = se.jet("V", "x")
V_xx = se.jet("V", "xx")
V_tx = se.jet("V", "tx")
V_tt = se.jet("V", "tt")


class InvarianceError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# Equations and operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UFormOrigin:
    """How a U-form equation was brought to V-form."""

    m: sp.Expr
    kappa: sp.Expr
    convection: sp.Expr
    reaction: sp.Expr
    transform: se.PointTransform
    text: str = ""

    def substitute(self, bindings: Mapping) -> UFormOrigin:
        transform = replace(self.transform, parameter=se.substitute(self.transform.parameter, bindings))
        return UFormOrigin(
            m=se.substitute(self.m, bindings),
            kappa=se.substitute(self.kappa, bindings),
            convection=se.substitute(self.convection, bindings),
            reaction=se.substitute(self.reaction, bindings),
            transform=transform,
            text=self.text,
        )

    def render(self) -> str:
        return f"{self.transform.describe()} with m = {se.render(self.m)}"


@dataclass(frozen=True)
class Family:
    diffusion: str
    convection: str
    exponent: sp.Expr | None
    kappa: sp.Expr

    @property
    def name(self) -> str:
        return f"{self.diffusion}-{self.convection}"


@dataclass(frozen=True)
class EvolutionPDE:
    """Canonical V-form V_xx = F0*V_t + F1*V_x + F2."""

    F0: sp.Expr
    F1: sp.Expr
    F2: sp.Expr
    origin: UFormOrigin | None = None

    def __post_init__(self) -> None:
        for name in ("F0", "F1", "F2"):
            value = getattr(self, name)
            if se.jets_of(sp.sympify(value)):
                raise InvarianceError("not_rdc", f"{name} = {se.render(value)} contains derivatives of V")
        if se.is_zero(self.F0):
            raise InvarianceError("degenerate_pde", "F0 is identically zero; not an evolution equation")

    @classmethod
    def from_equation(cls, residual: sp.Expr, origin: UFormOrigin | None = None) -> EvolutionPDE:
        """Build from the residual V_xx - F0*V_t - F1*V_x - F2."""
        try:
            coefficients = se.jet_coefficients(residual, (V_xx, V_t, V_x))
        except se.SymexprError as exc:
            raise InvarianceError("not_rdc", exc.message) from exc
        allowed = {(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)}
        extra = set(coefficients) - allowed
        if extra or se.jets_of(sp.Add(*coefficients.values())):
            raise InvarianceError("not_rdc", "equation is not linear in Vt, Vx and Vxx")
        if not se.equal(coefficients.get((1, 0, 0), 0), 1):
            raise InvarianceError("not_rdc", "Vxx must have coefficient 1")
        return cls(
            F0=se.normalize(-coefficients.get((0, 1, 0), sp.Integer(0))),
            F1=se.normalize(-coefficients.get((0, 0, 1), sp.Integer(0))),
            F2=se.normalize(-coefficients.get((0, 0, 0), sp.Integer(0))),
            origin=origin,
        )

    @property
    def residual(self) -> sp.Expr:
        return V_xx - self.F0 * V_t - self.F1 * V_x - self.F2

    def substitute(self, bindings: Mapping) -> EvolutionPDE:
        return EvolutionPDE(
            se.substitute(self.F0, bindings),
            se.substitute(self.F1, bindings),
            se.substitute(self.F2, bindings),
            self.origin.substitute(bindings) if self.origin else None,
        )

    def with_reaction(self, F2: sp.Expr) -> EvolutionPDE:
        return EvolutionPDE(self.F0, self.F1, se.normalize(F2), self.origin)

    def family(self) -> Family | None:
        kappa_inv, core = self.F0.as_independent(se.V, as_Add=False)
        if kappa_inv.free_symbols & {se.t, se.x}:
            return None
        if core == 1:
            diffusion, exponent = "power", sp.Integer(0)
        elif core == se.V:
            diffusion, exponent = "power", sp.Integer(1)
        elif core.is_Pow and core.base == se.V and not core.exp.has(se.V):
            diffusion, exponent = "power", core.exp
        elif core == sp.exp(se.V):
            diffusion, exponent = "exp", None
        else:
            return None
        if se.V not in self.F1.free_symbols:
            convection = "plain"
        else:
            scale = core * se.V if diffusion == "power" else core
            ratio = se.normalize(sp.cancel(self.F1 / scale))
            if se.V in ratio.free_symbols:
                return None
            convection = "convective"
        if self.F1.free_symbols & {se.t, se.x}:
            return None
        return Family(diffusion, convection, exponent, se.normalize(1 / kappa_inv))

    def render(self) -> str:
        return "Vxx = " + se.render(self.F0 * V_t + self.F1 * V_x + self.F2)


@dataclass(frozen=True)
class SymmetryOperator:
    """Q = Dt + xi*Dx + eta*D(dependent); ``multiplier`` is the divided-out Dt coefficient."""

    xi: sp.Expr
    eta: sp.Expr
    dependent: str = "V"
    multiplier: sp.Expr = field(default_factory=lambda: sp.Integer(1))

    def __post_init__(self) -> None:
        if self.dependent not in se.DEPENDENT:
            raise InvarianceError("bad_operator", f"unknown dependent variable {self.dependent}")
        if se.jets_of(sp.sympify(self.xi)) or se.jets_of(sp.sympify(self.eta)):
            raise InvarianceError("bad_operator", "operator coefficients must not contain jets")

    def substitute(self, bindings: Mapping) -> SymmetryOperator:
        return SymmetryOperator(
            se.substitute(self.xi, bindings),
            se.substitute(self.eta, bindings),
            self.dependent,
            se.substitute(self.multiplier, bindings),
        )

    def raw(self) -> RawOperator:
        return RawOperator(sp.Integer(1), self.xi, self.eta, self.dependent)

    def render(self) -> str:
        return self.raw().render()


@dataclass(frozen=True)
class RawOperator:
    """Coefficient triple (tau, xi, eta) before Dt normalization."""

    tau: sp.Expr
    xi: sp.Expr
    eta: sp.Expr
    dependent: str = "V"

    def normalized(self) -> SymmetryOperator:
        if se.is_zero(self.tau):
            raise InvarianceError("bad_operator", "Dt coefficient is identically zero")
        return SymmetryOperator(
            se.normalize(sp.cancel(self.xi / self.tau)),
            se.normalize(sp.cancel(self.eta / self.tau)),
            self.dependent,
            se.normalize(self.tau),
        )

    def scaled(self, factor: sp.Basic) -> RawOperator:
        return RawOperator(
            se.normalize(factor * self.tau),
            se.normalize(factor * self.xi),
            se.normalize(factor * self.eta),
            self.dependent,
        )

    def render(self) -> str:
        parts = []
        for coefficient, symbol in ((self.tau, "Dt"), (self.xi, "Dx"), (self.eta, f"D{self.dependent}")):
            if coefficient == 0:
                continue
            if coefficient == 1:
                parts.append(symbol)
            else:
                parts.append(f"({se.render(coefficient)})*{symbol}")
        return "Q = " + (" + ".join(parts) if parts else "0")


def to_v_operator(pde: EvolutionPDE, op: SymmetryOperator) -> SymmetryOperator:
    """Express a U-operator in the V-coordinates of ``pde``."""
    if op.dependent == "V":
        return op
    if pde.origin is None:
        raise InvarianceError("bad_operator", "a U-operator needs an equation given in U-form")
    _, xi, eta = se.transform_operator_coefficients(1, op.xi, op.eta, pde.origin.transform)
    return SymmetryOperator(xi, eta, "V", op.multiplier)


# ---------------------------------------------------------------------------
# Prolongation and residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prolongation:
    eta_t: sp.Expr
    eta_x: sp.Expr
    eta_xx: sp.Expr


def prolong2(op: SymmetryOperator) -> Prolongation:
    """Second prolongation of Q = Dt + xi*Dx + eta*DV through total derivatives."""
    characteristic = op.eta - V_t - op.xi * V_x
    d_x = se.total_derivative(characteristic, se.x)
    eta_t = se.total_derivative(characteristic, se.t) + V_tt + op.xi * V_tx
    eta_x = d_x + V_tx + op.xi * V_xx
    eta_xx = se.total_derivative(d_x, se.x) + se.jet("V", "txx") + op.xi * se.jet("V", "xxx")
    return Prolongation(se.normalize(eta_t), se.normalize(eta_x), se.normalize(eta_xx))


def _apply_prolonged(pde: EvolutionPDE, op: SymmetryOperator) -> sp.Expr:
    delta = pde.residual
    pr = prolong2(op)
    applied = (
        sp.diff(delta, se.t)
        + op.xi * sp.diff(delta, se.x)
        + op.eta * sp.diff(delta, se.V)
        + pr.eta_t * sp.diff(delta, V_t)
        + pr.eta_x * sp.diff(delta, V_x)
        + pr.eta_xx * sp.diff(delta, V_xx)
    )
    return se.normalize(applied)


def conditional_residual(pde: EvolutionPDE, op: SymmetryOperator) -> sp.Expr:
    """Prolonged action reduced on the equation and the invariant surface condition."""
    op = to_v_operator(pde, op)
    applied = _apply_prolonged(pde, op)
    v_t_value = op.eta - op.xi * V_x
    v_tx_value = se.total_derivative(v_t_value, se.x)
    v_tt_value = se.total_derivative(v_t_value, se.t)
    v_xx_value = pde.F0 * V_t + pde.F1 * V_x + pde.F2
    reduced = applied.xreplace({V_tt: v_tt_value}).xreplace({V_tx: v_tx_value})
    reduced = reduced.xreplace({V_xx: v_xx_value})
    reduced = reduced.xreplace({V_t: v_t_value})
    result = se.normalize(reduced)
    leftover = se.jets_of(result) - {V_x}
    if leftover:
        raise InvarianceError("bad_operator", f"residual still contains {sorted(map(str, leftover))}")
    return result


def residual_coefficients(pde: EvolutionPDE, op: SymmetryOperator) -> list[sp.Expr]:
    """Coefficients of V_x^0 .. V_x^3 of the conditional residual."""
    residual = conditional_residual(pde, op)
    coefficients = se.jet_coefficients(residual, (V_x,))
    degree = max((k[0] for k in coefficients), default=0)
    if degree > 3:
        logger.warning("conditional residual has V_x degree %d", degree)
    return [coefficients.get((k,), sp.Integer(0)) for k in range(max(degree, 3) + 1)]


def classical_residual(pde: EvolutionPDE, op: SymmetryOperator) -> sp.Expr:
    """Prolonged action with only V_xx eliminated; V_t and V_x stay free."""
    op = to_v_operator(pde, op)
    applied = _apply_prolonged(pde, op)
    return se.normalize(applied.xreplace({V_xx: pde.F0 * V_t + pde.F1 * V_x + pde.F2}))


def lie_multiplier(pde: EvolutionPDE, op: SymmetryOperator) -> sp.Expr | None:
    """M(t) such that M*Q is a Lie symmetry, or None.

    For M = M(t) the prolongations differ by M_t*(eta - V_t - xi*V_x) in the
    V_t component, so the classical residual must equal r*F0*(eta - V_t - xi*V_x)
    with r = M_t/M a function of t alone.
    """
    op = to_v_operator(pde, op)
    residual = classical_residual(pde, op)
    coefficients = se.jet_coefficients(residual, (V_t, V_x))
    if any(key[0] > 1 for key in coefficients):
        return None
    a_t = coefficients.get((1, 0), sp.Integer(0))
    rate = se.normalize(sp.cancel(sp.together(-a_t / pde.F0)))
    if rate.free_symbols & {se.x, se.U, se.V} or rate.atoms(AppliedUndef):
        return None
    check = residual + rate * pde.F0 * (V_t + op.xi * V_x - op.eta)
    if not se.is_zero(check):
        return None
    if rate == 0:
        return sp.Integer(1)
    multiplier = sp.exp(sp.integrate(rate, se.t, conds="none"))
    return sp.powsimp(sp.simplify(multiplier))


def is_lie_symmetry(pde: EvolutionPDE, op: SymmetryOperator) -> bool:
    return lie_multiplier(pde, op) is not None


@dataclass(frozen=True)
class Verdict:
    status: str
    witness: sp.Expr | None = None
    witness_degree: int | None = None
    multiplier: sp.Expr | None = None

    @property
    def is_symmetry(self) -> bool:
        return self.status != NOT_A_SYMMETRY


def verify(pde: EvolutionPDE, op: SymmetryOperator, assumptions: se.Assumptions | None = None) -> Verdict:
    """Conditional-symmetry verdict, refined to LieSymmetry when M*Q is a Lie symmetry."""
    ledger = assumptions or se.EMPTY
    coefficients = residual_coefficients(pde, op)
    for degree, coefficient in enumerate(coefficients):
        if not se.equal(coefficient, 0, ledger):
            logger.debug("residual coefficient of V_x^%d is nonzero", degree)
            return Verdict(NOT_A_SYMMETRY, witness=se.canonical_sign(coefficient), witness_degree=degree)
    multiplier = lie_multiplier(pde, op)
    if multiplier is not None:
        return Verdict(LIE, multiplier=multiplier)
    return Verdict(CONDITIONAL)


def equivalent_up_to_multiplier(op1: RawOperator, op2: RawOperator) -> sp.Expr | None:
    """M with op2 = M*op1, compared by cross-multiplication."""
    if se.is_zero(op1.tau) or se.is_zero(op2.tau):
        raise InvarianceError("bad_operator", "both operators need a nonzero Dt coefficient")
    if op1.dependent != op2.dependent:
        raise InvarianceError("bad_operator", "operators act on different dependent variables")
    for a, b in ((op1.xi, op2.xi), (op1.eta, op2.eta)):
        if not se.is_zero(b * op1.tau - a * op2.tau):
            return None
    return sp.factor(sp.cancel(op2.tau / op1.tau))


# ---------------------------------------------------------------------------
# Determining systems
# ---------------------------------------------------------------------------

_LABELS = ("1", "V_x", "V_x^2", "V_x^3")


@dataclass(frozen=True)
class DeterminingSystem:
    equations: tuple[sp.Expr, ...]
    unknowns: tuple[str, ...]
    assumptions: se.Assumptions = se.EMPTY
    labels: tuple[str, ...] = ()
    merges: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for equation in self.equations:
            if equation == 0:
                raise InvarianceError("bad_system", "determining equations must be nonzero as written")

    def __len__(self) -> int:
        return len(self.equations)

    def render(self, *, compact: bool = True) -> list[str]:
        """One line per equation, with repeated powers of V folded (V^n/V prints as V^(n - 1))."""
        return [f"{se.render(se.merge_powers(eq), compact=compact)} = 0" for eq in self.equations]


def family_pde(name: str) -> EvolutionPDE:
    """Symbolic representative of one of the four power/exp x plain/convective families."""
    lam = se.PARAMETERS["lam"]
    F = se.func("F")
    if name == "power-plain":
        return EvolutionPDE(se.V**se.n, -lam, F)
    if name == "exp-plain":
        return EvolutionPDE(sp.exp(se.V), -lam, F)
    if name == "power-convective":
        return EvolutionPDE(se.V**se.n, se.normalize(-lam * se.V ** (se.n + 1)), F)
    if name == "exp-convective":
        return EvolutionPDE(sp.exp(se.V), -lam * sp.exp(se.V), F)
    raise InvarianceError("unsupported_family", f"unknown family '{name}'; expected one of {', '.join(FAMILIES)}")


def generate_determining_system(
    pde: EvolutionPDE, assumptions: se.Assumptions | None = None
) -> DeterminingSystem:
    """V_x-coefficients (degree 3 down to 0) of the residual for the ansatz xi(t,x,V), eta(t,x,V)."""
    family = pde.family()
    if family is None or family.name not in FAMILIES:
        raise InvarianceError("unsupported_family", f"equation {pde.render()} is outside the supported families")
    ledger = assumptions or se.EMPTY
    if family.diffusion == "power" and family.exponent.free_symbols:
        # n = -m/(m+1) never reaches -1, and n = 0 is constant diffusivity
        ledger = ledger.exclude(family.exponent, 0).exclude(family.exponent, -1)
    op = SymmetryOperator(se.func("xi"), se.func("eta"))
    coefficients = residual_coefficients(pde, op)
    equations, labels = [], []
    for degree in range(len(coefficients) - 1, -1, -1):
        coefficient = coefficients[degree]
        if coefficient == 0:
            continue
        equations.append(se.canonical_sign(coefficient))
        labels.append(_LABELS[degree] if degree < len(_LABELS) else f"V_x^{degree}")
    logger.debug("determining system for %s has %d equations", family.name, len(equations))
    return DeterminingSystem(tuple(equations), ("xi", "eta"), ledger, tuple(labels))


def split_determining(
    system: DeterminingSystem,
    bindings: Mapping,
    assumptions: se.Assumptions | None = None,
) -> DeterminingSystem:
    """Substitute a structured ansatz and split each equation by independent V-atoms.

    Equations that still contain the formal reaction term F(V) cannot be split
    and are kept whole.
    """
    ledger = system.assumptions.merged(assumptions) if assumptions else system.assumptions
    equations: list[sp.Expr] = []
    labels: list[str] = []
    merges: list[str] = []
    branch = ledger.branch
    unknowns = sorted(
        {
            type(atom).__name__
            for value in bindings.values()
            for atom in sp.sympify(value).atoms(AppliedUndef)
        }
    )
    for label, equation in zip(system.labels or _LABELS, system.equations):
        substituted = se.substitute(equation, bindings)
        if se.is_zero(substituted):
            continue
        try:
            split = se.collect_powers(substituted, se.V, ledger)
        except se.SplitError as exc:
            if exc.code == "ambiguous_merge" or not substituted.has(se.FUNCTIONS["F"]):
                raise
            logger.debug("keeping equation %s unsplit: %s", label, exc.message)
            equations.append(se.canonical_sign(substituted))
            labels.append(label)
            continue
        merges.extend(split.merges)
        branch = split.branch or branch
        for cls, coefficient in split.classes.items():
            equations.append(se.canonical_sign(coefficient))
            labels.append(f"{label} | {cls.render(se.V)}")
    if branch != ledger.branch:
        ledger = replace(ledger, branch=branch)
    return DeterminingSystem(tuple(equations), tuple(unknowns), ledger, tuple(labels), tuple(merges))


def instantiate_system(system: DeterminingSystem, bindings: Mapping) -> list[sp.Expr]:
    """Each equation with the unknowns (and F) replaced; all zero for a symmetry."""
    return [se.substitute(equation, bindings) for equation in system.equations]
