"""
Exact symbolic core for the conditional-symmetry engine.

Expressions are sympy trees over a fixed universe: independent variables t, x,
dependent symbols U and V (positive), jet symbols such as ``V_tx``, real
parameters and a small set of formal functions with declared signatures.
Jets are plain symbols; total derivatives D_t and D_x act on them through the
jet chain rule.
"""

from __future__ import annotations

import logging
import os
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping

import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.printing.latex import LatexPrinter
from sympy.printing.precedence import PRECEDENCE
from sympy.printing.str import StrPrinter

logger = logging.getLogger(__name__)

MAX_TERMS = int(os.getenv("CONDSYM_MAX_TERMS", "100000"))
EVAL_POINTS = int(os.getenv("CONDSYM_EVAL_POINTS", "8"))
DEFAULT_SEED = int(os.getenv("CONDSYM_SEED", "0"))

MAX_JET_ORDER = 3
RANDOM_BOUND = 97
MAX_POINT_ATTEMPTS = 200


class SymexprError(RuntimeError):
    """Raised when an expression cannot be built or manipulated."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class ExpressionSizeError(SymexprError):
    def __init__(self, message: str):
        super().__init__("size_limit", message)


class SplitError(SymexprError):
    def __init__(self, message: str, code: str = "not_splittable"):
        super().__init__(code, message)


class SoundnessError(SymexprError):
    def __init__(self, message: str):
        super().__init__("soundness", message)


class TransformError(SymexprError):
    def __init__(self, message: str):
        super().__init__("bad_transform", message)


class AssumptionError(SymexprError):
    def __init__(self, message: str, code: str = "contradiction"):
        super().__init__(code, message)


# ---------------------------------------------------------------------------
# Symbol universe
# ---------------------------------------------------------------------------

t, x = sp.symbols("t x", real=True)
U = sp.Symbol("U", positive=True)
V = sp.Symbol("V", positive=True)

VARIABLES: dict[str, sp.Symbol] = {"t": t, "x": x, "U": U, "V": V}
DEPENDENT: dict[str, sp.Symbol] = {"U": U, "V": V}

PARAMETER_NAMES: tuple[str, ...] = (
    "lam",
    *(f"lam{i}" for i in range(6)),
    *(f"lam{i}s" for i in range(1, 6)),
    "m",
    "n",
    "delta",
    "gamma",
    "c",
    *(f"c{i}" for i in range(3)),
    "k",
    "p",
    "b0",
    "q0",
)
PARAMETERS: dict[str, sp.Symbol] = {name: sp.Symbol(name, real=True) for name in PARAMETER_NAMES}
n = PARAMETERS["n"]

FUNCTION_SIGNATURES: dict[str, tuple[str, ...]] = {
    "F": ("V",),
    "C": ("U",),
    "xi": ("t", "x", "V"),
    "eta": ("t", "x", "V"),
    "f": ("t", "x"),
    "g": ("t", "x"),
    "h": ("t", "x"),
    "a": ("t", "x"),
    "b": ("t", "x"),
    "q": ("t", "x"),
    "M": ("t", "x", "U"),
    "phi": ("t",),
}
FUNCTIONS: dict[str, sp.FunctionClass] = {name: sp.Function(name) for name in FUNCTION_SIGNATURES}


def variable(name: str) -> sp.Symbol:
    try:
        return VARIABLES[name]
    except KeyError:
        raise SymexprError("unknown_variable", f"unknown variable '{name}'") from None


def jet(dependent: str, index: str) -> sp.Symbol:
    """Jet symbol for a derivative of U or V, e.g. ``jet("V", "xt")`` is V_tx."""
    if dependent not in DEPENDENT:
        raise SymexprError("bad_jet", f"jets exist only for U and V, not '{dependent}'")
    if not index or any(ch not in "tx" for ch in index):
        raise SymexprError("bad_jet", f"malformed jet index '{index}'")
    if len(index) > MAX_JET_ORDER:
        raise SymexprError("bad_jet", f"jet order {len(index)} exceeds {MAX_JET_ORDER}")
    return sp.Symbol(f"{dependent}_{''.join(sorted(index))}", real=True)


def jet_parts(symbol: sp.Basic) -> tuple[str, str] | None:
    if not isinstance(symbol, sp.Symbol):
        return None
    head, sep, index = symbol.name.partition("_")
    if sep and head in DEPENDENT and index and set(index) <= {"t", "x"}:
        return head, index
    return None


def is_jet(symbol: sp.Basic) -> bool:
    return jet_parts(symbol) is not None


def jets_of(expr: sp.Basic) -> set[sp.Symbol]:
    return {s for s in expr.free_symbols if is_jet(s)}


def func(name: str, *args: sp.Basic) -> sp.Expr:
    """Apply a formal function; without arguments its declared signature is used."""
    signature = FUNCTION_SIGNATURES.get(name)
    if signature is None:
        raise SymexprError("unknown_function", f"unknown function symbol '{name}'")
    if not args:
        args = tuple(variable(v) for v in signature)
    elif len(args) != len(signature):
        raise SymexprError(
            "bad_signature",
            f"{name} takes {len(signature)} argument(s) ({', '.join(signature)}), got {len(args)}",
        )
    return FUNCTIONS[name](*args)


def function_derivative(name: str, index: str) -> sp.Expr:
    """Partial derivative of a formal function by multi-index, e.g. ("xi", "xV")."""
    signature = FUNCTION_SIGNATURES.get(name)
    if signature is None:
        raise SymexprError("unknown_function", f"unknown function symbol '{name}'")
    bad = [ch for ch in index if ch not in signature]
    if not index or bad:
        raise SymexprError(
            "bad_multi_index",
            f"malformed multi-index '{index}' for {name}({', '.join(signature)})",
        )
    counts = [(variable(v), index.count(v)) for v in signature if index.count(v)]
    return sp.Derivative(func(name), *counts)


def canonical_args(applied: sp.Basic) -> bool:
    signature = FUNCTION_SIGNATURES.get(type(applied).__name__)
    return signature is not None and applied.args == tuple(variable(v) for v in signature)


# ---------------------------------------------------------------------------
# Normalization and calculus
# ---------------------------------------------------------------------------


def normalize(expr: sp.Basic | int | str, *, max_terms: int | None = None) -> sp.Expr:
    """Canonical fully expanded form; raises ExpressionSizeError past the term limit."""
    limit = max_terms or MAX_TERMS
    e = sp.sympify(expr)
    if e.atoms(sp.Float):
        raise SymexprError("float_coefficient", f"floating-point coefficient in {e}")
    result = sp.expand(
        e,
        deep=True,
        mul=True,
        multinomial=True,
        power_exp=False,
        power_base=True,
        log=True,
    )
    size = len(sp.Add.make_args(result))
    if size > limit:
        raise ExpressionSizeError(f"expression has {size} monomials, limit is {limit}")
    return result


def is_zero(expr: sp.Basic) -> bool:
    """Structural zero test on the normal form, its numerator, or its merged powers of U and V."""
    e = normalize(expr)
    if e == 0:
        return True
    numerator, _ = sp.fraction(sp.together(e))
    if normalize(numerator) == 0:
        return True
    if not any(p.base in (U, V) and not p.exp.is_Number for p in e.atoms(sp.Pow)):
        return False
    return cancel_coefficients(e) == 0


def total_derivative(expr: sp.Basic, v: sp.Symbol) -> sp.Expr:
    if v not in (t, x):
        raise SymexprError("bad_variable", f"total derivative needs t or x, got {v}")
    axis = v.name
    e = sp.sympify(expr)
    result = sp.diff(e, v)
    for symbol in sorted(e.free_symbols, key=sp.default_sort_key):
        if symbol in (U, V):
            result += sp.diff(e, symbol) * jet(symbol.name, axis)
            continue
        parts = jet_parts(symbol)
        if parts:
            dependent, index = parts
            result += sp.diff(e, symbol) * jet(dependent, index + axis)
    return result


def differentiate(expr: sp.Basic, v: sp.Symbol) -> sp.Expr:
    """Derivative of ``expr``: total for t and x, partial for every other symbol."""
    if v in (t, x):
        return normalize(total_derivative(expr, v))
    return normalize(sp.diff(sp.sympify(expr), v))


def _binding_key(key: sp.Basic | str) -> sp.Basic:
    if isinstance(key, str):
        if key in PARAMETERS:
            return PARAMETERS[key]
        if key in VARIABLES:
            return VARIABLES[key]
        if key in FUNCTION_SIGNATURES:
            return func(key)
        raise SymexprError("unknown_symbol", f"cannot bind unknown symbol '{key}'")
    if isinstance(key, sp.FunctionClass) and key.__name__ in FUNCTION_SIGNATURES:
        return func(key.__name__)
    return key


def _dependencies(value: sp.Basic) -> set[sp.Basic]:
    return set(value.free_symbols) | set(value.atoms(AppliedUndef))


def _check_acyclic(bindings: Mapping[sp.Basic, sp.Basic]) -> None:
    graph = {key: _dependencies(value) & set(bindings) for key, value in bindings.items()}
    for key, value in bindings.items():
        if is_jet(key) and key in _dependencies(value):
            raise SymexprError(
                "self_referential_jet", f"jet {key} is bound to an expression containing itself"
            )
    state: dict[sp.Basic, int] = {}

    def visit(node: sp.Basic) -> None:
        state[node] = 1
        for nxt in graph[node]:
            if state.get(nxt) == 1:
                raise SymexprError("cyclic_binding", f"cyclic binding through {node} and {nxt}")
            if nxt not in state:
                visit(nxt)
        state[node] = 2

    for key in graph:
        if key not in state:
            visit(key)


def substitute(expr: sp.Basic, bindings: Mapping[sp.Basic | str, sp.Basic | int | str]) -> sp.Expr:
    """Simultaneous substitution followed by derivative evaluation and normalization."""
    resolved = {_binding_key(k): sp.sympify(v) for k, v in bindings.items()}
    if not resolved:
        return normalize(expr)
    _check_acyclic(resolved)
    result = sp.sympify(expr).subs(resolved, simultaneous=True).doit()
    return normalize(result)


# ---------------------------------------------------------------------------
# Exponents and the assumptions ledger
# ---------------------------------------------------------------------------


def _fraction(value: sp.Basic) -> Fraction:
    rational = sp.Rational(value)
    return Fraction(int(rational.p), int(rational.q))


@dataclass(frozen=True, order=True)
class AffineExponent:
    """Exponent ``n_coeff*n + const`` over exact rationals."""

    n_coeff: Fraction
    const: Fraction

    @classmethod
    def from_expr(cls, expr: sp.Basic, symbol: sp.Symbol = n) -> AffineExponent:
        e = sp.expand(sp.sympify(expr))
        if e.free_symbols - {symbol}:
            raise SymexprError("non_affine_exponent", f"exponent {e} is not affine in {symbol}")
        poly = sp.Poly(e, symbol)
        if poly.degree() > 1 or not all(c.is_Rational for c in poly.all_coeffs()):
            raise SymexprError("non_affine_exponent", f"exponent {e} is not affine in {symbol}")
        coeffs = poly.all_coeffs()
        if len(coeffs) == 1:
            return cls(Fraction(0), _fraction(coeffs[0]))
        return cls(_fraction(coeffs[0]), _fraction(coeffs[1]))

    def as_expr(self, symbol: sp.Symbol = n) -> sp.Expr:
        return sp.Rational(self.n_coeff.numerator, self.n_coeff.denominator) * symbol + sp.Rational(
            self.const.numerator, self.const.denominator
        )

    def __add__(self, other: AffineExponent) -> AffineExponent:
        return AffineExponent(self.n_coeff + other.n_coeff, self.const + other.const)

    def __sub__(self, other: AffineExponent) -> AffineExponent:
        return AffineExponent(self.n_coeff - other.n_coeff, self.const - other.const)

    def __neg__(self) -> AffineExponent:
        return AffineExponent(-self.n_coeff, -self.const)

    def __str__(self) -> str:
        return str(self.as_expr())


ZERO_EXPONENT = AffineExponent(Fraction(0), Fraction(0))


@dataclass(frozen=True)
class Inequation:
    symbol: sp.Symbol
    value: sp.Rational
    text: str = ""

    def __str__(self) -> str:
        return self.text or f"{self.symbol} != {self.value}"


def _affine_root(expr: sp.Expr) -> tuple[sp.Symbol, sp.Rational] | None:
    symbols = expr.free_symbols
    if len(symbols) != 1:
        return None
    (symbol,) = symbols
    try:
        poly = sp.Poly(expr, symbol)
    except sp.PolynomialError:
        return None
    if poly.degree() != 1 or not all(c.is_Rational for c in poly.all_coeffs()):
        return None
    a, b = poly.all_coeffs()
    return symbol, sp.Rational(-b, a)


@dataclass(frozen=True)
class Assumptions:
    """Ledger of parameter inequations plus an optional branch of equalities."""

    inequations: tuple[Inequation, ...] = ()
    branch: tuple[tuple[sp.Symbol, sp.Rational], ...] = ()

    def __post_init__(self) -> None:
        for ineq in self.inequations:
            for symbol, value in self.branch:
                if ineq.symbol == symbol and ineq.value == value:
                    raise AssumptionError(f"branch {symbol} = {value} contradicts {ineq}")

    @classmethod
    def of(cls, *constraints: tuple[sp.Basic, sp.Basic] | Inequation) -> Assumptions:
        ledger = cls()
        for item in constraints:
            if isinstance(item, Inequation):
                ledger = replace(ledger, inequations=ledger.inequations + (item,))
            else:
                lhs, value = item
                ledger = ledger.exclude(lhs, value)
        return ledger

    def exclude(self, lhs: sp.Basic, value: sp.Basic = 0, text: str = "") -> Assumptions:
        """Add ``lhs != value``; products compared with 0 exclude each factor."""
        lhs = sp.sympify(lhs)
        value = sp.sympify(value)
        label = text or f"{lhs} != {value}"
        difference = sp.expand(lhs - value)
        if not difference.free_symbols:
            if difference == 0:
                raise AssumptionError(f"inequation {label} is false")
            return self
        if value == 0 and lhs.is_Mul:
            ledger = self
            for factor in lhs.args:
                if factor.free_symbols:
                    ledger = ledger.exclude(factor, 0)
            return ledger
        root = _affine_root(difference)
        if root is None:
            raise AssumptionError(f"inequation {label} is not affine in one parameter", "unsupported")
        symbol, excluded = root
        for s, v in self.branch:
            if s == symbol and v == excluded:
                raise AssumptionError(f"inequation {label} contradicts branch {s} = {v}")
        if self.excludes(symbol, excluded):
            return self
        return replace(self, inequations=self.inequations + (Inequation(symbol, excluded, label),))

    def merged(self, other: Assumptions) -> Assumptions:
        ledger = self
        for ineq in other.inequations:
            if not ledger.excludes(ineq.symbol, ineq.value):
                ledger = replace(ledger, inequations=ledger.inequations + (ineq,))
        for symbol, value in other.branch:
            if ledger.branch_value(symbol) is None:
                ledger = ledger.with_branch(symbol, value)
        return ledger

    def with_branch(self, symbol: sp.Symbol, value: sp.Basic) -> Assumptions:
        value = sp.Rational(value)
        if self.excludes(symbol, value):
            raise AssumptionError(f"branch {symbol} = {value} is excluded by the ledger")
        return replace(self, branch=self.branch + ((symbol, value),))

    def excludes(self, symbol: sp.Symbol, value: sp.Basic) -> bool:
        return any(i.symbol == symbol and i.value == value for i in self.inequations)

    def branch_value(self, symbol: sp.Symbol) -> sp.Rational | None:
        for s, v in self.branch:
            if s == symbol:
                return v
        return None

    def apply_branch(self, expr: sp.Basic) -> sp.Expr:
        e = sp.sympify(expr)
        if not self.branch:
            return e
        return e.xreplace(dict(self.branch))

    def coincidence(self, a: AffineExponent, b: AffineExponent, symbol: sp.Symbol = n) -> sp.Rational | None:
        """Value of the exponent symbol at which a and b may coincide, if the ledger allows it."""
        diff = a - b
        if diff.n_coeff == 0:
            return None
        value = sp.Rational(-diff.const.numerator * diff.n_coeff.denominator, diff.const.denominator * diff.n_coeff.numerator)
        if self.excludes(symbol, value):
            return None
        return value

    def is_nonzero(self, expr: sp.Basic) -> bool:
        e = self.apply_branch(expr)
        if e.is_number:
            return e.is_zero is False
        if e.is_positive or e.is_negative:
            return True
        if e.is_Symbol:
            return self.excludes(e, 0)
        if e.is_Mul:
            return all(self.is_nonzero(factor) for factor in e.args)
        if e.is_Pow:
            return self.is_nonzero(e.base)
        if isinstance(e, sp.exp):
            return True
        root = _affine_root(e)
        if root is not None:
            return self.excludes(*root)
        return False

    def describe(self) -> list[str]:
        items = [str(i) for i in self.inequations]
        items.extend(f"{s} = {v}" for s, v in self.branch)
        return items


EMPTY = Assumptions()


# ---------------------------------------------------------------------------
# Equality with a randomized soundness monitor
# ---------------------------------------------------------------------------


def _random_rational(rng: random.Random, positive: bool) -> sp.Rational:
    value = sp.Rational(rng.randint(1, RANDOM_BOUND), rng.randint(1, RANDOM_BOUND))
    if not positive and rng.random() < 0.5:
        value = -value
    return value


def _is_finite_number(value: sp.Basic) -> bool:
    return value.is_number and not value.has(sp.zoo, sp.nan, sp.oo, -sp.oo)


def _values_agree(a: sp.Basic, b: sp.Basic) -> bool:
    if a.is_Rational and b.is_Rational:
        return a == b
    diff = sp.N(a - b, 60)
    scale = 1 + abs(sp.N(a, 60))
    return bool(abs(diff) <= sp.Float("1e-40", 60) * scale)


def _monitor(
    a: sp.Expr, b: sp.Expr, assumptions: Assumptions, rng: random.Random, points: int
) -> bool | None:
    """Evaluate a and b at random rational points; None when no usable points exist."""
    combined = a - b
    atoms = sorted(
        combined.atoms(sp.Derivative) | combined.atoms(AppliedUndef), key=sp.default_sort_key
    )
    symbols = sorted(combined.free_symbols, key=sp.default_sort_key)
    agreed = 0
    for _ in range(MAX_POINT_ATTEMPTS):
        values: dict[sp.Basic, sp.Basic] = {}
        for atom in atoms:
            values[atom] = _random_rational(rng, positive=False)
        for symbol in symbols:
            value = _random_rational(rng, positive=bool(symbol.is_positive))
            while assumptions.excludes(symbol, value):
                value = _random_rational(rng, positive=bool(symbol.is_positive))
            values[symbol] = value
        va = a.xreplace(values)
        vb = b.xreplace(values)
        if not (_is_finite_number(va) and _is_finite_number(vb)):
            logger.debug("pole at random point, retrying")
            continue
        if not _values_agree(va, vb):
            return False
        agreed += 1
        if agreed >= points:
            return True
    logger.warning("soundness monitor found only %d usable points", agreed)
    return None if agreed == 0 else True


def equal(
    a: sp.Basic,
    b: sp.Basic,
    assumptions: Assumptions | None = None,
    *,
    rng: random.Random | None = None,
    points: int | None = None,
) -> bool:
    """Structural equality of normal forms, cross-checked at random rational points."""
    ledger = assumptions or EMPTY
    left = ledger.apply_branch(sp.sympify(a))
    right = ledger.apply_branch(sp.sympify(b))
    structural = is_zero(left - right)
    monitor = _monitor(
        left, right, ledger, rng or random.Random(DEFAULT_SEED), points or EVAL_POINTS
    )
    if monitor is not None and monitor != structural:
        raise SoundnessError(
            f"structural verdict {structural} disagrees with random evaluation for {left} vs {right}"
        )
    return structural


def scale_between(a: sp.Basic, b: sp.Basic, assumptions: Assumptions | None = None) -> sp.Expr | None:
    """The constant c != 0 with a = c*b, or None if no such constant exists."""
    ledger = assumptions or EMPTY
    left = normalize(ledger.apply_branch(a))
    right = normalize(ledger.apply_branch(b))
    if is_zero(right):
        return None
    ratio = normalize(sp.cancel(sp.together(left / right)))
    blocked = {t, x, U, V}
    if ratio.free_symbols & blocked or jets_of(ratio):
        return None
    if ratio.has(sp.Derivative) or ratio.atoms(AppliedUndef):
        return None
    if not ledger.is_nonzero(ratio):
        return None
    if not is_zero(left - ratio * right):
        return None
    return ratio


# ---------------------------------------------------------------------------
# Splitting by powers of the dependent variable
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class PowerClass:
    """Atom class ``base^exponent * exp(exp_coeff*base) * ln(base)^log_power``."""

    exp_coeff: Fraction
    log_power: int
    exponent: AffineExponent

    def atom(self, base: sp.Symbol) -> sp.Expr:
        k = sp.Rational(self.exp_coeff.numerator, self.exp_coeff.denominator)
        return base ** self.exponent.as_expr() * sp.exp(k * base) * sp.log(base) ** self.log_power

    def render(self, base: sp.Symbol) -> str:
        return render(self.atom(base))


@dataclass(frozen=True)
class PowerSplit:
    classes: dict[PowerClass, sp.Expr]
    merges: tuple[str, ...] = ()
    branch: tuple[tuple[sp.Symbol, sp.Rational], ...] = ()

    def coefficient(self, exponent: sp.Basic, exp_coeff: int = 0, log_power: int = 0) -> sp.Expr:
        key = PowerClass(Fraction(exp_coeff), log_power, AffineExponent.from_expr(exponent))
        return self.classes.get(key, sp.Integer(0))

    def recombine(self, base: sp.Symbol) -> sp.Expr:
        return normalize(sp.Add(*(coeff * cls.atom(base) for cls, coeff in self.classes.items())))


def _split_term(term: sp.Expr, base: sp.Symbol) -> tuple[PowerClass, sp.Expr]:
    exponent = ZERO_EXPONENT
    exp_coeff = Fraction(0)
    log_power = 0
    coefficient: list[sp.Expr] = []
    for factor in sp.Mul.make_args(term):
        if factor == base:
            exponent = exponent + AffineExponent(Fraction(0), Fraction(1))
        elif factor.is_Pow and factor.base == base:
            exponent = exponent + AffineExponent.from_expr(factor.exp)
        elif isinstance(factor, sp.exp) and base in factor.free_symbols:
            argument = sp.expand(factor.args[0])
            k = argument.coeff(base)
            rest = sp.expand(argument - k * base)
            if base in rest.free_symbols or not k.is_Rational:
                raise SplitError(f"exponential atom {factor} is not linear in {base}")
            exp_coeff += _fraction(k)
            if rest != 0:
                coefficient.append(sp.exp(rest))
        elif isinstance(factor, sp.log) and factor.args[0] == base:
            log_power += 1
        elif factor.is_Pow and isinstance(factor.base, sp.log) and factor.base.args[0] == base:
            if not (factor.exp.is_Integer and factor.exp > 0):
                raise SplitError(f"logarithmic atom {factor} has a non-integer power")
            log_power += int(factor.exp)
        elif base in factor.free_symbols:
            raise SplitError(f"coefficient factor {factor} depends on {base}")
        else:
            coefficient.append(factor)
    return PowerClass(exp_coeff, log_power, exponent), sp.Mul(*coefficient)


def collect_powers(expr: sp.Basic, base: sp.Symbol, assumptions: Assumptions | None = None) -> PowerSplit:
    """Coefficients of ``expr`` per functionally independent atom class of ``base``."""
    ledger = assumptions or EMPTY
    e = normalize(ledger.apply_branch(expr))
    raw: dict[PowerClass, sp.Expr] = {}
    for term in sp.Add.make_args(e):
        if term == 0:
            continue
        key, coeff = _split_term(term, base)
        raw[key] = raw.get(key, sp.Integer(0)) + coeff

    groups: dict[tuple[Fraction, int], list[PowerClass]] = {}
    for key in raw:
        groups.setdefault((key.exp_coeff, key.log_power), []).append(key)
    coincidences: set[sp.Rational] = set()
    merges: list[str] = []
    for members in groups.values():
        members.sort()
        for i, first in enumerate(members):
            for second in members[i + 1 :]:
                value = ledger.coincidence(first.exponent, second.exponent)
                if value is not None:
                    coincidences.add(value)
                    merges.append(
                        f"{first.render(base)} and {second.render(base)} coincide at n = {value}"
                    )
    if len(coincidences) > 1:
        raise SplitError(
            "ledger cannot separate the power classes: " + "; ".join(merges),
            code="ambiguous_merge",
        )
    if coincidences:
        (value,) = coincidences
        logger.warning("merging power classes on the branch n = %s: %s", value, "; ".join(merges))
        branched = collect_powers(expr, base, ledger.with_branch(n, value))
        return PowerSplit(branched.classes, tuple(merges), branched.branch)

    classes = {}
    for key in sorted(raw, reverse=True):
        coeff = normalize(raw[key])
        if coeff != 0:
            classes[key] = coeff
    return PowerSplit(classes, (), ledger.branch)


# ---------------------------------------------------------------------------
# Point transforms
# ---------------------------------------------------------------------------

TRANSFORM_KINDS = ("power", "log", "exp", "galilean", "shift")


@dataclass(frozen=True)
class PointTransform:
    """A change of variables.

    power:    new = old^parameter
    log:      new = ln(old)
    exp:      new = exp(old)
    galilean: x_new = x + parameter*t (dependent variable unchanged)
    shift:    new = old - parameter
    """

    kind: str
    parameter: sp.Expr = field(default_factory=lambda: sp.Integer(0))
    source: str = "U"
    target: str = "V"

    def __post_init__(self) -> None:
        if self.kind not in TRANSFORM_KINDS:
            raise TransformError(f"unknown transform kind '{self.kind}'")
        if self.kind == "power" and sp.sympify(self.parameter).is_zero:
            raise TransformError("power substitution with exponent 0 (m = -1); use the log substitution")

    def inverse(self) -> PointTransform:
        if self.kind == "power":
            return PointTransform("power", 1 / self.parameter, self.target, self.source)
        if self.kind == "log":
            return PointTransform("exp", sp.Integer(0), self.target, self.source)
        if self.kind == "exp":
            return PointTransform("log", sp.Integer(0), self.target, self.source)
        return PointTransform(self.kind, -self.parameter, self.target, self.source)

    def old_in_new(self, new: sp.Symbol) -> sp.Expr:
        if self.kind == "power":
            return new ** (1 / self.parameter)
        if self.kind == "log":
            return sp.exp(new)
        if self.kind == "exp":
            return sp.log(new)
        if self.kind == "shift":
            return new + self.parameter
        return new

    def new_in_old(self, old: sp.Symbol) -> sp.Expr:
        if self.kind == "power":
            return old**self.parameter
        if self.kind == "log":
            return sp.log(old)
        if self.kind == "exp":
            return sp.exp(old)
        if self.kind == "shift":
            return old - self.parameter
        return old

    def describe(self) -> str:
        if self.kind == "power":
            return f"{self.target} = {self.source}^({render(self.parameter)})"
        if self.kind == "log":
            return f"{self.target} = ln({self.source})"
        if self.kind == "exp":
            return f"{self.target} = exp({self.source})"
        if self.kind == "shift":
            return f"{self.target} = {self.source} - ({render(self.parameter)})"
        return f"x = x + ({render(self.parameter)})*t"


def power_substitution(m: sp.Basic) -> PointTransform:
    """V = U^(m+1); m = -1 is routed to the log substitution by callers."""
    m = sp.sympify(m)
    if sp.simplify(m + 1) == 0:
        raise TransformError("power substitution V = U^(m+1) is undefined for m = -1")
    return PointTransform("power", m + 1, "U", "V")


def log_substitution() -> PointTransform:
    return PointTransform("log", sp.Integer(0), "U", "V")


def galilean(c: sp.Basic, dependent: str = "V") -> PointTransform:
    return PointTransform("galilean", sp.sympify(c), dependent, dependent)


def shift(k: sp.Basic, dependent: str = "V") -> PointTransform:
    return PointTransform("shift", sp.sympify(k), dependent, dependent)


def _jet_image(image: sp.Expr, index: str) -> sp.Expr:
    result = image
    for axis in index:
        result = total_derivative(result, VARIABLES[axis])
    return result


def _galilean_jet(dependent: str, index: str, c: sp.Expr) -> sp.Expr:
    a, b = index.count("t"), index.count("x")
    total = sp.Integer(0)
    for i in range(a + 1):
        total += sp.binomial(a, i) * c**i * jet(dependent, "t" * (a - i) + "x" * (b + i))
    return total


def merge_powers(expr: sp.Basic) -> sp.Expr:
    """Fold nested and repeated powers of U and V into one power with a cancelled exponent.

    ``Mul`` keeps V**(m/(m+1)) * V**(1/(m+1)) / V apart because the exponents have
    different symbolic parts; after merging this is V**0 = 1.
    """
    e = sp.powdenest(sp.sympify(expr), force=True)
    e = sp.powsimp(e, force=True, combine="exp")
    return e.replace(
        lambda p: p.is_Pow and p.base in (U, V),
        lambda p: p.base ** sp.cancel(p.exp),
    )


def cancel_coefficients(expr: sp.Basic) -> sp.Expr:
    """Merge powers, then cancel the parameter coefficient of every monomial in U, V and jets."""
    groups: dict[sp.Expr, sp.Expr] = {}
    for term in sp.Add.make_args(sp.expand(merge_powers(expr), deep=False)):
        term = merge_powers(term)
        coefficient, monomial = term.as_independent(U, V, *jets_of(term), as_Add=False)
        groups[monomial] = groups.get(monomial, sp.Integer(0)) + coefficient
    return sp.Add(*(sp.cancel(coefficient) * monomial for monomial, coefficient in groups.items()))


def apply_point_transform(expr: sp.Basic, transform: PointTransform) -> sp.Expr:
    """Rewrite an equation (given as its residual expression) in the new variables."""
    e = sp.sympify(expr)
    mapping: dict[sp.Basic, sp.Basic] = {}
    if transform.kind == "galilean":
        c = transform.parameter
        mapping[x] = x - c * t
        for symbol in jets_of(e):
            dependent, index = jet_parts(symbol)
            if "t" in index:
                mapping[symbol] = _galilean_jet(dependent, index, c)
    else:
        old = DEPENDENT[transform.source]
        new = DEPENDENT[transform.target]
        image = transform.old_in_new(new)
        mapping[old] = image
        for symbol in jets_of(e):
            dependent, index = jet_parts(symbol)
            if dependent == transform.source:
                mapping[symbol] = _jet_image(image, index)
        stray = {s for s in jets_of(e) if jet_parts(s)[0] == transform.target} - set(mapping)
        if transform.source != transform.target and (new in e.free_symbols or stray):
            raise TransformError(f"expression already contains the target variable {new}")
    result = e.xreplace(mapping)
    if transform.kind == "power":
        result = cancel_coefficients(result)
    return normalize(result)


def transform_operator_coefficients(
    tau: sp.Basic, xi: sp.Basic, eta: sp.Basic, transform: PointTransform
) -> tuple[sp.Expr, sp.Expr, sp.Expr]:
    """Carry the coefficients of tau*Dt + xi*Dx + eta*D(dep) through a point transform."""
    tau, xi, eta = (sp.sympify(v) for v in (tau, xi, eta))
    if transform.kind == "galilean":
        c = transform.parameter
        back = {x: x - c * t}
        return (
            normalize(tau.xreplace(back)),
            normalize((xi + c * tau).xreplace(back)),
            normalize(eta.xreplace(back)),
        )
    old = DEPENDENT[transform.source]
    new = DEPENDENT[transform.target]
    image = transform.old_in_new(new)
    slope = sp.diff(transform.new_in_old(old), old)
    mapping = {old: image}
    out = []
    for value in (tau, xi, slope * eta):
        converted = value.xreplace(mapping)
        if transform.kind == "power":
            converted = cancel_coefficients(converted)
        out.append(normalize(converted))
    return out[0], out[1], out[2]


def jet_coefficients(expr: sp.Basic, gens: Iterable[sp.Symbol]) -> dict[tuple[int, ...], sp.Expr]:
    """Coefficients of ``expr`` as a polynomial in the given jet symbols."""
    gens = tuple(gens)
    position = {g: i for i, g in enumerate(gens)}
    out: dict[tuple[int, ...], sp.Expr] = {}
    for term in sp.Add.make_args(normalize(expr)):
        if term == 0:
            continue
        powers = [0] * len(gens)
        rest: list[sp.Expr] = []
        for factor in sp.Mul.make_args(term):
            base, exponent = factor.as_base_exp()
            if base in position:
                if not (exponent.is_Integer and exponent > 0):
                    raise SymexprError("non_polynomial", f"{factor} is not a polynomial power of {base}")
                powers[position[base]] += int(exponent)
            elif factor.free_symbols & set(gens):
                raise SymexprError("non_polynomial", f"{factor} is not polynomial in {gens}")
            else:
                rest.append(factor)
        key = tuple(powers)
        out[key] = out.get(key, sp.Integer(0)) + sp.Mul(*rest)
    return {key: normalize(value) for key, value in out.items() if normalize(value) != 0}


def canonical_sign(expr: sp.Basic) -> sp.Expr:
    e = normalize(expr)
    return normalize(-e) if e.could_extract_minus_sign() else e


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


class _GrammarPrinter(StrPrinter):
    """Prints expressions in the ASCII input grammar (``compact`` uses V_x jet names)."""

    def __init__(self, compact: bool = False):
        super().__init__()
        self._compact = compact

    def _print_Symbol(self, expr: sp.Symbol) -> str:
        parts = jet_parts(expr)
        if parts and not self._compact:
            return parts[0] + parts[1]
        return expr.name

    def _print_Pow(self, expr: sp.Pow, rational: bool = False) -> str:
        base, exponent = expr.as_base_exp()
        base_text = self.parenthesize(base, PRECEDENCE["Pow"], strict=True)
        if exponent.is_Integer and exponent > 0:
            return f"{base_text}^{exponent}"
        return f"{base_text}^({self._print(exponent)})"

    def _print_Rational(self, expr: sp.Rational) -> str:
        if expr.q == 1:
            return str(expr.p)
        return f"{expr.p}/{expr.q}"

    def _print_exp(self, expr: sp.exp) -> str:
        return f"exp({self._print(expr.args[0])})"

    def _print_ExpBase(self, expr: sp.Basic) -> str:
        return f"exp({self._print(expr.args[0])})"

    def _print_log(self, expr: sp.log) -> str:
        return f"ln({self._print(expr.args[0])})"

    def _print_Function(self, expr: sp.Basic) -> str:
        if isinstance(expr, AppliedUndef):
            name = type(expr).__name__
            if canonical_args(expr):
                return name
            return f"{name}({', '.join(self._print(a) for a in expr.args)})"
        return super()._print_Function(expr)

    def _print_Derivative(self, expr: sp.Derivative) -> str:
        inner = expr.expr
        if isinstance(inner, AppliedUndef) and canonical_args(inner):
            name = type(inner).__name__
            counts = dict(expr.variable_count)
            index = "".join(v * counts.get(variable(v), 0) for v in FUNCTION_SIGNATURES[name])
            return f"{name}_{index}"
        text = self._print(inner)
        for var, count in expr.variable_count:
            text = f"D({text},{var})" if count == 1 else f"D({text},{var},{count})"
        return text


_LATEX_NAMES = {
    **{PARAMETERS[f"lam{i}"]: rf"\lambda_{{{i}}}" for i in range(6)},
    **{PARAMETERS[f"lam{i}s"]: rf"\lambda_{{{i}}}^{{*}}" for i in range(1, 6)},
    PARAMETERS["lam"]: r"\lambda",
    PARAMETERS["delta"]: r"\delta",
    PARAMETERS["gamma"]: r"\gamma",
}


def render(expr: sp.Basic, *, compact: bool = False) -> str:
    """Render in the input grammar; ``parse_expression(render(e))`` gives e back."""
    return _GrammarPrinter(compact=compact).doprint(sp.sympify(expr))


def render_latex(expr: sp.Basic) -> str:
    e = sp.sympify(expr)
    names = dict(_LATEX_NAMES)
    for symbol in jets_of(e):
        dependent, index = jet_parts(symbol)
        names[symbol] = f"{dependent}_{{{index}}}"
    return LatexPrinter({"symbol_names": names}).doprint(e)
