"""
Text grammar for expressions, equations, operators and parameter bindings.

Every input string from the CLI, the MCP tools and the catalog data file goes
through this module.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import sympy as sp

from . import symexpr as se

if TYPE_CHECKING:
    from .invariance import EvolutionPDE, RawOperator, SymmetryOperator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")


@dataclass(frozen=True)
class ParseDiagnostic:
    span: SourceSpan
    message: str
    severity: str = "error"

    def render(self, text: str) -> str:
        caret = " " * self.span.start + "^" * max(1, self.span.end - self.span.start)
        return f"{self.severity}: {self.message}\n  {text}\n  {caret}"


class ParseError(RuntimeError):
    """Rejected input; always carries at least one error diagnostic."""

    def __init__(self, code: str, message: str, diagnostics: list[ParseDiagnostic] | None = None, text: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message
        self.text = text
        self.diagnostics = diagnostics or [ParseDiagnostic(SourceSpan(0, len(text)), message)]

    def render(self) -> str:
        return "\n".join(d.render(self.text) for d in self.diagnostics)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<number>\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9]*(?:_[A-Za-z]+)?)"
    r"|(?P<op>[-+*/^(),=])"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int

    @property
    def span(self) -> SourceSpan:
        return SourceSpan(self.start, self.end)


def tokenize(text: str) -> list[Token]:
    for i, ch in enumerate(text):
        if ord(ch) > 127:
            raise ParseError(
                "non_ascii",
                f"non-ASCII character {ch!r}",
                [ParseDiagnostic(SourceSpan(i, i + 1), f"non-ASCII character {ch!r}")],
                text,
            )
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ParseError(
                "syntax",
                f"unexpected character {text[pos]!r}",
                [ParseDiagnostic(SourceSpan(pos, pos + 1), f"unexpected character {text[pos]!r}")],
                text,
            )
        kind = match.lastgroup or "op"
        if kind != "ws":
            tokens.append(Token(kind, match.group(), match.start(), match.end()))
        pos = match.end()
    tokens.append(Token("end", "", len(text), len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Recursive descent
# ---------------------------------------------------------------------------

_EXPR_JETS = {
    "Ut": ("U", "t"),
    "Ux": ("U", "x"),
    "Uxx": ("U", "xx"),
    "Utx": ("U", "tx"),
    "Utt": ("U", "tt"),
    "Vt": ("V", "t"),
    "Vx": ("V", "x"),
    "Vxx": ("V", "xx"),
    "Vtx": ("V", "tx"),
    "Vtt": ("V", "tt"),
}
_OPERATOR_SYMBOLS = ("Dt", "Dx", "DU", "DV")
_BUILTINS = ("exp", "ln", "D")

# Placeholder symbols standing for the vector-field basis while an operator is parsed.
_BASIS = {name: sp.Symbol(f"__{name}__") for name in _OPERATOR_SYMBOLS}


@dataclass
class _Parser:
    text: str
    allow_operators: bool = False
    tokens: list[Token] = field(default_factory=list)
    pos: int = 0
    warnings: list[ParseDiagnostic] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.tokens = tokenize(self.text)

    # -- helpers -----------------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, code: str, message: str, span: SourceSpan) -> ParseError:
        return ParseError(code, message, [ParseDiagnostic(span, message)], self.text)

    def expect(self, text: str) -> Token:
        token = self.peek()
        if token.text != text:
            if text == ")":
                raise self.fail("unbalanced", "unbalanced parentheses: expected ')'", token.span)
            found = token.text or "end of input"
            raise self.fail("syntax", f"expected '{text}', found '{found}'", token.span)
        return self.advance()

    # -- grammar -----------------------------------------------------------

    def parse(self) -> sp.Expr:
        result = self.expr()
        token = self.peek()
        if token.kind != "end":
            if token.text == ")":
                raise self.fail("unbalanced", "unbalanced parentheses: unexpected ')'", token.span)
            raise self.fail("syntax", f"unexpected '{token.text}'", token.span)
        return result

    def expr(self) -> sp.Expr:
        result = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            rhs = self.term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def term(self) -> sp.Expr:
        result = self.factor()
        while self.peek().text in ("*", "/"):
            op = self.advance()
            rhs = self.factor()
            if op.text == "*":
                result = result * rhs
            else:
                if rhs == 0:
                    raise self.fail("division_by_zero", "division by zero", op.span)
                result = result / rhs
        return result

    def factor(self) -> sp.Expr:
        if self.peek().text == "-":
            self.advance()
            return -self.factor()
        base = self.atom()
        if self.peek().text == "^":
            caret = self.advance()
            token = self.peek()
            if token.kind not in ("number", "ident") and token.text not in ("(", "-"):
                raise self.fail("malformed_exponent", "malformed exponent after '^'", caret.span)
            exponent = self.factor()
            if base.has(*_BASIS.values()) or exponent.has(*_BASIS.values()):
                raise self.fail("bad_operator", "vector-field symbols cannot be raised to a power", caret.span)
            return sp.Pow(base, exponent)
        return base

    def atom(self) -> sp.Expr:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return self.number(token)
        if token.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if token.kind == "ident":
            self.advance()
            if self.peek().text == "(":
                return self.call(token)
            return self.identifier(token)
        found = token.text or "end of input"
        raise self.fail("syntax", f"expected an expression, found '{found}'", token.span)

    def number(self, token: Token) -> sp.Expr:
        if "." in token.text:
            self.warnings.append(
                ParseDiagnostic(token.span, f"decimal {token.text} converted to an exact rational", "warning")
            )
        return sp.Rational(token.text)

    def identifier(self, token: Token) -> sp.Expr:
        name = token.text
        if name in se.VARIABLES:
            return se.VARIABLES[name]
        if name in _EXPR_JETS:
            return se.jet(*_EXPR_JETS[name])
        if name in se.PARAMETERS:
            return se.PARAMETERS[name]
        if name in se.FUNCTION_SIGNATURES:
            return se.func(name)
        if name in _OPERATOR_SYMBOLS:
            if not self.allow_operators:
                raise self.fail("unknown_identifier", f"'{name}' is only valid in operators", token.span)
            return _BASIS[name]
        head, sep, index = name.partition("_")
        if sep and head in se.FUNCTION_SIGNATURES:
            try:
                return se.function_derivative(head, index)
            except se.SymexprError as exc:
                raise self.fail("malformed_multi_index", exc.message, token.span) from exc
        if name in _BUILTINS:
            raise self.fail("syntax", f"'{name}' needs arguments", token.span)
        raise self.fail("unknown_identifier", f"unknown identifier '{name}'", token.span)

    def arguments(self) -> list[tuple[sp.Expr, Token]]:
        self.expect("(")
        args = []
        while True:
            start = self.peek()
            args.append((self.expr(), start))
            if self.peek().text == ",":
                self.advance()
                continue
            self.expect(")")
            return args

    def call(self, token: Token) -> sp.Expr:
        name = token.text
        if name == "D":
            return self.derivative(token)
        args = self.arguments()
        values = [a for a, _ in args]
        if name in ("exp", "ln"):
            if len(values) != 1:
                raise self.fail("syntax", f"{name} takes one argument", token.span)
            return sp.exp(values[0]) if name == "exp" else sp.log(values[0])
        if name in se.FUNCTION_SIGNATURES:
            try:
                return se.func(name, *values)
            except se.SymexprError as exc:
                raise self.fail("bad_signature", exc.message, token.span) from exc
        if name in se.PARAMETERS or name in se.VARIABLES or name in _EXPR_JETS:
            raise self.fail("syntax", f"'{name}' is not a function", token.span)
        raise self.fail("unknown_identifier", f"unknown function '{name}'", token.span)

    def derivative(self, token: Token) -> sp.Expr:
        args = self.arguments()
        if len(args) not in (2, 3):
            raise self.fail("syntax", "D takes (expr, var) or (expr, var, order)", token.span)
        target, _ = args[0]
        var, var_token = args[1]
        if var not in (se.t, se.x, se.U, se.V):
            raise self.fail("syntax", "D differentiates by t, x, U or V", var_token.span)
        order = 1
        if len(args) == 3:
            value, order_token = args[2]
            if not (value.is_Integer and value > 0):
                raise self.fail("syntax", "derivative order must be a positive integer", order_token.span)
            order = int(value)
        result = target
        for _ in range(order):
            result = se.differentiate(result, var)
        return result


def _parse(text: str, *, allow_operators: bool = False) -> sp.Expr:
    parser = _Parser(text, allow_operators=allow_operators)
    result = parser.parse()
    for warning in parser.warnings:
        logger.debug("%s: %s", text, warning.message)
    return result


def parse_expression(text: str) -> sp.Expr:
    """Parse one expression of the grammar into a normalized symbolic expression."""
    try:
        return se.normalize(_parse(text))
    except se.SymexprError as exc:
        raise ParseError(exc.code, exc.message, text=text) from exc


def _split_equation(text: str, lhs_expected: tuple[str, ...]) -> tuple[str, str, int]:
    if text.count("=") != 1:
        raise ParseError(
            "bad_equation",
            "expected exactly one '='",
            [ParseDiagnostic(SourceSpan(0, len(text)), "expected exactly one '='")],
            text,
        )
    lhs, rhs = text.split("=")
    if lhs.strip() not in lhs_expected:
        span = SourceSpan(0, len(lhs))
        message = f"left side must be one of {', '.join(lhs_expected)}"
        raise ParseError("bad_equation", message, [ParseDiagnostic(span, message)], text)
    return lhs.strip(), rhs, len(lhs) + 1


def _shifted(exc: ParseError, offset: int, text: str) -> ParseError:
    diagnostics = [
        ParseDiagnostic(SourceSpan(d.span.start + offset, d.span.end + offset), d.message, d.severity)
        for d in exc.diagnostics
    ]
    return ParseError(exc.code, exc.message, diagnostics, text)


def _parse_side(text: str, rhs: str, offset: int, *, allow_operators: bool = False) -> sp.Expr:
    try:
        return se.normalize(_parse(rhs, allow_operators=allow_operators))
    except ParseError as exc:
        raise _shifted(exc, offset, text) from exc
    except se.SymexprError as exc:
        raise ParseError(exc.code, exc.message, text=text) from exc


def parse_equation(text: str) -> EvolutionPDE:
    """Parse ``Vxx = ...`` (V-form) or ``Ut = ...`` (U-form, converted to V-form)."""
    from .invariance import EvolutionPDE, InvarianceError

    lhs, rhs, offset = _split_equation(text, ("Vxx", "Ut"))
    body = _parse_side(text, rhs, offset)
    try:
        if lhs == "Vxx":
            if se.jet("V", "xx") in body.free_symbols:
                span = SourceSpan(offset, len(text))
                message = "right side of a V-form equation contains Vxx"
                raise ParseError("vxx_on_right", message, [ParseDiagnostic(span, message)], text)
            return EvolutionPDE.from_equation(se.jet("V", "xx") - body)
        return _u_form(text, body, offset)
    except InvarianceError as exc:
        raise ParseError(exc.code, exc.message, text=text) from exc


def _u_form(text: str, rhs: sp.Expr, offset: int) -> EvolutionPDE:
    from .invariance import EvolutionPDE, UFormOrigin

    def reject(code: str, message: str) -> ParseError:
        return ParseError(code, message, [ParseDiagnostic(SourceSpan(offset, len(text)), message)], text)

    u_t, u_x, u_xx = se.jet("U", "t"), se.jet("U", "x"), se.jet("U", "xx")
    stray = se.jets_of(rhs) - {u_x, u_xx}
    if stray or se.V in rhs.free_symbols:
        raise reject("not_rdc", "a U-form right side may only contain U, Ux and Uxx")
    diffusivity = sp.powsimp(rhs.coeff(u_xx))
    kappa, power = diffusivity.as_independent(se.U, as_Add=False)
    if power == 1:
        m = sp.Integer(0)
    elif power == se.U:
        m = sp.Integer(1)
    elif power.is_Pow and power.base == se.U and not power.exp.has(se.U):
        m = power.exp
    else:
        raise reject("non_power_diffusivity", f"diffusivity {se.render(diffusivity)} is not a power of U")
    if kappa.free_symbols or not kappa.is_positive:
        raise reject("non_power_diffusivity", f"diffusivity factor {se.render(kappa)} is not a positive constant")
    remainder = se.normalize(rhs - se.total_derivative(kappa * se.U**m * u_x, se.x))
    coefficients = se.jet_coefficients(remainder, (u_x,))
    if any(key[0] > 1 for key in coefficients) or u_xx in remainder.free_symbols:
        raise reject("not_rdc", "the right side is not of the form D(A(U)*Ux,x) + B(U)*Ux + C(U)")
    convection = coefficients.get((1,), sp.Integer(0))
    reaction = coefficients.get((0,), sp.Integer(0))
    if (convection.free_symbols | reaction.free_symbols) & {se.t, se.x}:
        raise reject("not_rdc", "coefficients must not depend on t or x")
    if sp.simplify(m + 1) == 0:
        transform = se.log_substitution()
    else:
        transform = se.power_substitution(m)
    residual = se.apply_point_transform(u_t - rhs, transform)
    origin = UFormOrigin(
        m=m,
        kappa=kappa,
        convection=convection,
        reaction=reaction,
        transform=transform,
        text=text,
    )
    return EvolutionPDE.from_equation(_v_form_residual(residual), origin=origin)


def _v_form_residual(residual: sp.Expr) -> sp.Expr:
    """Scale a transformed residual so the V_xx coefficient is 1."""
    v_xx = se.jet("V", "xx")
    tidy = se.cancel_coefficients(residual)
    coefficient = tidy.coeff(v_xx)
    return se.normalize(se.cancel_coefficients(sp.expand(tidy / coefficient)))


def _collect_operator(text: str, expr: sp.Expr) -> dict[str, sp.Expr]:
    parts = {name: sp.Integer(0) for name in _OPERATOR_SYMBOLS}
    for term in sp.Add.make_args(sp.expand(expr)):
        present = [name for name, sym in _BASIS.items() if term.has(sym)]
        coefficient = sp.diff(term, _BASIS[present[0]]) if len(present) == 1 else None
        if coefficient is None or coefficient.has(*_BASIS.values()) or sp.expand(
            term - coefficient * _BASIS[present[0]]
        ) != 0:
            shown = se.render(term.xreplace({s: 1 for s in _BASIS.values()}))
            message = f"term {shown} is not attached to exactly one of Dt, Dx, DU, DV"
            raise ParseError("bad_operator", message, text=text)
        parts[present[0]] += coefficient
    if parts["DU"] != 0 and parts["DV"] != 0:
        raise ParseError("bad_operator", "operator mixes DU and DV", text=text)
    return {name: se.normalize(value) for name, value in parts.items()}


def parse_raw_operator(text: str) -> RawOperator:
    """Parse ``Q = tau*Dt + xi*Dx + eta*DV`` without normalizing the Dt coefficient."""
    from .invariance import RawOperator

    _, rhs, offset = _split_equation(text, ("Q",))
    expr = _parse_side(text, rhs, offset, allow_operators=True)
    parts = _collect_operator(text, expr)
    dependent = "U" if parts["DU"] != 0 or (se.U in expr.free_symbols and parts["DV"] == 0) else "V"
    eta = parts["DU"] if dependent == "U" else parts["DV"]
    other = se.V if dependent == "U" else se.U
    if any(other in v.free_symbols for v in (parts["Dt"], parts["Dx"], eta)):
        raise ParseError("bad_operator", f"a {dependent}-operator cannot mention {other}", text=text)
    if any(se.jets_of(v) for v in (parts["Dt"], parts["Dx"], eta)):
        raise ParseError("bad_operator", "operator coefficients must not contain jets", text=text)
    return RawOperator(parts["Dt"], parts["Dx"], eta, dependent)


def parse_operator(text: str) -> SymmetryOperator:
    """Parse an operator and normalize it to unit Dt coefficient."""
    raw = parse_raw_operator(text)
    if se.is_zero(raw.tau):
        message = "operators with zero Dt coefficient are not supported"
        raise ParseError(
            "unsupported_operator_class",
            message,
            [ParseDiagnostic(SourceSpan(0, len(text)), message)],
            text,
        )
    return raw.normalized()


def parse_bindings(text: str) -> dict[str, sp.Rational]:
    """Parse ``k=v,k=v`` with exact rational values (decimals converted exactly)."""
    bindings: dict[str, sp.Rational] = {}
    if not text.strip():
        return bindings
    offset = 0
    for item in text.split(","):
        start = offset
        offset += len(item) + 1
        name, sep, value = item.partition("=")
        name = name.strip()
        span = SourceSpan(start, start + len(item))
        if not sep or name not in se.PARAMETERS:
            message = f"expected name=value with a known parameter name, got '{item.strip()}'"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        try:
            parsed = parse_expression(value)
        except ParseError as exc:
            raise _shifted(exc, start + len(item) - len(value), text) from exc
        if not parsed.is_Rational:
            message = f"value of {name} must be a rational number"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        if name in bindings:
            message = f"parameter {name} bound twice"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        bindings[name] = parsed
    return bindings


def _parse_function_bindings(text: str, names: tuple[str, ...], *, allow_v: bool, what: str) -> dict[str, sp.Expr]:
    bindings: dict[str, sp.Expr] = {}
    offset = 0
    for item in text.split(";"):
        start = offset
        offset += len(item) + 1
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        name = name.strip()
        span = SourceSpan(start, start + len(item))
        if not sep or name not in names:
            message = f"expected name=expr with name one of {', '.join(names)}, got '{item.strip()}'"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        try:
            parsed = parse_expression(value)
        except ParseError as exc:
            raise _shifted(exc, start + len(item) - len(value), text) from exc
        forbidden = {se.U} if allow_v else {se.U, se.V}
        if parsed.free_symbols & forbidden or se.jets_of(parsed):
            message = f"{what} {name} must depend on {'t, x and V' if allow_v else 't and x'} only"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        if name in bindings:
            message = f"{name} bound twice"
            raise ParseError("bad_binding", message, [ParseDiagnostic(span, message)], text)
        bindings[name] = parsed
    return bindings


_CANDIDATE_NAMES = tuple(name for name, sig in se.FUNCTION_SIGNATURES.items() if sig == ("t", "x"))


def parse_candidate(text: str) -> dict[str, sp.Expr]:
    """Parse ``f=0;g=0;h=6*x^(-2)`` into unknown-function bindings."""
    return _parse_function_bindings(text, _CANDIDATE_NAMES, allow_v=False, what="candidate")


def parse_ansatz(text: str) -> dict[str, sp.Expr]:
    """Parse ``xi=0;eta=f*V+g`` (and optionally F=...) for splitting a determining system."""
    return _parse_function_bindings(text, ("xi", "eta", "F"), allow_v=True, what="ansatz for")
