from __future__ import annotations

import pytest
import sympy as sp

from condsym import symexpr as se
from condsym.parser import (
    ParseError,
    SourceSpan,
    parse_ansatz,
    parse_bindings,
    parse_candidate,
    parse_equation,
    parse_expression,
    parse_operator,
    parse_raw_operator,
    tokenize,
)

t, x, V = se.t, se.x, se.V
lam = se.PARAMETERS["lam"]
n = se.n


def _code(fn, text: str) -> str:
    with pytest.raises(ParseError) as exc:
        fn(text)
    return exc.value.code


def test_tokenize_positions():
    tokens = tokenize("lam*Vx")
    assert [(tok.kind, tok.text, tok.start) for tok in tokens] == [
        ("ident", "lam", 0),
        ("op", "*", 3),
        ("ident", "Vx", 4),
        ("end", "", 6),
    ]


@pytest.mark.parametrize(
    "text,expected",
    [
        ("2*x^2 + lam*V", 2 * x**2 + lam * V),
        ("Vx", se.jet("V", "x")),
        ("0.5*x", sp.Rational(1, 2) * x),
        ("-x^2", -(x**2)),
        ("V^(n+1)", V ** (n + 1)),
        ("D(x^3, x)", 3 * x**2),
        ("D(x^3, x, 2)", 6 * x),
        ("D(V^2, x)", 2 * V * se.jet("V", "x")),
        ("xi_xV", se.function_derivative("xi", "xV")),
        ("exp(V) + ln(x)", sp.exp(V) + sp.log(x)),
        ("F(2*V)", se.func("F", 2 * V)),
    ],
)
def test_parse_expression(text, expected):
    assert parse_expression(text) == se.normalize(expected)


@pytest.mark.parametrize(
    "text,code",
    [
        ("x +", "syntax"),
        ("(x + 1", "unbalanced"),
        ("x + 1)", "unbalanced"),
        ("foo", "unknown_identifier"),
        ("bar(x)", "unknown_identifier"),
        ("Dt", "unknown_identifier"),
        ("x/0", "division_by_zero"),
        ("x^", "malformed_exponent"),
        ("xi_q", "malformed_multi_index"),
        ("f(x)", "bad_signature"),
        ("x $ 1", "syntax"),
        ("x²", "non_ascii"),
        ("exp", "syntax"),
    ],
)
def test_expression_errors(text, code):
    assert _code(parse_expression, text) == code


def test_error_span_points_at_token():
    with pytest.raises(ParseError) as exc:
        parse_expression("x + foo")
    assert exc.value.diagnostics[0].span == SourceSpan(4, 7)
    assert "^^^" in exc.value.render()


@pytest.mark.parametrize(
    "text",
    ["x^2 + 3*t", "lam*V^n*Vx", "exp(V)/2 - ln(x)", "xi_xV + eta_VV*f", "V^(-1/2)*Vt"],
)
def test_render_round_trip(text):
    expr = parse_expression(text)
    assert parse_expression(se.render(expr)) == expr


class TestEquations:
    def test_heat(self):
        """Vxx = Vt is F0 = 1 with no convection or reaction."""
        pde = parse_equation("Vxx = Vt")
        assert (pde.F0, pde.F1, pde.F2) == (1, 0, 0)

    def test_power_family(self):
        pde = parse_equation("Vxx = V^n*Vt - lam*Vx + V^2")
        assert pde.F0 == V**n
        assert pde.F1 == -lam
        assert pde.F2 == V**2

    def test_u_form_power(self):
        """Ut = D(U*Ux,x) + U becomes V-form through V = U^2."""
        pde = parse_equation("Ut = D(U*Ux,x) + U")
        assert pde.origin is not None
        assert pde.origin.m == 1
        assert se.equal(pde.F0, V ** sp.Rational(-1, 2))
        assert pde.F1 == 0
        assert se.equal(pde.F2, -2 * V ** sp.Rational(1, 2))

    def test_u_form_log(self):
        """m = -1 goes through V = ln(U)."""
        pde = parse_equation("Ut = D(U^(-1)*Ux,x)")
        assert pde.origin.transform.kind == "log"
        assert se.equal(pde.F0, sp.exp(V))

    @pytest.mark.parametrize(
        "text,code",
        [
            ("Vt = Vxx", "bad_equation"),
            ("Vxx = Vt = x", "bad_equation"),
            ("Vxx = Vxx + Vt", "vxx_on_right"),
            ("Vxx = Vt^2", "not_rdc"),
            ("Vxx = V", "degenerate_pde"),
            ("Ut = Uxx + Vx", "not_rdc"),
            ("Ut = exp(U)*Uxx", "non_power_diffusivity"),
            ("Ut = x*Uxx", "non_power_diffusivity"),
            ("Vxx = Vt + foo", "unknown_identifier"),
        ],
    )
    def test_rejected(self, text, code):
        assert _code(parse_equation, text) == code

    def test_rhs_error_span_is_shifted(self):
        """Diagnostics point into the full equation text, not the right side."""
        with pytest.raises(ParseError) as exc:
            parse_equation("Vxx = Vt + foo")
        assert exc.value.diagnostics[0].span == SourceSpan(11, 14)


class TestSymbolicExponent:
    def test_power_form(self):
        """Nested powers V^(m/(m+1)) * V^(1/(m+1)) / V cancel to 1 for symbolic m."""
        m = se.PARAMETERS["m"]
        pde = parse_equation("Ut = D(U^m*Ux,x) + lam*U^m*Ux")
        assert pde.origin.m == m
        assert se.equal(pde.F0, V ** (-m / (m + 1)))
        assert se.equal(pde.F1, -lam)
        assert se.is_zero(pde.F2)

    def test_reaction_folds_to_single_power(self):
        m = se.PARAMETERS["m"]
        pde = parse_equation("Ut = D(U^m*Ux,x) + U^(m+1)")
        assert se.equal(pde.F2, -(m + 1) * V)

    def test_every_catalog_u_form_converts(self, catalog):
        for entry in catalog.entries.values():
            pde = parse_equation(entry.u_equation)
            assert pde.origin is not None, entry.id


class TestOperators:
    def test_unit_dt(self):
        op = parse_operator("Q = Dt + V*DV")
        assert (op.xi, op.eta, op.dependent, op.multiplier) == (0, V, "V", 1)

    def test_normalizes_dt_coefficient(self):
        """2*Dt + 2*x*Dx is Dt + x*Dx with multiplier 2."""
        op = parse_operator("Q = 2*Dt + 2*x*Dx")
        assert op.xi == x
        assert op.multiplier == 2

    def test_u_operator(self):
        op = parse_operator("Q = Dt + U*DU")
        assert op.dependent == "U"
        assert op.eta == se.U

    def test_raw_keeps_tau(self):
        raw = parse_raw_operator("Q = x*Dt + x*V*DV")
        assert raw.tau == x
        assert raw.eta == x * V

    def test_zero_dt_is_unsupported(self):
        assert _code(parse_operator, "Q = Dx + V*DV") == "unsupported_operator_class"

    @pytest.mark.parametrize(
        "text",
        [
            "Q = Dt + V*DU",
            "Q = Dt + DU + DV",
            "Q = Dt*Dx",
            "Q = Dt^2",
            "Q = Dt + Vx*DV",
            "Q = Dt + x",
        ],
    )
    def test_malformed(self, text):
        assert _code(parse_operator, text) == "bad_operator"


class TestBindings:
    def test_rationals(self):
        bindings = parse_bindings("m=1,lam=-1/2, lam1=0.25")
        assert bindings == {"m": 1, "lam": sp.Rational(-1, 2), "lam1": sp.Rational(1, 4)}

    def test_empty(self):
        assert parse_bindings("") == {}

    @pytest.mark.parametrize("text", ["foo=1", "m=x", "m=1,m=2", "m"])
    def test_bad_binding(self, text):
        assert _code(parse_bindings, text) == "bad_binding"

    def test_value_error_keeps_code(self):
        assert _code(parse_bindings, "m=1/0") == "division_by_zero"

    def test_candidate(self):
        candidate = parse_candidate("f=0;g=0;h=6*x^(-2)")
        assert candidate == {"f": 0, "g": 0, "h": 6 * x**-2}

    @pytest.mark.parametrize("text", ["h=V", "xi=1", "h=Vx", "h=1;h=2"])
    def test_bad_candidate(self, text):
        assert _code(parse_candidate, text) == "bad_binding"

    def test_ansatz_allows_v(self):
        ansatz = parse_ansatz("xi=f;eta=g*V+h")
        assert ansatz["xi"] == se.func("f")
        assert ansatz["eta"] == se.func("g") * V + se.func("h")

    def test_ansatz_rejects_u(self):
        assert _code(parse_ansatz, "eta=U") == "bad_binding"
