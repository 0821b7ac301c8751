from __future__ import annotations

import random

import pytest
import sympy as sp

from condsym import symexpr as se
from condsym.catalog import get_catalog
from condsym.invariance import (
    CONDITIONAL,
    FAMILIES,
    LIE,
    NOT_A_SYMMETRY,
    EvolutionPDE,
    InvarianceError,
    SymmetryOperator,
    conditional_residual,
    equivalent_up_to_multiplier,
    family_pde,
    generate_determining_system,
    instantiate_system,
    lie_multiplier,
    prolong2,
    to_v_operator,
    verify,
)
from condsym.parser import parse_equation, parse_operator, parse_raw_operator

V, t, x = se.V, se.t, se.x
V_x = se.jet("V", "x")


@pytest.fixture
def heat() -> EvolutionPDE:
    return parse_equation("Vxx = Vt")


class TestHeatEquation:
    def test_time_translation_is_lie(self, heat):
        """Dt is a Lie symmetry with multiplier 1."""
        verdict = verify(heat, parse_operator("Q = Dt"))
        assert verdict.status == LIE
        assert verdict.multiplier == 1

    def test_scaling_of_v_is_lie(self, heat):
        verdict = verify(heat, parse_operator("Q = Dt + V*DV"))
        assert verdict.status == LIE

    def test_quadratic_eta_fails_with_witness(self, heat):
        """eta = V^2 leaves 2*V_x^2 in the conditional residual."""
        verdict = verify(heat, parse_operator("Q = Dt + V^2*DV"))
        assert verdict.status == NOT_A_SYMMETRY
        assert verdict.witness == 2
        assert verdict.witness_degree == 2
        assert not verdict.is_symmetry

    def test_scaling_needs_time_multiplier(self, heat):
        """Dt + x/(2t)*Dx is a Lie symmetry after multiplying by t."""
        verdict = verify(heat, parse_operator("Q = Dt + x/(2*t)*Dx"))
        assert verdict.status == LIE
        assert se.scale_between(verdict.multiplier, t) is not None

    def test_residual_is_polynomial_in_vx(self, heat):
        residual = conditional_residual(heat, SymmetryOperator(sp.Integer(0), V**2))
        assert se.jets_of(residual) <= {V_x}


class TestConditionalOnly:
    def test_murray_operator(self):
        """Murray's equation admits a conditional symmetry that is not a Lie symmetry."""
        pde = parse_equation("Vxx = Vt - V*Vx - V + V^2")
        op = parse_operator("Q = Dt - (V + 1)*Dx + (V - V^2)*DV")
        assert verify(pde, op).status == CONDITIONAL
        assert lie_multiplier(pde, op) is None

    def test_mutated_murray_operator(self):
        pde = parse_equation("Vxx = Vt - V*Vx - V + V^2")
        op = parse_operator("Q = Dt - (V + 2)*Dx + (V - V^2)*DV")
        verdict = verify(pde, op)
        assert verdict.status == NOT_A_SYMMETRY
        assert verdict.witness != 0


class TestUForm:
    def test_u_operator_is_moved_to_v(self):
        """U*DU becomes 2*V*DV under V = U^2."""
        pde = parse_equation("Ut = D(U*Ux,x) + U")
        op = to_v_operator(pde, parse_operator("Q = Dt + U*DU"))
        assert op.dependent == "V"
        assert op.eta == 2 * V

    def test_time_translation(self):
        pde = parse_equation("Ut = D(U*Ux,x) + U")
        assert verify(pde, parse_operator("Q = Dt")).status == LIE

    def test_u_operator_needs_u_form(self, heat):
        with pytest.raises(InvarianceError) as exc:
            to_v_operator(heat, parse_operator("Q = Dt + U*DU"))
        assert exc.value.code == "bad_operator"


class TestEquivalence:
    def test_multiplier_found(self):
        m = equivalent_up_to_multiplier(
            parse_raw_operator("Q = Dt + V*DV"), parse_raw_operator("Q = x*Dt + x*V*DV")
        )
        assert m == x

    def test_not_equivalent(self):
        m = equivalent_up_to_multiplier(parse_raw_operator("Q = Dt + DV"), parse_raw_operator("Q = Dt + V*DV"))
        assert m is None

    def test_zero_tau_rejected(self):
        with pytest.raises(InvarianceError) as exc:
            equivalent_up_to_multiplier(parse_raw_operator("Q = Dx"), parse_raw_operator("Q = Dt"))
        assert exc.value.code == "bad_operator"

    def test_multiplier_does_not_change_verdict(self, heat):
        """Q and M*Q share the invariant surface condition and the verdict."""
        raw = parse_raw_operator("Q = (1 + x^2)*Dt + (1 + x^2)*V*DV")
        assert verify(heat, raw.normalized()).status == LIE


class TestEquationModel:
    def test_zero_diffusion_coefficient(self):
        with pytest.raises(InvarianceError) as exc:
            EvolutionPDE(sp.Integer(0), sp.Integer(0), V)
        assert exc.value.code == "degenerate_pde"

    def test_jets_in_coefficients(self):
        with pytest.raises(InvarianceError) as exc:
            EvolutionPDE(sp.Integer(1), V_x, sp.Integer(0))
        assert exc.value.code == "not_rdc"

    @pytest.mark.parametrize("name", FAMILIES)
    def test_family_detection(self, name):
        assert family_pde(name).family().name == name

    def test_unsupported_family(self):
        assert parse_equation("Vxx = (1 + V^2)*Vt").family() is None

    def test_render(self, heat):
        assert heat.render() == "Vxx = Vt"

    def test_prolongation_of_time_translation(self):
        """Dt has vanishing prolongation coefficients."""
        pr = prolong2(SymmetryOperator(sp.Integer(0), sp.Integer(0)))
        assert (pr.eta_t, pr.eta_x, pr.eta_xx) == (0, 0, 0)


def _fixture_instance(catalog, entry_id):
    entry = catalog.resolve(entry_id)
    fixture = entry.fixtures[0]
    return catalog.instantiate(entry_id, fixture.params, candidate=fixture.candidate or None)


def _random_polynomial(rng: random.Random, variables, degree: int):
    terms = [sp.Integer(rng.randint(-3, 3))]
    for _ in range(3):
        monomial = sp.Mul(*(rng.choice(variables) for _ in range(rng.randint(1, degree))))
        terms.append(rng.randint(-3, 3) * monomial)
    return sp.Add(*terms)


ENTRY_IDS = sorted(get_catalog().entries)


class TestCatalogProperties:
    @pytest.mark.parametrize("entry_id", ENTRY_IDS)
    def test_multiplier_keeps_verdict(self, catalog, entry_id):
        """(1 + x^2 + t^2)*Q normalizes back to Q with the same verdict."""
        instance = _fixture_instance(catalog, entry_id)
        factor = 1 + x**2 + t**2
        for op in instance.operators:
            scaled = op.raw().scaled(factor).normalized()
            assert se.is_zero(scaled.multiplier - factor)
            assert verify(instance.pde, scaled).status == verify(instance.pde, op).status

    @pytest.mark.parametrize("entry_id", ENTRY_IDS)
    def test_lie_implies_conditional(self, catalog, entry_id):
        instance = _fixture_instance(catalog, entry_id)
        for op in instance.operators:
            if lie_multiplier(instance.pde, op) is not None:
                assert se.is_zero(conditional_residual(instance.pde, op))

    @pytest.mark.parametrize("entry_id", ENTRY_IDS)
    def test_determining_system_vanishes(self, catalog, entry_id):
        """Every catalog operator solves the determining system of its own equation."""
        instance = _fixture_instance(catalog, entry_id)
        family = instance.pde.family()
        if family is None or family.name not in FAMILIES:
            pytest.skip(f"{entry_id} is outside the four families")
        system = generate_determining_system(instance.pde)
        for op in instance.operators:
            residuals = instantiate_system(system, {"xi": op.xi, "eta": op.eta})
            assert all(se.is_zero(r) for r in residuals), entry_id


class TestResidualDegree:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("name", FAMILIES)
    def test_cubic_in_vx(self, name, seed):
        """Any ansatz xi(t,x,V), eta(t,x,V) leaves a residual of degree at most 3 in V_x."""
        rng = random.Random(seed)
        op = SymmetryOperator(
            _random_polynomial(rng, [t, x, V], 2),
            _random_polynomial(rng, [t, x, V], 3),
        )
        residual = conditional_residual(family_pde(name), op)
        assert se.jets_of(residual) <= {V_x}
        assert all(key[0] <= 3 for key in se.jet_coefficients(residual, (V_x,)))


class TestKnownMultipliers:
    def test_exponential_time_multiplier(self):
        """n = 2, lam1 = 1, c1 = 1, c2 = 2: the operator times 2 + exp(-2t) is a Lie symmetry."""
        pde = parse_equation("Vxx = V^2*Vt - Vx + V^3")
        op = parse_operator("Q = Dt + exp(2*t)/(2*exp(2*t) + 1)*Dx - V/(2*exp(2*t) + 1)*DV")
        multiplier = lie_multiplier(pde, op)
        assert multiplier is not None
        assert t not in sp.simplify(multiplier / (2 + sp.exp(-2 * t))).free_symbols
        assert verify(pde, op).status == LIE

    def test_scaling_multiplier(self):
        """n = 1, c1 = 1, c2 = 0: multiplying by 3t + 1 gives 3t*Dt + 2x*Dx - V*DV plus Dt."""
        pde = parse_equation("Vxx = V*Vt - V^2*Vx + V^5")
        op = parse_operator("Q = Dt + 2*x/(3*t + 1)*Dx - V/(3*t + 1)*DV")
        multiplier = lie_multiplier(pde, op)
        assert multiplier is not None
        assert se.scale_between(multiplier, 3 * t + 1) is not None

    def test_porous_murray(self, catalog):
        instance = catalog.instantiate("app.porous-murray", {"lam": "1"})
        multiplier = lie_multiplier(instance.pde, instance.operator)
        assert multiplier is not None
        assert t not in sp.simplify(multiplier * sp.exp(t)).free_symbols

    @pytest.mark.parametrize("entry_id", ["thm1.i", "thm1.ii", "thm2.i"])
    def test_symbolic_residual_vanishes(self, catalog, entry_id):
        """The V-form pairs are conditional symmetries for every parameter value."""
        entry = catalog.resolve(entry_id)
        pde = parse_equation(entry.v_equation)
        op = parse_operator(entry.v_operator)
        assert se.is_zero(conditional_residual(pde, op))
        assert lie_multiplier(pde, op) is None
