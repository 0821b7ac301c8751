from __future__ import annotations

import json

import pytest
import sympy as sp

from condsym import symexpr as se
from condsym.catalog import CatalogError, Constraint, get_catalog, load_catalog
from condsym.handlers import _check_entry
from condsym.invariance import CONDITIONAL, NOT_A_SYMMETRY, verify

THM1_I = {"m": "1", "lam": "1", "lam1": "1", "lam2": "1", "lam3": "0"}
QUADRATIC = {"lam": "1", "lam0": "1", "lam1": "1", "lam3": "-2/9"}


def _code(fn, *args, **kwargs) -> str:
    with pytest.raises(CatalogError) as exc:
        fn(*args, **kwargs)
    return exc.value.code


class TestLoading:
    def test_packaged_catalog(self, catalog):
        assert len(catalog.entries) == 20
        assert set(catalog.systems) == {"sys9", "ode10", "sys8ad", "sys14ad"}
        assert set(catalog.aliases) == {"remark2.quadratic", "remark2.cubic"}

    def test_list_includes_aliases(self, catalog):
        rows = catalog.list_entries()
        assert len(rows) == 22
        aliases = {row["id"]: row["alias_of"] for row in rows if "alias_of" in row}
        assert aliases == {"remark2.quadratic": "thm2.iv", "remark2.cubic": "thm2.v.quadratic"}

    def test_record_before_header(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text(json.dumps({"kind": "alias", "id": "a", "target": "b"}) + "\n")
        assert _code(load_catalog, path) == "bad_catalog"

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text(json.dumps({"kind": "header", "schema": "catalog-v0"}) + "\n")
        assert _code(load_catalog, path) == "bad_catalog"

    def test_broken_json(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text('{"kind": "header", "schema": "catalog-v1"}\n{"kind": \n')
        assert _code(load_catalog, path) == "bad_catalog"

    def test_alias_to_missing_entry(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        lines = [
            {"kind": "header", "schema": "catalog-v1"},
            {"kind": "alias", "id": "remark.x", "target": "thm9"},
        ]
        path.write_text("\n".join(json.dumps(line) for line in lines) + "\n")
        assert _code(load_catalog, path) == "bad_catalog"
        assert load_catalog(path, validate=False).aliases["remark.x"].target == "thm9"


@pytest.mark.parametrize("entry_id", sorted(get_catalog().entries))
def test_entry_fixtures_and_mutations(catalog, entry_id):
    """Every fixture has its expected verdict and every mutation breaks the symmetry."""
    result = _check_entry(catalog, entry_id)
    assert result["ok"], result
    assert all(m["status"] == NOT_A_SYMMETRY for m in result["mutations"])


class TestInstantiate:
    def test_concrete_pair(self, catalog):
        instance = catalog.instantiate("thm1.i", THM1_I)
        assert instance.values["n"] == sp.Rational(-1, 2)
        assert verify(instance.pde, instance.operator).status == CONDITIONAL

    def test_u_form(self, catalog):
        instance = catalog.instantiate("thm1.i", THM1_I, form="U")
        assert instance.operator.dependent == "U"
        assert instance.pde.origin.m == 1

    def test_alias_resolves_but_does_not_instantiate(self, catalog):
        assert catalog.resolve("remark2.quadratic").id == "thm2.iv"
        assert _code(catalog.instantiate, "remark2.quadratic", {}) == "unknown_entry"

    def test_unknown_entry(self, catalog):
        assert _code(catalog.instantiate, "thm9.ix", {}) == "unknown_entry"

    def test_constraint_violation(self, catalog):
        """lam2 = 0 is excluded for the first operator class."""
        assert _code(catalog.instantiate, "thm1.i", {**THM1_I, "lam2": "0"}) == "constraint_violation"

    def test_excluded_exponent_checked_before_derivation(self, catalog):
        assert _code(catalog.instantiate, "thm1.i", {**THM1_I, "m": "-1"}) == "constraint_violation"

    def test_unknown_and_missing_parameters(self, catalog):
        assert _code(catalog.instantiate, "thm1.i", {**THM1_I, "mu": "1"}) == "unknown_parameter"
        params = dict(THM1_I)
        del params["lam3"]
        assert _code(catalog.instantiate, "thm1.i", params) == "missing_parameter"

    def test_bad_form(self, catalog):
        assert _code(catalog.instantiate, "thm1.i", THM1_I, form="W") == "bad_form"

    def test_one_operator_per_root(self, catalog):
        """2p^2 + p - 3 = 0 has the roots 1 and -3/2."""
        instance = catalog.instantiate("thm2.v.quadratic", QUADRATIC)
        assert instance.roots == (1, sp.Rational(-3, 2))
        assert len(instance.operators) == 2
        assert instance.operators[0].xi == se.V

    def test_irrational_roots(self, catalog):
        params = {**QUADRATIC, "lam3": "-1/9"}
        assert _code(catalog.instantiate, "thm2.v.quadratic", params) == "irrational_roots"

    def test_complex_roots(self, catalog):
        """2p^2 + p + 8 = 0 has no real roots."""
        params = {**QUADRATIC, "lam3": "1"}
        assert _code(catalog.instantiate, "thm2.v.quadratic", params) == "irrational_roots"

    def test_candidate_must_solve_system(self, catalog):
        params = {"lam": "1", "lam1": "0", "lam2": "2", "lam3": "0"}
        good = catalog.instantiate("thm1.iii", params, candidate={"f": "0", "g": "0", "h": "lam2/2"})
        assert good.operator.eta == 1
        bad = {"f": "0", "g": "0", "h": "5"}
        assert _code(catalog.instantiate, "thm1.iii", params, candidate=bad) == "constraint_violation"

    def test_candidate_required(self, catalog):
        params = {"lam": "1", "lam1": "0", "lam2": "2", "lam3": "0"}
        assert _code(catalog.instantiate, "thm1.iii", params, candidate={"f": "0"}) == "missing_parameter"

    def test_candidate_rejected_without_system(self, catalog):
        assert _code(catalog.instantiate, "thm1.i", THM1_I, candidate={"f": "0"}) == "unknown_parameter"

    def test_override_breaks_operator(self, catalog):
        instance = catalog.instantiate("thm1.i", THM1_I, overrides={"lam1s": "lam1s + 1"})
        assert verify(instance.pde, instance.operator).status == NOT_A_SYMMETRY

    def test_override_of_unknown_name(self, catalog):
        assert _code(catalog.instantiate, "thm1.i", THM1_I, overrides={"zz": "1"}) == "unknown_parameter"


class TestConstraintResidual:
    @pytest.mark.parametrize(
        "system_id,candidate,params",
        [
            ("sys9", {"f": "0", "g": "0", "h": "lam2/2"}, {"lam": 1, "lam1": 0, "lam2": 2, "lam3": 1}),
            ("ode10", {"h": "6*x^(-2)"}, {"lam": 0, "lam2": 0}),
            ("sys8ad", {"a": "1", "b": "2", "q": "3"}, {"lam": 1}),
            ("sys14ad", {"b": "1"}, {"lam": 1, "lam0": 1, "lam1": 1, "lam3": 1, "c0": 9}),
        ],
    )
    def test_solutions(self, catalog, system_id, candidate, params):
        assert all(value == 0 for value in catalog.constraint_residual(system_id, candidate, params))

    def test_non_solution(self, catalog):
        residuals = catalog.constraint_residual("sys9", {"f": "0", "g": "0", "h": "1"}, {"lam1": 0, "lam2": 0})
        assert residuals[-1] == 1

    def test_missing_unknown(self, catalog):
        assert _code(catalog.constraint_residual, "sys9", {"f": "0"}) == "missing_parameter"

    def test_unknown_system(self, catalog):
        assert _code(catalog.constraint_residual, "sys99", {}) == "unknown_entry"


class TestConstraint:
    def test_holds(self):
        constraint = Constraint.parse("m != -1")
        assert constraint.holds({"m": sp.Integer(2)})
        assert not constraint.holds({"m": sp.Integer(-1)})

    def test_strict_inequality(self):
        constraint = Constraint.parse("delta < 1")
        assert constraint.holds({"delta": sp.Rational(1, 2)})
        assert not constraint.holds({"delta": sp.Integer(1)})

    def test_unreadable(self):
        with pytest.raises(CatalogError) as exc:
            Constraint.parse("m ~ 1")
        assert exc.value.code == "bad_catalog"


class TestEquivalence:
    def test_galilean_removes_convection(self, catalog):
        params = {"lam": "1", "lam1": "1", "lam2": "0", "lam3": "1"}
        result = catalog.apply_equivalence("thm2.log-convective", "galilean", params)
        assert result.after.pde.F1 == 0
        assert result.after.operator.xi == 0
        assert verify(result.after.pde, result.after.operator).is_symmetry

    def test_shift_keeps_symmetry(self, catalog):
        """Shifting away the quadratic reaction term maps symmetries to symmetries."""
        params = {"lam": "1", "lam3": "2/9", "delta": "1/2"}
        result = catalog.apply_equivalence("app.fn-convective", "shift", params)
        for op in result.after.operators:
            assert verify(result.after.pde, op).status != NOT_A_SYMMETRY

    def test_multiplier(self, catalog):
        result = catalog.apply_equivalence("thm1.i", "multiplier", THM1_I, multiplier="x + 1")
        assert result.after.operator.multiplier == se.x + 1
        assert result.after.operator.eta == result.before.operator.eta
        assert verify(result.after.pde, result.after.operator).status == CONDITIONAL

    def test_multiplier_required(self, catalog):
        assert _code(catalog.apply_equivalence, "thm1.i", "multiplier", THM1_I) == "inapplicable_transform"

    def test_reaction_diffusion_specialization(self, catalog):
        result = catalog.apply_equivalence("thm1.i", "rd-specialization", THM1_I)
        assert result.after.values["lam"] == 0
        assert result.after.pde.F1 == 0

    def test_galilean_needs_constant_speed(self, catalog):
        params = {"lam": "1", "lam0": "0", "lam2": "-1"}
        assert _code(catalog.apply_equivalence, "thm2.iv", "galilean", params) == "inapplicable_transform"

    def test_unknown_transform(self, catalog):
        assert _code(catalog.apply_equivalence, "thm1.i", "rotation", THM1_I) == "inapplicable_transform"
