from __future__ import annotations

import math

import numpy as np
import pytest

from condsym.numerics import (
    FLOW_TOLERANCE,
    Grid1D,
    NumericsError,
    central_weights,
    integrate_ode,
    invariant_flow_check,
    ode_constraint_check,
    pde_residual,
)
from condsym.parser import parse_equation


def _code(fn, *args, **kwargs) -> str:
    with pytest.raises(NumericsError) as exc:
        fn(*args, **kwargs)
    return exc.value.code


class TestGrid:
    def test_refined_keeps_nodes(self):
        grid = Grid1D(0.0, 1.0, 11)
        fine = grid.refined()
        assert fine.n == 21
        assert fine.spacing == pytest.approx(grid.spacing / 2)
        assert np.allclose(fine.points[::2], grid.points)

    @pytest.mark.parametrize("x0,x1,n", [(0.0, 1.0, 7), (1.0, 1.0, 10), (2.0, 1.0, 10)])
    def test_too_small(self, x0, x1, n):
        assert _code(Grid1D, x0, x1, n) == "grid_too_small"


class TestIntegrator:
    def test_fourth_order(self):
        """Halving the RK4 step cuts the error by about 16."""

        def decay(_: float, y: np.ndarray) -> np.ndarray:
            return -y

        errors = []
        for step in (0.2, 0.1):
            trajectory = integrate_ode(decay, [1.0], (0.0, 1.0), step)
            errors.append(abs(trajectory.final[0] - math.exp(-1.0)))
        assert math.log2(errors[0] / errors[1]) >= 3.8

    def test_fourth_order_on_reduced_ode(self):
        """h'' = h^2 with h = 6/x^2: three step halvings, each cutting the error by about 16."""

        def reduced(_: float, y: np.ndarray) -> np.ndarray:
            return np.array([y[1], y[0] ** 2])

        errors = []
        for step in (0.04, 0.02, 0.01, 0.005):
            trajectory = integrate_ode(reduced, [6.0, -12.0], (1.0, 2.0), step)
            errors.append(abs(trajectory.final[0] - 1.5))
        orders = [math.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]
        assert len(orders) == 3
        assert all(order >= 3.9 for order in orders), orders

    def test_backwards(self):
        trajectory = integrate_ode(lambda _, y: -y, [math.exp(-1.0)], (1.0, 0.0), 0.01)
        assert trajectory.times[-1] == pytest.approx(0.0)
        assert trajectory.final[0] == pytest.approx(1.0, rel=1e-8)

    def test_stride_thins_output(self):
        trajectory = integrate_ode(lambda _, y: y, [1.0], (0.0, 1.0), 0.01, stride=10)
        assert len(trajectory.times) == 11

    def test_bad_step(self):
        assert _code(integrate_ode, lambda _, y: y, [1.0], (0.0, 1.0), 0.0) == "bad_step"


class TestStencils:
    def test_second_order_second_derivative(self):
        radius, weights = central_weights(2, 2)
        assert radius == 1
        assert np.allclose(weights, [1.0, -2.0, 1.0])

    def test_fourth_order_first_derivative(self):
        radius, weights = central_weights(1, 4)
        assert radius == 2
        assert np.allclose(weights, [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12])

    def test_bad_order(self):
        assert _code(central_weights, 2, 3) == "bad_order"


class TestConstraintCheck:
    def test_stationary_solution(self):
        """h = 6/x^2 solves the reduced ODE at lam = lam2 = 0."""
        report = ode_constraint_check("ode10", {"h": "6*x^(-2)"}, {"lam": 0, "lam2": 0}, Grid1D(1.0, 2.0, 1001))
        assert report.exact
        assert report.max_residual <= 1e-6
        assert report.integration is not None
        assert report.integration["max_relative_error"] <= 1e-5
        assert report.passed

    def test_constant_candidate_of_fast_diffusion_system(self):
        report = ode_constraint_check(
            "sys9", {"f": "0", "g": "0", "h": "1"}, {"lam1": 0, "lam2": 2}, Grid1D(1.0, 2.0, 101)
        )
        assert report.exact
        assert report.passed

    def test_wrong_candidate_fails(self):
        report = ode_constraint_check("ode10", {"h": "5*x^(-2)"}, {"lam": 0, "lam2": 0}, Grid1D(1.0, 2.0, 201))
        assert not report.exact
        assert not report.passed
        assert report.symbolic_grid_residual > 1.0

    def test_bad_order(self):
        grid = Grid1D(1.0, 2.0, 101)
        assert _code(ode_constraint_check, "ode10", {"h": "6*x^(-2)"}, {"lam": 0, "lam2": 0}, grid, order=6) == "bad_order"


class TestPdeResidual:
    @pytest.fixture
    def samples(self):
        ts = np.linspace(0.0, 1.0, 5)
        xs = np.linspace(0.0, 1.0, 11)
        return ts, xs

    def test_exact_solution(self, samples):
        """V = 2t + x^2 solves the heat equation; central differences are exact on it."""
        ts, xs = samples
        values = 2 * ts[:, None] + xs[None, :] ** 2
        residual = pde_residual(parse_equation("Vxx = Vt"), values, ts[1] - ts[0], xs[1] - xs[0])
        assert residual < 1e-9

    def test_non_solution(self, samples):
        ts, xs = samples
        values = ts[:, None] + xs[None, :] ** 2
        residual = pde_residual(parse_equation("Vxx = Vt"), values, ts[1] - ts[0], xs[1] - xs[0])
        assert residual == pytest.approx(1.0)

    def test_too_few_levels(self):
        assert _code(pde_residual, parse_equation("Vxx = Vt"), np.zeros((2, 10)), 0.1, 0.1) == "grid_too_small"

    def test_explicit_dependence(self, samples):
        _, xs = samples
        values = np.ones((5, xs.size))
        assert _code(pde_residual, parse_equation("Vxx = Vt + x"), values, 0.1, 0.1) == "unsupported_operator"


class TestInvariantFlow:
    def test_symmetry_beats_broken_operator(self, catalog):
        """The invariant-surface flow tracks the PDE; a perturbed operator does not."""
        flow = catalog.resolve("thm1.i").flow
        grid = Grid1D(0.0, 1.0, 51)
        good = invariant_flow_check("thm1.i", None, grid, 0.25)
        bad = invariant_flow_check("thm1.i", None, grid, 0.25, overrides=flow.mutation)
        assert good.max_flow_deviation < 1e-2
        assert good.max_flow_deviation < bad.max_flow_deviation / 10
        assert bad.perturbed
        assert not bad.passed
        assert bad.max_flow_deviation > FLOW_TOLERANCE

    def test_needs_two_levels(self):
        assert _code(invariant_flow_check, "thm1.i", None, Grid1D(0.0, 1.0, 51), 0.25, levels=1) == "grid_too_small"

    def test_perturbed_flow_breakdown_is_recorded(self, catalog):
        """A broken operator whose flow hits a pole or crossing reports infinite deviation."""
        report = invariant_flow_check("thm2.iv", None, None, overrides=catalog.resolve("thm2.iv").flow.mutation)
        assert report.perturbed
        assert not report.passed
        assert all(row["deviation"] > 1e-2 for row in report.levels)
        assert report.notes


class TestFlowFixtures:
    @pytest.mark.parametrize("entry_id", ["thm1.i", "thm2.iv"])
    def test_default_grid_converges(self, entry_id):
        """At N = 201 the two solutions agree to 1e-4 and the error falls by about 4 per doubling."""
        report = invariant_flow_check(entry_id, None, None)
        assert report.levels[0]["n"] == 201
        assert report.max_flow_deviation <= FLOW_TOLERANCE
        assert report.max_pde_residual <= FLOW_TOLERANCE
        assert report.refinement_ratios[0] is not None
        assert all(r is None or 3.0 <= r <= 5.0 for r in report.refinement_ratios)
        assert report.passed

    @pytest.mark.parametrize("entry_id", ["thm1.i", "thm2.iv"])
    def test_broken_operator_never_converges(self, catalog, entry_id):
        mutation = catalog.resolve(entry_id).flow.mutation
        report = invariant_flow_check(entry_id, None, None, overrides=mutation)
        assert all(row["deviation"] > 1e-2 for row in report.levels)
        assert not report.passed

    def test_round_off_ratio_is_noted(self):
        """thm2.i agrees to round-off, so its deviation ratio is not measured and a note says so."""
        report = invariant_flow_check("thm2.i", None, None)
        assert report.max_flow_deviation <= 1e-9
        assert report.refinement_ratios[0] is None
        assert any(note.startswith("deviation ratio") and "round-off" in note for note in report.notes)
