"""
Deterministic numeric validation.

Fixed-step RK4 integration, finite-difference residuals of constraint systems,
the PDE residual of gridded solutions, and the invariant-flow check: a solution
built from the invariant surface condition is compared against an independent
method-of-lines evolution of the full equation.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline
from sympy.core.function import AppliedUndef

from . import symexpr as se
from .catalog import Catalog, CatalogError, get_catalog
from .invariance import EvolutionPDE, SymmetryOperator, to_v_operator
from .parser import parse_expression

logger = logging.getLogger(__name__)

DEFAULT_FD_ORDER = 4
CONSTRAINT_TOLERANCE = 1e-6
FLOW_TOLERANCE = 1e-4
RATIO_RANGE = (3.0, 5.0)
RATIO_FLOOR = 1e-9
CFL_FACTOR = 0.6
MAX_MOL_STEPS = int(os.getenv("CONDSYM_MAX_MOL_STEPS", "2000000"))
CHARACTERISTIC_SUBSTEPS = 4
BREAKDOWN_CODES = frozenset({"pole", "flow_blowup", "characteristics_cross", "coverage", "step_failure"})
MIN_MARGIN = 4


class NumericsError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class Grid1D:
    x0: float
    x1: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 8:
            raise NumericsError("grid_too_small", f"grid needs at least 8 points, got {self.n}")
        if not self.x1 > self.x0:
            raise NumericsError("grid_too_small", f"empty interval [{self.x0}, {self.x1}]")

    @property
    def spacing(self) -> float:
        return (self.x1 - self.x0) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.n)

    def refined(self) -> Grid1D:
        """Halve the spacing; every old node stays a node."""
        return Grid1D(self.x0, self.x1, 2 * self.n - 1)


class EvaluationTape:
    """Expressions compiled once for array evaluation, parameters already bound."""

    def __init__(self, exprs: Sequence[sp.Basic], args: Sequence[sp.Symbol], bindings: Mapping | None = None):
        bound = [se.substitute(e, bindings) if bindings else se.normalize(e) for e in exprs]
        free = set().union(*(e.free_symbols for e in bound)) - set(args) if bound else set()
        if free or any(e.atoms(AppliedUndef) for e in bound):
            raise NumericsError("unbound", f"unbound symbols {sorted(map(str, free))} in evaluation tape")
        self.exprs = tuple(bound)
        self.args = tuple(args)
        self._fn = sp.lambdify(self.args, list(self.exprs), modules="numpy", cse=True)

    def __call__(self, *values: Any) -> list[np.ndarray]:
        shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        with np.errstate(all="ignore"):
            out = self._fn(*values)
        return [np.broadcast_to(np.asarray(v, dtype=float), shape) for v in out]


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: Sequence[float] | np.ndarray,
    t_span: tuple[float, float],
    step: float,
    *,
    stride: int = 1,
) -> Trajectory:
    """Classical fixed-step RK4 from t_span[0] to t_span[1]; integration may run backwards."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if step <= 0:
        raise NumericsError("bad_step", f"step must be positive, got {step}")
    steps = max(1, int(round(abs(t1 - t0) / step)))
    h = (t1 - t0) / steps
    y = np.array(y0, dtype=float)
    times, states = [t0], [y.copy()]
    t = t0
    with np.errstate(all="ignore"):
        for k in range(1, steps + 1):
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + k * h
            if not np.all(np.isfinite(y)):
                raise NumericsError("pole", f"solution left the finite range at t = {t:.6g}")
            if k % stride == 0 or k == steps:
                times.append(t)
                states.append(y.copy())
    logger.debug("rk4: %d steps of %.3g", steps, h)
    return Trajectory(np.array(times), np.array(states))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def central_weights(derivative: int, order: int = DEFAULT_FD_ORDER) -> tuple[int, np.ndarray]:
    """Radius and weights of the central stencil for d^derivative/dx^derivative."""
    if order not in (2, 4):
        raise NumericsError("bad_order", f"finite-difference order must be 2 or 4, got {order}")
    if derivative == 0:
        return 0, np.array([1.0])
    radius = (derivative + 1) // 2 - 1 + order // 2
    offsets = list(range(-radius, radius + 1))
    weights = sp.finite_diff_weights(derivative, offsets, 0)[derivative][-1]
    return radius, np.array([float(w) for w in weights])


def _stencil(values: np.ndarray, weights: np.ndarray, radius: int, margin: int, spacing: float, derivative: int) -> np.ndarray:
    n = values.shape[-1]
    out = np.zeros(values.shape[:-1] + (n - 2 * margin,))
    for j, w in zip(range(-radius, radius + 1), weights):
        out += w * values[..., margin + j : n - margin + j]
    return out / spacing**derivative


def _derivative_counts(atom: sp.Basic) -> tuple[AppliedUndef, int, int]:
    if isinstance(atom, sp.Derivative):
        counts = dict(atom.variable_count)
        return atom.expr, int(counts.get(se.t, 0)), int(counts.get(se.x, 0))
    return atom, 0, 0


@dataclass(frozen=True)
class ConstraintCheckReport:
    system_id: str
    levels: list[dict[str, Any]]
    ratio: float | None
    exact: bool
    symbolic_residuals: list[str]
    symbolic_grid_residual: float
    tolerance: float
    order: int
    integration: dict[str, Any] | None = None

    @property
    def max_residual(self) -> float:
        return self.levels[0]["residual"]

    @property
    def passed(self) -> bool:
        ok = self.max_residual <= self.tolerance
        if self.integration is not None:
            ok = ok and self.integration["max_relative_error"] <= self.tolerance * 10
        return ok


def _fd_residual(
    expressions: Sequence[sp.Expr],
    functions: Mapping[str, sp.Expr],
    grid: Grid1D,
    order: int,
    t0: float,
) -> float:
    """Max |equation| over interior nodes, derivatives of the sampled candidates by central differences."""
    h = grid.spacing
    xs = grid.points
    margin = MIN_MARGIN
    samplers = {
        name: EvaluationTape([value], (se.t, se.x)) for name, value in functions.items()
    }
    worst = 0.0
    for expr in expressions:
        atoms = sorted(
            expr.atoms(sp.Derivative) | {a for a in expr.atoms(AppliedUndef) if not _inside_derivative(expr, a)},
            key=sp.default_sort_key,
        )
        placeholders = {atom: sp.Dummy(f"d{i}") for i, atom in enumerate(atoms)}
        body = expr.xreplace({a: p for a, p in placeholders.items() if isinstance(a, sp.Derivative)})
        body = body.xreplace({a: p for a, p in placeholders.items() if not isinstance(a, sp.Derivative)})
        args = [placeholders[a] for a in atoms]
        tape = EvaluationTape([body], (*args, se.t, se.x))
        columns = []
        for atom in atoms:
            function, nt, nx = _derivative_counts(atom)
            name = type(function).__name__
            if name not in samplers:
                raise NumericsError("unbound", f"no candidate for {name}")
            rx, wx = central_weights(nx, order)
            rt, wt = central_weights(nt, order)
            if grid.n - 2 * margin < 5 or rx > margin:
                raise NumericsError(
                    "stencil_underflow", f"grid of {grid.n} points leaves no interior for a radius-{rx} stencil"
                )
            levels = np.array([samplers[name](t0 + j * h, xs)[0] for j in range(-rt, rt + 1)])
            in_x = _stencil(levels, wx, rx, margin, h, nx)
            columns.append(np.tensordot(wt, in_x, axes=(0, 0)) / h**nt)
        interior = xs[margin : grid.n - margin]
        (value,) = tape(*columns, np.full_like(interior, t0), interior)
        worst = max(worst, float(np.max(np.abs(value))))
    return worst


def _drop_vanishing(expr: sp.Expr, functions: Mapping[str, sp.Expr]) -> sp.Expr:
    """Zero the derivative atoms whose candidate value vanishes identically."""
    zeros = {}
    for atom in expr.atoms(sp.Derivative) | expr.atoms(AppliedUndef):
        function, nt, nx = _derivative_counts(atom)
        value = functions.get(type(function).__name__)
        if value is None:
            continue
        exact = sp.diff(value, *([se.t] * nt + [se.x] * nx)) if nt or nx else value
        if se.is_zero(exact):
            zeros[atom] = sp.Integer(0)
    return se.normalize(expr.xreplace(zeros)) if zeros else expr


def _inside_derivative(expr: sp.Basic, atom: sp.Basic) -> bool:
    stripped = expr.xreplace({d: sp.Integer(0) for d in expr.atoms(sp.Derivative)})
    return not stripped.has(atom)


def _initial_value_check(
    equation: sp.Expr, name: str, exact: sp.Expr, grid: Grid1D, t0: float
) -> dict[str, Any]:
    """Integrate a single second-order ODE in x from the candidate's initial data."""
    function = se.func(name)
    h0, h1, h2 = sp.symbols("h0 h1 h2")
    d1, d2 = sp.Derivative(function, se.x), sp.Derivative(function, (se.x, 2))
    flat = equation.xreplace({d2: h2}).xreplace({d1: h1}).xreplace({function: h0})
    solved = sp.solve(flat, h2)
    if len(solved) != 1:
        raise NumericsError("unsupported_system", f"cannot solve {se.render(equation)} for the second derivative")
    tape = EvaluationTape([solved[0]], (se.x, h0, h1), {se.t: t0})

    def rhs(s: float, y: np.ndarray) -> np.ndarray:
        (acc,) = tape(s, y[0], y[1])
        return np.array([y[1], float(acc)])

    at_t0 = exact.subs(se.t, t0)
    y0 = [float(at_t0.subs(se.x, grid.x0)), float(sp.diff(at_t0, se.x).subs(se.x, grid.x0))]
    stride = CHARACTERISTIC_SUBSTEPS
    trajectory = integrate_ode(rhs, y0, (grid.x0, grid.x1), grid.spacing / stride, stride=stride)
    (reference,) = EvaluationTape([at_t0], (se.x,))(trajectory.times)
    error = np.abs(trajectory.states[:, 0] - reference) / np.maximum(np.abs(reference), 1e-300)
    return {"steps": (len(trajectory.times) - 1) * stride, "max_relative_error": float(np.max(error))}


def ode_constraint_check(
    system_id: str,
    candidate: Mapping[str, Any],
    params: Mapping[str, Any] | None,
    grid: Grid1D,
    *,
    order: int = DEFAULT_FD_ORDER,
    tolerance: float = CONSTRAINT_TOLERANCE,
    t0: float = 0.0,
    catalog: Catalog | None = None,
) -> ConstraintCheckReport:
    """Finite-difference residual of a constraint system at two grid levels, plus the exact residual."""
    catalog = catalog or get_catalog()
    system = catalog.system(system_id)
    symbolic = catalog.constraint_residual(system_id, candidate, params)
    values = {k: sp.sympify(v) for k, v in (params or {}).items()}
    for name, text in system.derived:
        derived = se.substitute(se.normalize(parse_expression(text)), values)
        if not derived.free_symbols:
            values[name] = derived
    functions = {
        name: se.substitute(parse_expression(v) if isinstance(v, str) else sp.sympify(v), values)
        for name, v in candidate.items()
    }
    expressions = [_drop_vanishing(se.substitute(e, values), functions) for e in system.expressions]
    free = set().union(*(e.free_symbols for e in expressions)) - {se.t, se.x}
    if free:
        raise CatalogError("missing_parameter", f"{system_id} needs {', '.join(sorted(map(str, free)))}")

    levels = []
    for level in (grid, grid.refined()):
        residual = _fd_residual(expressions, functions, level, order, t0)
        levels.append({"n": level.n, "spacing": level.spacing, "residual": residual})
        logger.debug("%s at n=%d: residual %.3e", system_id, level.n, residual)
    coarse, fine = levels[0]["residual"], levels[1]["residual"]
    ratio = coarse / fine if coarse > RATIO_FLOOR and fine > 0 else None

    xs = grid.points[MIN_MARGIN : grid.n - MIN_MARGIN]
    symbolic_grid = 0.0
    if any(r != 0 for r in symbolic):
        tape = EvaluationTape(symbolic, (se.t, se.x))
        symbolic_grid = max(float(np.max(np.abs(v))) for v in tape(np.full_like(xs, t0), xs))

    integration = None
    if len(system.unknowns) == 1 and len(expressions) == 1:
        name = system.unknowns[0]
        if expressions[0].has(sp.Derivative(se.func(name), (se.x, 2))):
            integration = _initial_value_check(expressions[0], name, functions[name], grid, t0)
    return ConstraintCheckReport(
        system_id=system_id,
        levels=levels,
        ratio=ratio,
        exact=all(r == 0 for r in symbolic),
        symbolic_residuals=[se.render(r) for r in symbolic],
        symbolic_grid_residual=symbolic_grid,
        tolerance=tolerance,
        order=order,
        integration=integration,
    )


# ---------------------------------------------------------------------------
# PDE residual
# ---------------------------------------------------------------------------


def _coefficient_tape(pde: EvolutionPDE, extra: Sequence[sp.Expr] = ()) -> EvaluationTape:
    exprs = [pde.F0, pde.F1, pde.F2, *extra]
    free = set().union(*(sp.sympify(e).free_symbols for e in exprs)) - {se.V}
    if free or any(sp.sympify(e).atoms(AppliedUndef) for e in exprs):
        raise NumericsError(
            "unsupported_operator", f"coefficients must depend on V only; found {sorted(map(str, free))}"
        )
    return EvaluationTape(exprs, (se.V,))


def pde_residual(pde: EvolutionPDE, values: np.ndarray, dt: float, dx: float) -> float:
    """Max |V_xx - F0*V_t - F1*V_x - F2| over interior nodes, central differences in t and x."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 3 or values.shape[1] < 5:
        raise NumericsError("grid_too_small", f"need at least 3 time levels and 5 points, got {values.shape}")
    tape = _coefficient_tape(pde)
    inner = values[1:-1, 1:-1]
    v_t = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2 * dt)
    v_x = (values[1:-1, 2:] - values[1:-1, :-2]) / (2 * dx)
    v_xx = (values[1:-1, 2:] - 2 * inner + values[1:-1, :-2]) / dx**2
    F0, F1, F2 = tape(inner)
    residual = v_xx - F0 * v_t - F1 * v_x - F2
    return float(np.max(np.abs(residual)))


# ---------------------------------------------------------------------------
# Invariant-flow check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowCheckReport:
    entry_id: str
    params: dict[str, str]
    levels: list[dict[str, Any]]
    refinement_ratios: list[float | None]
    runtime: float
    perturbed: bool = False
    tolerance: float = FLOW_TOLERANCE
    notes: list[str] = field(default_factory=list)

    @property
    def max_flow_deviation(self) -> float:
        return self.levels[0]["deviation"]

    @property
    def max_pde_residual(self) -> float:
        return self.levels[0]["residual"]

    @property
    def passed(self) -> bool:
        """Deviation and residual within tolerance and every measured ratio in RATIO_RANGE.

        A ratio is None when either level is at round-off (or the level broke
        down); it does not fail the check, and ``notes`` says which one.
        """
        if self.max_flow_deviation > self.tolerance or self.max_pde_residual > self.tolerance:
            return False
        low, high = RATIO_RANGE
        return all(r is None or low <= r <= high for r in self.refinement_ratios)


def _profile(
    tape: EvaluationTape, profile: tuple[float, float], grid: Grid1D, pad_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """Solve V'' = F0*(eta - xi*V') + F1*V' + F2 from x0 outwards on the padded grid."""

    def rhs(_: float, y: np.ndarray) -> np.ndarray:
        F0, F1, F2, xi, eta = tape(y[0])
        return np.array([y[1], float(F0 * (eta - xi * y[1]) + F1 * y[1] + F2)])

    h = grid.spacing
    right_end = grid.x1 + pad_points * h
    left_end = grid.x0 - pad_points * h
    forward = integrate_ode(rhs, profile, (grid.x0, right_end), h)
    values = forward.states[:, 0]
    if pad_points:
        backward = integrate_ode(rhs, profile, (grid.x0, left_end), h)
        values = np.concatenate([backward.states[:0:-1, 0], values])
    xs = grid.x0 + h * np.arange(-pad_points, grid.n + pad_points)
    if np.any(values <= 0):
        raise NumericsError("flow_blowup", "compatible profile leaves V > 0 on the padded grid")
    return xs, values


def _characteristics(
    tape: EvaluationTape, xs: np.ndarray, v0: np.ndarray, grid: Grid1D, sample_times: np.ndarray
) -> np.ndarray:
    """ISC flow dV/dt = eta(V), dX/dt = xi(V) from every padded node, splined back to the grid."""
    dt = (sample_times[1] - sample_times[0]) / CHARACTERISTIC_SUBSTEPS

    def rhs(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, _, _, xi, eta = tape(v)
        return eta, xi

    v, pos = v0.copy(), xs.copy()
    out = np.empty((len(sample_times), grid.n))
    target = grid.points
    for k, t_k in enumerate(sample_times):
        if k:
            for _ in range(CHARACTERISTIC_SUBSTEPS):
                a_v, a_x = rhs(v)
                b_v, b_x = rhs(v + dt / 2 * a_v)
                c_v, c_x = rhs(v + dt / 2 * b_v)
                d_v, d_x = rhs(v + dt * c_v)
                v = v + dt / 6 * (a_v + 2 * b_v + 2 * c_v + d_v)
                pos = pos + dt / 6 * (a_x + 2 * b_x + 2 * c_x + d_x)
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise NumericsError("flow_blowup", f"ISC flow left V > 0 before t = {t_k:.6g}")
        if np.any(np.diff(pos) <= 0):
            raise NumericsError("characteristics_cross", f"characteristics cross at t = {t_k:.6g}")
        if pos[0] > target[0] or pos[-1] < target[-1]:
            raise NumericsError("coverage", f"characteristics no longer cover [{grid.x0}, {grid.x1}] at t = {t_k:.6g}")
        out[k] = CubicSpline(pos, v)(target)
    return out


def _method_of_lines(
    tape: EvaluationTape,
    initial: np.ndarray,
    left: CubicSpline,
    right: CubicSpline,
    grid: Grid1D,
    sample_times: np.ndarray,
) -> np.ndarray:
    """Evolve V_t = (V_xx - F1*V_x - F2)/F0 with Dirichlet data from the ISC solution."""
    h = grid.spacing
    u = initial.copy()
    out = np.empty((len(sample_times), grid.n))
    out[0] = u
    steps_taken = 0

    def rate(t: float, w: np.ndarray) -> np.ndarray:
        w = w.copy()
        w[0], w[-1] = left(t), right(t)
        F0, F1, F2, _, _ = tape(w[1:-1])
        if np.any(F0 <= 0) or not np.all(np.isfinite(F0)):
            raise NumericsError("step_failure", f"diffusivity lost positivity at t = {t:.6g}")
        w_x = (w[2:] - w[:-2]) / (2 * h)
        w_xx = (w[2:] - 2 * w[1:-1] + w[:-2]) / h**2
        out_rate = np.zeros_like(w)
        out_rate[1:-1] = (w_xx - F1 * w_x - F2) / F0
        return out_rate

    for k in range(1, len(sample_times)):
        t_start, t_stop = sample_times[k - 1], sample_times[k]
        F0 = tape(u)[0]
        if np.any(F0 <= 0):
            raise NumericsError("step_failure", f"diffusivity lost positivity at t = {t_start:.6g}")
        limit = CFL_FACTOR * h**2 * float(np.min(F0))
        substeps = max(1, math.ceil((t_stop - t_start) / limit))
        steps_taken += substeps
        if steps_taken > MAX_MOL_STEPS:
            raise NumericsError("step_failure", f"method of lines exceeded {MAX_MOL_STEPS} steps at t = {t_start:.6g}")
        dt = (t_stop - t_start) / substeps
        t = t_start
        for _ in range(substeps):
            k1 = rate(t, u)
            k2 = rate(t + dt / 2, u + dt / 2 * k1)
            k3 = rate(t + dt / 2, u + dt / 2 * k2)
            k4 = rate(t + dt, u + dt * k3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
            u[0], u[-1] = left(t), right(t)
            if not np.all(np.isfinite(u)):
                raise NumericsError("step_failure", f"method of lines diverged at t = {t:.6g}")
        out[k] = u
    logger.debug("method of lines: %d steps on %d points", steps_taken, grid.n)
    return out


def _flow_level(
    pde: EvolutionPDE, op: SymmetryOperator, profile: tuple[float, float], grid: Grid1D, t_end: float
) -> dict[str, Any]:
    tape = _coefficient_tape(pde, (op.xi, op.eta))
    h = grid.spacing
    samples = max(8, math.ceil(t_end / h))
    sample_times = np.linspace(0.0, t_end, samples + 1)

    xs, v0 = _profile(tape, profile, grid, MIN_MARGIN)
    pad = MIN_MARGIN
    for _ in range(4):
        speed = float(np.max(np.abs(tape(v0)[3])))
        wanted = MIN_MARGIN + math.ceil(1.5 * speed * t_end / h)
        if wanted > pad:
            pad = wanted
            xs, v0 = _profile(tape, profile, grid, pad)
        try:
            isc = _characteristics(tape, xs, v0, grid, sample_times)
            break
        except NumericsError as exc:
            if exc.code != "coverage":
                raise
            pad *= 2
            xs, v0 = _profile(tape, profile, grid, pad)
    else:
        raise NumericsError("coverage", f"could not cover [{grid.x0}, {grid.x1}] with characteristics")

    left = CubicSpline(sample_times, isc[:, 0])
    right = CubicSpline(sample_times, isc[:, -1])
    mol = _method_of_lines(tape, isc[0], left, right, grid, sample_times)
    deviation = float(np.max(np.abs(mol - isc)))
    residual = pde_residual(pde, isc, sample_times[1] - sample_times[0], h)
    return {"n": grid.n, "spacing": h, "deviation": deviation, "residual": residual, "pad": pad}


def invariant_flow_check(
    entry_id: str,
    params: Mapping[str, Any] | None,
    grid: Grid1D | None,
    t_end: float | None = None,
    *,
    profile: tuple[float, float] | None = None,
    overrides: Mapping[str, str] | None = None,
    levels: int = 2,
    catalog: Catalog | None = None,
) -> FlowCheckReport:
    """Compare the ISC-flow solution with a method-of-lines evolution at successive grid levels.

    ``overrides`` perturbs the operator only (the negative control); the
    equation and the method-of-lines side stay unperturbed.
    """
    catalog = catalog or get_catalog()
    entry = catalog.resolve(entry_id)
    flow = entry.flow
    if params is None:
        if flow is None:
            raise CatalogError("missing_parameter", f"{entry.id} has no flow fixture; pass parameters")
        params = flow.params
    if profile is None:
        if flow is None:
            raise CatalogError("missing_parameter", f"{entry.id} has no flow fixture; pass a profile")
        profile = (float(flow.profile[0]), float(flow.profile[1]))
    if grid is None:
        x0, x1 = flow.domain if flow else (0, 1)
        grid = Grid1D(float(x0), float(x1), 201)
    if t_end is None:
        t_end = float(flow.t_end) if flow else 0.5
    if levels < 2:
        raise NumericsError("grid_too_small", "the flow check needs at least two grid levels")

    instance = catalog.instantiate(entry.id, params, overrides=overrides)
    pde = instance.pde
    op = to_v_operator(pde, instance.operator)
    started = time.perf_counter()
    rows = []
    notes: list[str] = []
    level = grid
    for _ in range(levels):
        try:
            rows.append(_flow_level(pde, op, profile, level, t_end))
        except NumericsError as exc:
            if not overrides or exc.code not in BREAKDOWN_CODES:
                raise
            rows.append(
                {"n": level.n, "spacing": level.spacing, "deviation": math.inf, "residual": math.inf, "failure": exc.code}
            )
            notes.append(f"n={level.n}: perturbed flow broke down ({exc.code}): {exc.message}")
        logger.debug("flow %s n=%d deviation %.3e residual %.3e", entry.id, level.n, rows[-1]["deviation"], rows[-1]["residual"])
        level = level.refined()
    ratios: list[float | None] = []
    for key in ("deviation", "residual"):
        for coarse, fine in zip(rows, rows[1:]):
            if not (math.isfinite(coarse[key]) and math.isfinite(fine[key])):
                ratios.append(None)
            elif coarse[key] <= RATIO_FLOOR or fine[key] == 0:
                ratios.append(None)
                notes.append(f"{key} ratio n={coarse['n']}->{fine['n']} not measured: {key} at round-off level")
            else:
                ratios.append(coarse[key] / fine[key])
    return FlowCheckReport(
        entry_id=entry.id,
        params={k: str(v) for k, v in params.items()},
        levels=rows,
        refinement_ratios=ratios,
        runtime=time.perf_counter() - started,
        perturbed=bool(overrides),
        notes=notes,
    )
