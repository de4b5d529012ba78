"""Implicit time stepping for the first-and-half-order diffusion equation.

Solves rho1 u_t + rho2 u_t^{1/2} - L u = g on (0,1) x (0,T] with zero
initial data and homogeneous Dirichlet boundary values.  The half-order
term uses the L1 kernel (history on the right-hand side), the first-order
term a two-step backward formula (single backward-Euler startup step),
and L the conservative three-point form, so each step is one tridiagonal
solve.  Observed accuracy is O(dt^{3/2}) + O(dx^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import DataError, DomainError, SolverError
from .fracops import gamma_fn, l1_weights
from .model import (
    EllipticCoefficients,
    Grid,
    ModelParams,
    TimeSeriesField,
    build_grid,
)

SourceLike = Callable[[np.ndarray, np.ndarray], np.ndarray] | np.ndarray | TimeSeriesField


@dataclass(frozen=True, eq=False)
class ForwardProblem:
    """Grid, constants, operator coefficients and source for one solve."""

    grid: Grid
    params: ModelParams
    coeffs: EllipticCoefficients
    source: np.ndarray

    def __post_init__(self):
        expected = (self.grid.nx + 2, self.grid.nt + 1)
        if self.source.shape != expected:
            raise DataError(f"source shape {self.source.shape} does not match grid {expected}")
        if self.coeffs.a.shape[0] != self.grid.nx + 2:
            raise DataError(
                f"coefficients sampled on {self.coeffs.a.shape[0]} nodes, grid has {self.grid.nx + 2}"
            )

    @classmethod
    def make(
        cls,
        grid: Grid,
        params: ModelParams,
        coeffs: EllipticCoefficients,
        source: SourceLike,
    ) -> "ForwardProblem":
        if isinstance(source, TimeSeriesField):
            values = np.asarray(source.values, dtype=float)
        elif callable(source):
            X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
            values = np.asarray(source(X, T), dtype=float) * np.ones_like(X)
        else:
            values = np.asarray(source, dtype=float)
        return cls(grid=grid, params=params, coeffs=coeffs, source=values)


def _interior_bands(coeffs: EllipticCoefficients, dx: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, diagonal, upper) of L restricted to interior nodes."""
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    a_half = 0.5 * (a[1:] + a[:-1])
    lo = a_half[:-1] / dx**2 + b[1:-1] / (2 * dx)
    up = a_half[1:] / dx**2 - b[1:-1] / (2 * dx)
    di = -(a_half[:-1] + a_half[1:]) / dx**2 - c[1:-1]
    return lo, di, up


def solve_forward(problem: ForwardProblem) -> TimeSeriesField:
    """March the implicit scheme from zero initial data.

    Raises SolverError if the shifted operator loses diagonal dominance,
    a tridiagonal solve fails, or the iterate stops being finite; the
    message names the offending time step.
    """
    grid, params, coeffs = problem.grid, problem.params, problem.coeffs
    nx, nt, dx, dt = grid.nx, grid.nt, grid.dx, grid.dt
    for name, arr in (("a", coeffs.a), ("b", coeffs.b), ("c", coeffs.c), ("source", problem.source)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} contains non-finite entries")
    if np.min(coeffs.a) <= 0:
        raise DataError(f"diffusion coefficient must be positive, min is {np.min(coeffs.a):g}")

    c_half = dt**-0.5 / gamma_fn(1.5)
    w = l1_weights(0.5, nt)
    lo, di, up = _interior_bands(coeffs, dx)

    theta1 = params.rho1 / dt + params.rho2 * c_half
    theta2 = 1.5 * params.rho1 / dt + params.rho2 * c_half
    margin = min(theta1, theta2) + min(0.0, float(np.min(coeffs.c[1:-1])))
    if margin <= 0:
        raise SolverError(
            "implicit operator loses diagonal dominance: "
            f"rho1/dt + rho2*dt^(-1/2)/Gamma(3/2) + min(c) = {margin:g} <= 0; "
            "refine the time step or rescale the model"
        )

    def banded(theta: float) -> np.ndarray:
        ab = np.zeros((3, nx))
        ab[0, 1:] = -up[:-1]
        ab[1, :] = theta - di
        ab[2, :-1] = -lo[1:]
        return ab

    ab1, ab2 = banded(theta1), banded(theta2)
    src = np.ascontiguousarray(problem.source[1:-1, :].T)  # (nt+1, nx)
    U = np.zeros((nt + 1, nx))
    H = np.zeros((nt + 1, nx))  # H[j] = U[j] - U[j-1]

    for n in range(1, nt + 1):
        if n == 1:
            rhs = src[1].copy()
        else:
            hist = w[n - 1 : 0 : -1] @ H[1:n]
            rhs = (
                src[n]
                + params.rho1 * (4.0 * U[n - 1] - U[n - 2]) / (2 * dt)
                + params.rho2 * c_half * (U[n - 1] - hist)
            )
        try:
            U[n] = scipy.linalg.solve_banded(
                (1, 1), ab1 if n == 1 else ab2, rhs, check_finite=False
            )
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"tridiagonal solve failed at step {n} (t={n * dt:g}): {exc}") from exc
        if not np.all(np.isfinite(U[n])):
            raise SolverError(f"solution lost finiteness at step {n} (t={n * dt:g})")
        H[n] = U[n] - U[n - 1]

    values = np.zeros((nx + 2, nt + 1))
    values[1:-1, :] = U.T
    return TimeSeriesField(values=values, grid=grid, bc_kind="homogeneous-dirichlet")


def manufactured_case(grid: Grid, params: ModelParams) -> tuple[ForwardProblem, TimeSeriesField]:
    """Unit-diffusion problem whose exact solution is t^2 sin(pi x).

    The matching source is
        g = [2 rho1 t + rho2 (2/Gamma(5/2)) t^{3/2} + pi^2 t^2] sin(pi x),
    using the closed form of the half-order derivative of t^2.
    """
    coeffs = EllipticCoefficients.from_callables(grid, 1.0)
    X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
    sin = np.sin(np.pi * X)
    half_t2 = (2.0 / gamma_fn(2.5)) * T**1.5
    source = (2.0 * params.rho1 * T + params.rho2 * half_t2 + np.pi**2 * T**2) * sin
    problem = ForwardProblem(grid=grid, params=params, coeffs=coeffs, source=source)
    exact = TimeSeriesField(values=T**2 * sin, grid=grid, bc_kind="homogeneous-dirichlet")
    return problem, exact


@dataclass(frozen=True)
class ConvergenceResult:
    """Errors and empirical orders of the manufactured case under refinement.

    errors are max-norm gaps to the exact solution; error_slope fits them
    against the step size (it flattens once the non-refined direction's
    error floor is reached).  pairwise_orders come from successive
    same-grid solution differences, which cancel that floor exactly, and
    observed_order is their median.
    """

    kind: str
    resolutions: tuple[int, ...]
    step_sizes: tuple[float, ...]
    errors: tuple[float, ...]
    error_slope: float
    pairwise_orders: tuple[float, ...]
    observed_order: float


def convergence_study(
    kind: str,
    params: ModelParams | None = None,
    resolutions: Sequence[int] | None = None,
    fixed_resolution: int | None = None,
) -> ConvergenceResult:
    """Refine dt (kind='temporal') or dx (kind='spatial') and estimate orders.

    Resolutions must form a nested doubling ladder (nt doubles; nx maps to
    2nx+1) so consecutive solutions share grid nodes: the empirical order
    uses max-norm differences of consecutive solutions at shared nodes.
    """
    if kind == "temporal":
        res = tuple(resolutions) if resolutions is not None else (128, 256, 512)
        nx_fixed = fixed_resolution if fixed_resolution is not None else 255
    elif kind == "spatial":
        res = tuple(resolutions) if resolutions is not None else (31, 63, 127)
        nt_fixed = fixed_resolution if fixed_resolution is not None else 4096
    else:
        raise DomainError(f"unknown convergence kind {kind!r}")
    if len(res) < 3:
        raise DomainError("convergence study needs at least three resolutions")
    for lo, hi in zip(res, res[1:]):
        nested = hi == 2 * lo if kind == "temporal" else hi == 2 * lo + 1
        if not nested:
            raise DomainError(
                f"resolutions {res} must double ({'2n' if kind == 'temporal' else '2n+1'} rule)"
            )
    if params is None:
        params = ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.5, delta=0.25)

    errors, steps, fields = [], [], []
    for r in res:
        grid = (
            build_grid(nx_fixed, r, params.T)
            if kind == "temporal"
            else build_grid(r, nt_fixed, params.T)
        )
        problem, exact = manufactured_case(grid, params)
        solution = solve_forward(problem)
        errors.append(float(np.max(np.abs(solution.values - exact.values))))
        steps.append(grid.dt if kind == "temporal" else grid.dx)
        fields.append(solution.values)

    diffs = []
    for coarse, fine in zip(fields, fields[1:]):
        shared = fine[:, ::2] if kind == "temporal" else fine[::2, :]
        diffs.append(float(np.max(np.abs(shared - coarse))))
    pairwise = tuple(float(np.log2(diffs[i] / diffs[i + 1])) for i in range(len(diffs) - 1))
    slope = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    return ConvergenceResult(
        kind=kind,
        resolutions=res,
        step_sizes=tuple(steps),
        errors=tuple(errors),
        error_slope=slope,
        pairwise_orders=pairwise,
        observed_order=float(np.median(pairwise)),
    )
