"""Randomized ensembles that sample the stability inequalities.

Each member draws an unknown from a decaying random expansion, pushes it
through the (linearized) forward pipeline, and records the ratio of the
unknown's Sobolev norm to the snapshot norm plus a trace aggregate.  The
largest observed ratio is an empirical stand-in for the stability constant;
it is reported, never asserted against a theoretical value.

The aggregates sum five windowed time-derivative norms of orders 1 through
3 in half steps.  Half orders use the Caputo composition (integer
difference first, then the half-order memory kernel), so they vanish on
time polynomials of degree at most the integer part, and every term is
positively homogeneous of degree one in the field.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, DomainError, SizingError, SolverError
from .forward import ForwardProblem, solve_forward
from .fracops import caputo_half_of_derivative, discrete_sobolev_norm, fd_derivative
from .inversion import diffusion_basis, source_basis, transversality_margin
from .model import (
    EllipticCoefficients,
    Grid,
    ModelParams,
    ObservationGeometry,
    TimeSeriesField,
    window_indices,
)

ENSEMBLE_KINDS = ("boundary", "interior")
ENSEMBLE_UNKNOWNS = ("source", "zeroth", "diffusion")
AGGREGATE_ORDERS = (1.0, 1.5, 2.0, 2.5, 3.0)

MIN_MEMBERS = 10
MIN_NT_AGGREGATE = 128
MIN_NX = {"source": 256, "zeroth": 256, "diffusion": 384}
DEGENERATE_FLOOR = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    """Sampling law for one stability ensemble."""

    count: int
    seed: int
    kind: str
    unknown: str
    n_basis: int = 12
    decay: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.count < MIN_MEMBERS:
            raise DomainError(f"ensemble count {self.count} below minimum {MIN_MEMBERS}")
        if self.kind not in ENSEMBLE_KINDS:
            raise DomainError(f"kind {self.kind!r} not one of {ENSEMBLE_KINDS}")
        if self.unknown not in ENSEMBLE_UNKNOWNS:
            raise DomainError(f"unknown {self.unknown!r} not one of {ENSEMBLE_UNKNOWNS}")
        if self.n_basis < 1:
            raise DomainError(f"basis size {self.n_basis} must be positive")
        if self.decay < 1.0:
            raise DomainError(
                f"amplitude decay {self.decay} must be >= 1 so expansions stay resolution-stable"
            )
        if self.amplitude < 0:
            raise DomainError(f"amplitude {self.amplitude} must be nonnegative")


@dataclass(frozen=True)
class StabilityRecord:
    member: int
    unknown_norm: float
    snapshot_norm: float
    aggregate: float
    ratio: float
    degenerate: bool


# ---------------------------------------------------------------------------
# Trace aggregates.


def _window_guard(grid: Grid, params: ModelParams) -> np.ndarray:
    if grid.nt < MIN_NT_AGGREGATE:
        raise SizingError(
            f"nt={grid.nt} below {MIN_NT_AGGREGATE}; third time differences need finer sampling"
        )
    margin = 3.0 * grid.dt
    if params.t0 - params.delta < margin or params.t0 + params.delta > params.T - margin:
        raise DomainError(
            f"window ({params.t0 - params.delta:g}, {params.t0 + params.delta:g}) "
            f"too close to 0 or T={params.T:g} for the derivative stencils"
        )
    return window_indices(grid.ts, params.t0, params.delta)


def _windowed_derivative_norms(
    block: np.ndarray, grid: Grid, window: np.ndarray, weight_dx: bool
) -> dict[float, float]:
    """L2 norms over the window of the five derivative orders of a series.

    block is (nt+1,) for a single trace or (nodes, nt+1) for a band; with
    weight_dx the squares are also integrated across the band.
    """
    norms = {}
    for order in AGGREGATE_ORDERS:
        if order == int(order):
            d = fd_derivative(block, grid.dt, int(order), axis=-1)
        else:
            d = caputo_half_of_derivative(block, int(order - 0.5), grid.dt, axis=-1)
        sq = np.trapezoid(d[..., window] ** 2, dx=grid.dt, axis=-1)
        if weight_dx:
            sq = np.trapezoid(sq, dx=grid.dx, axis=0)
        norms[order] = math.sqrt(float(sq))
    return norms


def aggregate_B(u: TimeSeriesField, geometry: ObservationGeometry, params: ModelParams) -> float:
    """Sum of five windowed norms of the flux trace at the observed endpoint."""
    grid = u.grid
    window = _window_guard(grid, params)
    trace = fd_derivative(u.values, grid.dx, 1, axis=0)[geometry.gamma_index(grid)]
    return float(sum(_windowed_derivative_norms(trace, grid, window, weight_dx=False).values()))


def aggregate_I(u: TimeSeriesField, geometry: ObservationGeometry, params: ModelParams) -> float:
    """Sum of five windowed space-time norms over the observation band."""
    grid = u.grid
    window = _window_guard(grid, params)
    block = u.values[geometry.omega_indices(grid)]
    return float(sum(_windowed_derivative_norms(block, grid, window, weight_dx=True).values()))


# ---------------------------------------------------------------------------
# Ensemble machinery.


@dataclass(frozen=True, eq=False)
class _EnsembleContext:
    """Everything a member needs; built once, shared across workers."""

    spec: EnsembleSpec
    grid: Grid
    params: ModelParams
    coeffs: EllipticCoefficients
    geometry: ObservationGeometry
    basis_samples: np.ndarray
    drive: np.ndarray
    snapshot_order: int
    unknown_order: int
    it0: int


def _member_coefficients(spec: EnsembleSpec) -> list[np.ndarray]:
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    ks = np.arange(1, spec.n_basis + 1, dtype=float)
    return [
        spec.amplitude * np.random.default_rng(child).uniform(-1.0, 1.0, spec.n_basis) / ks**spec.decay
        for child in children
    ]


def _member_record(ctx: _EnsembleContext, member: int, c: np.ndarray) -> StabilityRecord:
    unknown = ctx.basis_samples.T @ c
    if ctx.spec.unknown == "diffusion":
        src = fd_derivative(unknown[:, None] * ctx.drive, ctx.grid.dx, 1, axis=0)
    else:
        src = unknown[:, None] * ctx.drive
    try:
        w = solve_forward(ForwardProblem.make(ctx.grid, ctx.params, ctx.coeffs, src))
    except Exception as exc:
        raise SolverError(f"ensemble member {member}: forward solve failed: {exc}") from exc
    unknown_norm = discrete_sobolev_norm(unknown, ctx.unknown_order, ctx.grid.dx)
    snapshot_norm = discrete_sobolev_norm(w.values[:, ctx.it0], ctx.snapshot_order, ctx.grid.dx)
    if ctx.spec.kind == "boundary":
        agg = aggregate_B(w, ctx.geometry, ctx.params)
    else:
        agg = aggregate_I(w, ctx.geometry, ctx.params)
    entries = (unknown_norm, snapshot_norm, agg)
    if not all(np.isfinite(v) and v >= 0 for v in entries):
        raise SolverError(f"ensemble member {member}: non-finite record entries {entries}")
    denominator = snapshot_norm + agg
    degenerate = unknown_norm == 0.0 or denominator < DEGENERATE_FLOOR
    ratio = float("nan") if degenerate else unknown_norm / denominator
    return StabilityRecord(
        member=member,
        unknown_norm=unknown_norm,
        snapshot_norm=snapshot_norm,
        aggregate=agg,
        ratio=ratio,
        degenerate=degenerate,
    )


_POOL_CTX: _EnsembleContext | None = None


def _pool_init(ctx: _EnsembleContext) -> None:
    global _POOL_CTX
    _POOL_CTX = ctx


def _pool_task(args: tuple[int, np.ndarray]) -> StabilityRecord:
    member, c = args
    return _member_record(_POOL_CTX, member, c)


def _build_context(
    spec: EnsembleSpec,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    R,
    background,
) -> _EnsembleContext:
    if grid.nx < MIN_NX[spec.unknown]:
        raise SizingError(
            f"{spec.unknown} ensembles need nx >= {MIN_NX[spec.unknown]} for stable "
            f"high-order snapshot norms; got nx={grid.nx}"
        )
    _window_guard(grid, params)
    it0 = int(round(params.t0 / grid.dt))
    if abs(grid.ts[it0] - params.t0) > 1e-9 * params.T:
        raise DomainError(f"snapshot time t0={params.t0} does not lie on the time grid")

    if spec.unknown == "source":
        if R is None:
            raise DomainError("source ensembles need the separable factor R")
        if callable(R) and not isinstance(R, TimeSeriesField):
            X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
            R = np.asarray(R(X, T), dtype=float) * np.ones_like(X)
        drive = R.values if isinstance(R, TimeSeriesField) else np.asarray(R, dtype=float)
        interior = np.abs(drive[1:-1, it0])
        if np.min(interior) <= 1e-12 * np.max(interior):
            raise AssumptionError("R(., t0) vanishes at an interior node; ensemble needs |R| > 0")
        basis = source_basis(grid, geometry, spec.kind, spec.n_basis)
        snapshot_order, unknown_order = 4, 2
    else:
        if background is None:
            raise DomainError(f"{spec.unknown} ensembles need a background solve")
        values = background.values if isinstance(background, TimeSeriesField) else np.asarray(background, dtype=float)
        if spec.unknown == "zeroth":
            interior = np.abs(values[1:-1, it0])
            if np.min(interior) <= 1e-12 * np.max(interior):
                raise AssumptionError(
                    "background snapshot vanishes at an interior node; the "
                    "zeroth-order linearization needs a nonzero concentration"
                )
            drive = -values
            basis = source_basis(grid, geometry, spec.kind, spec.n_basis)
            snapshot_order, unknown_order = 4, 2
        else:
            margin = transversality_margin(values, grid, params, geometry, spec.kind)
            if margin < 1e-6:
                raise AssumptionError(
                    f"transversality margin {margin:g} too small on the {spec.kind} band"
                )
            drive = fd_derivative(values, grid.dx, 1, axis=0)
            basis = diffusion_basis(grid, geometry, spec.kind, spec.n_basis)
            snapshot_order, unknown_order = 5, 3
    return _EnsembleContext(
        spec=spec,
        grid=grid,
        params=params,
        coeffs=coeffs,
        geometry=geometry,
        basis_samples=basis.samples,
        drive=drive,
        snapshot_order=snapshot_order,
        unknown_order=unknown_order,
        it0=it0,
    )


def run_stability_ensemble(
    spec: EnsembleSpec,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    R=None,
    background=None,
    workers: int | None = None,
) -> tuple[list[StabilityRecord], dict]:
    """Sample the stability ratio over a seeded random ensemble.

    Returns the records sorted by member id plus a summary with the ratio
    statistics, the degenerate count, and a scaling check: the first live
    member rerun with doubled amplitudes, whose ratio must not move.
    """
    ctx = _build_context(spec, params, coeffs, grid, geometry, R, background)
    coefficient_draws = _member_coefficients(spec)
    tasks = list(enumerate(coefficient_draws))
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(ctx,)
        ) as pool:
            records = list(pool.map(_pool_task, tasks, chunksize=max(1, len(tasks) // workers)))
    else:
        records = [_member_record(ctx, member, c) for member, c in tasks]
    records.sort(key=lambda r: r.member)

    live = [r.ratio for r in records if not r.degenerate]
    scaling_change = float("nan")
    for record, (member, c) in zip(records, tasks):
        if not record.degenerate:
            rerun = _member_record(ctx, member, 2.0 * c)
            scaling_change = abs(rerun.ratio - record.ratio) / record.ratio
            break
    summary = {
        "count": spec.count,
        "kind": spec.kind,
        "unknown": spec.unknown,
        "seed": spec.seed,
        "n_basis": spec.n_basis,
        "decay": spec.decay,
        "amplitude": spec.amplitude,
        "nx": grid.nx,
        "nt": grid.nt,
        "degenerate_count": sum(r.degenerate for r in records),
        "max_ratio": max(live) if live else float("nan"),
        "median_ratio": float(np.median(live)) if live else float("nan"),
        "min_ratio": min(live) if live else float("nan"),
        "ratio_spread": (max(live) / min(live)) if live else float("nan"),
        "scaling_rel_change": scaling_change,
    }
    return records, summary
