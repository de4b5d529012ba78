"""Regularized recovery of source factors and coefficient differences.

Every unknown is expanded in a small spatial basis that satisfies its
support and boundary constraints by construction, so reconstructions obey
them exactly rather than approximately.  A linear observation map is
assembled column by column (one forward solve per basis function) and
inverted by Tikhonov least squares with a derivative-matched penalty:
second differences for sources, third differences for diffusion bumps.

Observation patterns mirror the two stability regimes: a boundary set
carries the full snapshot at t0 plus the flux trace at the observed
endpoint over the time window, an interior set carries the snapshot plus
the solution values on the observation band.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import BSpline

from .carleman import build_d1, build_d2
from .errors import (
    AssumptionError,
    ConstructionError,
    DataError,
    DomainError,
    SolverError,
)
from .forward import ForwardProblem, solve_forward
from .fracops import fd_derivative
from .model import (
    EllipticCoefficients,
    Grid,
    ModelParams,
    ObservationGeometry,
    TimeSeriesField,
    window_indices,
)

OBSERVATION_KINDS = ("boundary", "interior")

# Normal-equation conditioning beyond this is reported, not solved through.
COND_LIMIT = 1e14


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Snapshot plus windowed time series sampled from one solution.

    snapshot holds u(., t0) on all nodes; series holds the flux trace at
    the observed endpoint (boundary kind) or the solution values on the
    observation band (interior kind), one row per node, one column per
    window time level.
    """

    kind: str
    snapshot: np.ndarray
    series: np.ndarray
    nodes: tuple[int, ...]
    window: tuple[int, ...]
    noise_level: float = 0.0

    def __post_init__(self):
        if self.kind not in OBSERVATION_KINDS:
            raise DomainError(f"kind {self.kind!r} not one of {OBSERVATION_KINDS}")
        if self.noise_level < 0:
            raise DomainError(f"noise_level {self.noise_level} must be nonnegative")
        if self.snapshot.ndim != 1:
            raise DataError(f"snapshot must be 1-D, got shape {self.snapshot.shape}")
        expected = (len(self.nodes), len(self.window))
        if self.series.shape != expected:
            raise DataError(f"series shape {self.series.shape} does not match {expected}")

    def vector(self) -> np.ndarray:
        """Snapshot stacked with the flattened series."""
        return np.concatenate([self.snapshot, self.series.ravel()])


@dataclass(frozen=True, eq=False)
class SpatialBasis:
    """Constraint-respecting expansion functions sampled on the grid.

    samples has one basis function per row; penalty maps a coefficient
    vector to scaled finite differences of the expansion, giving the
    derivative-seminorm used by the Tikhonov term.
    """

    samples: np.ndarray
    penalty: np.ndarray
    constraint_kind: str
    label: str

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def expand(self, coefficients: np.ndarray) -> np.ndarray:
        return self.samples.T @ np.asarray(coefficients, dtype=float)


@dataclass(frozen=True, eq=False)
class LinearObservationMap:
    """Columns are observed forward solves of the basis sources."""

    matrix: np.ndarray
    basis: SpatialBasis
    kind: str
    nodes: tuple[int, ...]
    window: tuple[int, ...]

    def pattern_matches(self, obs: ObservationSet) -> bool:
        m_snapshot = self.matrix.shape[0] - len(self.nodes) * len(self.window)
        return (
            obs.kind == self.kind
            and obs.nodes == self.nodes
            and obs.window == self.window
            and obs.snapshot.size == m_snapshot
        )


@dataclass(frozen=True)
class InversionResult:
    estimate: np.ndarray
    alpha: float
    residual: float
    rel_error: float | None
    coefficients: tuple[float, ...]


def add_noise(data: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Gaussian perturbation with std = level * max|data|, fixed per seed."""
    if level < 0:
        raise DomainError(f"noise level {level} must be nonnegative")
    data = np.array(data, dtype=float)
    if level == 0:
        return data
    scale = level * float(np.max(np.abs(data)))
    rng = np.random.default_rng(seed)
    return data + scale * rng.standard_normal(data.shape)


def _snapshot_index(grid: Grid, params: ModelParams) -> int:
    it0 = int(round(params.t0 / grid.dt))
    if not 0 <= it0 <= grid.nt or abs(grid.ts[it0] - params.t0) > 1e-9 * params.T:
        raise DomainError(
            f"snapshot time t0={params.t0} does not lie on the time grid (dt={grid.dt:g})"
        )
    return it0


def _field_values(field, grid: Grid) -> np.ndarray:
    values = field.values if isinstance(field, TimeSeriesField) else np.asarray(field, dtype=float)
    expected = (grid.nx + 2, grid.nt + 1)
    if values.shape != expected:
        raise DataError(f"field shape {values.shape} does not match grid {expected}")
    return values


def observe(
    field,
    grid: Grid,
    params: ModelParams,
    geometry: ObservationGeometry,
    kind: str,
    noise_level: float = 0.0,
    seed: int = 0,
) -> ObservationSet:
    """Sample the observation pattern of the given kind from a solution.

    Noise is added to the snapshot and the series separately so each block
    carries the stated level relative to its own magnitude.
    """
    if kind not in OBSERVATION_KINDS:
        raise DomainError(f"kind {kind!r} not one of {OBSERVATION_KINDS}")
    u = _field_values(field, grid)
    it0 = _snapshot_index(grid, params)
    window = window_indices(grid.ts, params.t0, params.delta)
    snapshot = u[:, it0].copy()
    if kind == "boundary":
        nodes = (geometry.gamma_index(grid),)
        series = fd_derivative(u, grid.dx, 1, axis=0)[nodes[0], window][None, :]
    else:
        idx = geometry.omega_indices(grid)
        nodes = tuple(int(i) for i in idx)
        series = u[np.ix_(idx, window)]
    if noise_level > 0:
        snapshot = add_noise(snapshot, noise_level, seed)
        series = add_noise(series, noise_level, seed + 1)
    return ObservationSet(
        kind=kind,
        snapshot=snapshot,
        series=np.ascontiguousarray(series),
        nodes=nodes,
        window=tuple(int(n) for n in window),
        noise_level=noise_level,
    )


def difference(obs1: ObservationSet, obs2: ObservationSet) -> ObservationSet:
    """Observation-space difference obs1 - obs2 on the same pattern."""
    if obs1.kind != obs2.kind or obs1.nodes != obs2.nodes or obs1.window != obs2.window:
        raise DataError("observation sets sample different patterns and cannot be subtracted")
    return replace(obs1, snapshot=obs1.snapshot - obs2.snapshot, series=obs1.series - obs2.series)


# ---------------------------------------------------------------------------
# Bases.


def _difference_penalty(samples: np.ndarray, dx: float, order: int) -> np.ndarray:
    # rows approximate the order-th derivative of the expansion at interior
    # stencils, scaled so the squared norm approximates its L2 norm
    diffs = np.diff(samples, order, axis=1) / dx**order
    return diffs.T * np.sqrt(dx)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 + t * (6.0 * t - 15.0))


def source_basis(
    grid: Grid,
    geometry: ObservationGeometry,
    kind: str,
    n: int = 12,
) -> SpatialBasis:
    """Expansion functions for a separable source factor.

    Boundary kind uses sin(pi x) sin(k pi x): zero value and zero slope at
    both endpoints.  Interior kind uses sin(k pi x) times a C^2 cutoff that
    vanishes identically on the observation band.
    """
    if kind not in OBSERVATION_KINDS:
        raise DomainError(f"kind {kind!r} not one of {OBSERVATION_KINDS}")
    if n < 1:
        raise DomainError(f"basis size {n} must be positive")
    xs = grid.xs
    rows = []
    if kind == "boundary":
        envelope = np.sin(np.pi * xs)
        for k in range(1, n + 1):
            rows.append(envelope * np.sin(k * np.pi * xs))
        label = "sin(pi x) sin(k pi x)"
    else:
        lo, hi = geometry.omega
        pad = 0.5 * (hi - lo)
        cutoff = np.maximum(_smoothstep((lo - xs) / pad), _smoothstep((xs - hi) / pad))
        cutoff[(xs >= lo) & (xs <= hi)] = 0.0
        for k in range(1, n + 1):
            rows.append(np.sin(k * np.pi * xs) * cutoff)
        label = "sin(k pi x) cut off on omega"
    samples = np.array(rows)
    samples[:, 0] = 0.0
    samples[:, -1] = 0.0
    return SpatialBasis(
        samples=samples,
        penalty=_difference_penalty(samples, grid.dx, 2),
        constraint_kind=kind,
        label=label,
    )


def diffusion_basis(
    grid: Grid,
    geometry: ObservationGeometry,
    kind: str,
    n: int = 12,
) -> SpatialBasis:
    """Quintic spline bumps supported strictly inside the admissible band.

    Degree-5 B-spline elements are C^4 and vanish with four derivatives at
    the edge of their support.  Interior kind drops every bump whose
    support touches the observation band.
    """
    if kind not in OBSERVATION_KINDS:
        raise DomainError(f"kind {kind!r} not one of {OBSERVATION_KINDS}")
    if n < 1:
        raise DomainError(f"basis size {n} must be positive")
    lo, hi = geometry.d_prime
    knots = np.linspace(lo, hi, n + 6)
    xs = grid.xs
    rows = []
    for k in range(n):
        support = knots[k : k + 7]
        if kind == "interior":
            w_lo, w_hi = geometry.omega
            if support[0] < w_hi and support[-1] > w_lo:
                continue
        element = BSpline.basis_element(support, extrapolate=False)
        rows.append(np.nan_to_num(element(xs), nan=0.0))
    if not rows:
        raise ConstructionError(
            f"no spline bump of {n} fits inside d_prime={geometry.d_prime} "
            f"clear of omega={geometry.omega}; widen the band or refine the basis"
        )
    samples = np.array(rows)
    return SpatialBasis(
        samples=samples,
        penalty=_difference_penalty(samples, grid.dx, 3),
        constraint_kind=kind,
        label="quintic spline bumps",
    )


# ---------------------------------------------------------------------------
# Forward maps.


def _assemble_from_sources(
    sources,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    kind: str,
    basis: SpatialBasis,
) -> LinearObservationMap:
    columns = []
    nodes = window = None
    for src in sources:
        problem = ForwardProblem.make(grid, params, coeffs, src)
        obs = observe(solve_forward(problem), grid, params, geometry, kind)
        nodes, window = obs.nodes, obs.window
        columns.append(obs.vector())
    matrix = np.column_stack(columns)
    if not np.all(np.isfinite(matrix)):
        raise SolverError("forward map contains non-finite entries")
    return LinearObservationMap(matrix=matrix, basis=basis, kind=kind, nodes=nodes, window=window)


def assemble_forward_map(
    R,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    kind: str = "boundary",
    basis: SpatialBasis | None = None,
    n_basis: int = 12,
) -> LinearObservationMap:
    """Observation map of the separable source model g = f(x) R(x,t).

    Column k observes the forward solve driven by basis function k times
    R.  The factor R must be nonzero at every interior node at the
    snapshot time (within 1e-12 of its sup, so antisymmetric profiles are
    caught); endpoints are exempt because every admissible f vanishes
    there.
    """
    if callable(R) and not isinstance(R, TimeSeriesField):
        X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
        R = np.asarray(R(X, T), dtype=float) * np.ones_like(X)
    R = _field_values(R, grid)
    it0 = _snapshot_index(grid, params)
    interior = np.abs(R[1:-1, it0])
    if np.min(interior) <= 1e-12 * np.max(interior):
        node = 1 + int(np.argmin(interior))
        raise AssumptionError(
            f"R(., t0) vanishes at interior node {node} (x={grid.xs[node]:g}); "
            "the separable source model needs |R| > 0 there"
        )
    if basis is None:
        basis = source_basis(grid, geometry, kind, n_basis)
    sources = (basis.samples[k][:, None] * R for k in range(basis.size))
    return _assemble_from_sources(sources, params, coeffs, grid, geometry, kind, basis)


# ---------------------------------------------------------------------------
# Tikhonov solves.


def invert_source(
    obs: ObservationSet,
    fmap: LinearObservationMap,
    alpha: float,
    truth: np.ndarray | None = None,
) -> InversionResult:
    """Penalized least squares fit of the basis coefficients to the data.

    Minimizes |A c - d|^2 + alpha |W c|^2 through the normal equations;
    rel_error is the L2 error against truth when one is supplied.
    """
    if alpha < 0:
        raise DomainError(f"alpha {alpha} must be nonnegative")
    if not fmap.pattern_matches(obs):
        raise DataError("observation pattern does not match the assembled map")
    A, W = fmap.matrix, fmap.basis.penalty
    d = obs.vector()
    M = A.T @ A + alpha * (W.T @ W)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SolverError(
            f"normal equations ill-conditioned (condition estimate {cond:.3e}); raise alpha"
        )
    c = np.linalg.solve(M, A.T @ d)
    estimate = fmap.basis.expand(c)
    residual = float(np.linalg.norm(A @ c - d))
    rel_error = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        scale = float(np.linalg.norm(truth))
        err = float(np.linalg.norm(estimate - truth))
        rel_error = err / scale if scale > 0 else err
    return InversionResult(
        estimate=estimate,
        alpha=float(alpha),
        residual=residual,
        rel_error=rel_error,
        coefficients=tuple(float(v) for v in c),
    )


def discrepancy_alpha(
    obs: ObservationSet,
    fmap: LinearObservationMap,
    noise_std: float,
    alphas: np.ndarray | None = None,
    tau: float = 1.1,
) -> float:
    """Largest alpha whose misfit stays within tau * noise_std * sqrt(m).

    Falls back to the best-fitting alpha when no candidate reaches the
    target, which happens when the noise estimate is too optimistic.
    """
    if noise_std < 0:
        raise DomainError(f"noise_std {noise_std} must be nonnegative")
    if alphas is None:
        alphas = np.geomspace(1e-12, 1e-2, 21)
    alphas = np.sort(np.asarray(alphas, dtype=float))
    if alphas.size == 0 or alphas[0] <= 0:
        raise DomainError("alphas must be a nonempty positive grid")
    target = tau * noise_std * np.sqrt(fmap.matrix.shape[0])
    best = alphas[0]
    best_residual = np.inf
    chosen = None
    for alpha in alphas:
        residual = invert_source(obs, fmap, alpha).residual
        if residual <= target:
            chosen = alpha
        if residual < best_residual:
            best, best_residual = alpha, residual
    return float(chosen if chosen is not None else best)


# ---------------------------------------------------------------------------
# Coefficient problems, linearized about a background solve.


def transversality_margin(
    background_values: np.ndarray,
    grid: Grid,
    params: ModelParams,
    geometry: ObservationGeometry,
    kind: str,
) -> float:
    """min |dx r(., t0) * d'| over the band where the unknown may live.

    Boundary kind checks the whole admissible band, interior kind the part
    clear of the observation region (where the distance slope necessarily
    vanishes).
    """
    it0 = _snapshot_index(grid, params)
    slope0 = fd_derivative(background_values, grid.dx, 1, axis=0)[:, it0]
    d = build_d1(geometry, grid) if kind == "boundary" else build_d2(geometry, grid)
    lo, hi = geometry.d_prime
    region = (grid.xs >= lo - 1e-12) & (grid.xs <= hi + 1e-12)
    if kind == "interior":
        w_lo, w_hi = geometry.omega
        region &= (grid.xs <= w_lo + 1e-12) | (grid.xs >= w_hi - 1e-12)
    return float(np.min(np.abs(slope0[region] * d.slope[region])))


def invert_zeroth_coefficient(
    u1_data: ObservationSet,
    background: TimeSeriesField,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    alpha: float,
    n_basis: int = 12,
    truth: np.ndarray | None = None,
) -> InversionResult:
    """Zeroth-order coefficient difference from data about a background.

    The difference of the two solutions satisfies the same equation with
    separable source (c1 - c2) times (-u2), so the problem reduces to a
    source inversion against the difference data.  The background snapshot
    must be nonzero at every interior node; endpoints are exempt because
    the coefficient difference vanishes on the boundary.
    """
    u2 = _field_values(background, grid)
    it0 = _snapshot_index(grid, params)
    interior = np.abs(u2[1:-1, it0])
    if np.min(interior) <= 1e-12 * np.max(interior):
        node = 1 + int(np.argmin(interior))
        raise AssumptionError(
            f"background snapshot vanishes at interior node {node} "
            f"(x={grid.xs[node]:g}); the zeroth-order linearization needs a "
            "nonzero concentration there"
        )
    fmap = assemble_forward_map(
        -u2, params, coeffs, grid, geometry, kind=u1_data.kind, n_basis=n_basis
    )
    obs2 = observe(background, grid, params, geometry, u1_data.kind)
    return invert_source(difference(u1_data, obs2), fmap, alpha, truth=truth)


def invert_diffusion_coefficient(
    u1_data: ObservationSet,
    background: TimeSeriesField,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    grid: Grid,
    geometry: ObservationGeometry,
    alpha: float,
    n_basis: int = 12,
    m_min: float = 1e-6,
    truth: np.ndarray | None = None,
) -> InversionResult:
    """Diffusion coefficient difference, linearized about a background.

    The difference field is driven by the flux divergence (a r')' of the
    unknown against the background slope, so map columns observe forward
    solves of spline-bump flux sources.  The background slope at t0 must
    stay transversal to the distance slope on the band where the unknown
    lives: the whole admissible band for boundary data, the band clear of
    the observation region for interior data.
    """
    r = _field_values(background, grid)
    transversal = transversality_margin(r, grid, params, geometry, u1_data.kind)
    if transversal < m_min:
        raise AssumptionError(
            f"transversality min |dx r(., t0) * d'| = {transversal:g} below "
            f"{m_min:g} on the {u1_data.kind} band; the background slope is "
            "not usable there"
        )
    basis = diffusion_basis(grid, geometry, u1_data.kind, n_basis)
    r_x = fd_derivative(r, grid.dx, 1, axis=0)
    sources = (
        fd_derivative(basis.samples[k][:, None] * r_x, grid.dx, 1, axis=0)
        for k in range(basis.size)
    )
    fmap = _assemble_from_sources(sources, params, coeffs, grid, geometry, u1_data.kind, basis)
    obs2 = observe(background, grid, params, geometry, u1_data.kind)
    return invert_source(difference(u1_data, obs2), fmap, alpha, truth=truth)
