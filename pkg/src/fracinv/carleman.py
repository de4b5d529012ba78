"""Weight functions for the weighted-energy inequalities and empirical
ratio scans over their left- and right-hand sides.

Two distance profiles drive the weights: a boundary profile (positive,
unit slope, tilted toward the observed endpoint) and an interior profile
(vanishing at both endpoints, critical point inside the interior
observation core).  From a distance d the weights are

    phi = e^{lambda d} / ell(t),    psi = (e^{lambda d} - e^{2 lambda ||d||}) / ell(t),

with ell(t) = t(T-t) on the full interval or (t-t0+delta)(t0+delta-t) on
the observation window.  The stationary lemmas (elliptic, first-order,
third-order) drop the 1/ell factor.

Scans evaluate both sides of each inequality on a fixed s grid.  Raw
e^{2 s psi} underflows to zero for every s of interest (psi ranges from
about -1e1 down to -1e7), so each scan works in the max-psi gauge: both
sides carry the common factor e^{-2 s psi*} with psi* the grid maximum
of psi, which cancels in the ratios.  The public weighted_integral keeps
the raw convention and accepts an explicit shift.

Default test data is evaluated with closed-form derivative stacks.  The
gauge concentrates all mass near the psi maximum, where the default
profiles vanish to high order; one-sided difference truncation there,
multiplied by large s-powers of phi, would otherwise swamp the true
(vanishing) integrand.  User-supplied test data falls back to finite
differences and is reliable at moderate lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AssumptionError, ConstructionError, DataError, DomainError
from .fracops import apply_L, caputo, fd_derivative
from .model import (
    EllipticCoefficients,
    Grid,
    ModelParams,
    ObservationGeometry,
    TimeSeriesField,
    window_indices,
)

LEMMA_IDS = (
    "parabolic-b",
    "parabolic-i",
    "elliptic-b",
    "elliptic-i",
    "first-order-b",
    "first-order-i",
    "third-order-b",
    "third-order-i",
    "main-b",
    "main-i",
)

LOG_FLUSH = -700.0  # below this, e^x is treated as exact zero


@dataclass(frozen=True, eq=False)
class DistanceFunction:
    """Distance profile with its slope, declared slope bound, and geometry.

    kind 'boundary' observes one endpoint, 'interior' an inner region;
    'probe' marks hand-built profiles that skip the invariant checks.
    """

    kind: str
    samples: np.ndarray
    slope: np.ndarray
    sigma: float
    geometry: ObservationGeometry
    grid: Grid

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def at(self, x) -> np.ndarray:
        return np.interp(x, self.grid.xs, self.samples)


def build_d1(geometry: ObservationGeometry, grid: Grid) -> DistanceFunction:
    """Boundary distance: x+1 when observing the right endpoint, 2-x left.

    Positive on the closed interval, |slope| = 1 > sigma, and the
    diffusion flux a * d' * (outward normal) is nonpositive at the
    unobserved endpoint for any positive a.
    """
    xs = grid.xs
    if geometry.gamma_side == "right":
        samples, slope = xs + 1.0, np.ones_like(xs)
    else:
        samples, slope = 2.0 - xs, -np.ones_like(xs)
    d = DistanceFunction(
        kind="boundary", samples=samples, slope=slope, sigma=0.5,
        geometry=geometry, grid=grid,
    )
    check_distance_invariants(d)
    return d


def build_d2(geometry: ObservationGeometry, grid: Grid) -> DistanceFunction:
    """Interior distance x(1-x): zero at endpoints, critical point at 1/2.

    The critical point must lie inside the inner observation core so the
    slope stays bounded away from zero outside it.
    """
    lo, hi = geometry.omega0
    if not lo < 0.5 < hi:
        raise ConstructionError(
            f"interior distance needs its critical point 0.5 inside omega0=({lo}, {hi})"
        )
    xs = grid.xs
    d = DistanceFunction(
        kind="interior", samples=xs * (1.0 - xs), slope=1.0 - 2.0 * xs,
        sigma=0.1, geometry=geometry, grid=grid,
    )
    check_distance_invariants(d)
    return d


def check_distance_invariants(d: DistanceFunction, coeffs: EllipticCoefficients | None = None) -> None:
    """Raise ConstructionError if the declared distance bounds fail at any node.

    Boundary kind: positive on the closed interval, |slope| > sigma
    everywhere, nonpositive flux at the unobserved endpoint.  Interior
    kind: zero at endpoints, positive inside, |slope| >= sigma outside
    the open inner core.  'probe' profiles are exempt.
    """
    if d.kind == "probe":
        return
    xs = d.grid.xs
    if d.kind == "boundary":
        if np.min(d.samples) <= 0:
            raise ConstructionError("boundary distance must be positive on the closed interval")
        if np.min(np.abs(d.slope)) <= d.sigma:
            raise ConstructionError(f"boundary distance slope bound {d.sigma} violated")
        a = coeffs.a if coeffs is not None else np.ones_like(xs)
        if d.geometry.gamma_side == "right":
            flux = a[0] * d.slope[0] * (-1.0)
        else:
            flux = a[-1] * d.slope[-1] * (+1.0)
        if flux > 0:
            raise ConstructionError(
                f"flux a*d'*normal = {flux:g} > 0 at the unobserved endpoint"
            )
    elif d.kind == "interior":
        if abs(d.samples[0]) > 1e-14 or abs(d.samples[-1]) > 1e-14:
            raise ConstructionError("interior distance must vanish at both endpoints")
        if np.min(d.samples[1:-1]) <= 0:
            raise ConstructionError("interior distance must be positive inside")
        lo, hi = d.geometry.omega0
        outside = (xs <= lo + 1e-12) | (xs >= hi - 1e-12)
        if np.min(np.abs(d.slope[outside])) < d.sigma - 1e-12:
            raise ConstructionError(
                f"interior distance slope bound {d.sigma} violated outside omega0"
            )
    else:
        raise ConstructionError(f"unknown distance kind {d.kind!r}")


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    """Weight pair (phi, psi) for one distance, lambda, s, and time window."""

    d: DistanceFunction
    lam: float
    s: float
    window: str  # "full" | "delta"
    t_lo: float
    t_hi: float

    @property
    def degenerate(self) -> bool:
        """lambda <= 0 collapses psi to 0 and breaks every estimate."""
        return not self.lam > 0

    def ell(self, t):
        t = np.asarray(t, dtype=float)
        return (t - self.t_lo) * (self.t_hi - t)


def make_weights(
    d: DistanceFunction,
    lam: float,
    s: float,
    params: ModelParams,
    window: str = "full",
) -> CarlemanWeights:
    if not s > 0:
        raise DomainError(f"s={s} must be positive")
    if window == "full":
        t_lo, t_hi = 0.0, params.T
    elif window == "delta":
        t_lo, t_hi = params.t0 - params.delta, params.t0 + params.delta
    else:
        raise DomainError(f"window {window!r} not one of ('full', 'delta')")
    return CarlemanWeights(d=d, lam=lam, s=s, window=window, t_lo=t_lo, t_hi=t_hi)


def eval_weights(w: CarlemanWeights, x, t) -> tuple[np.ndarray, np.ndarray]:
    """(phi, psi) at points x and times t strictly inside the window."""
    ell = w.ell(t)
    if np.any(ell <= 0):
        raise DomainError(
            f"time {t} at or outside the window ({w.t_lo:g}, {w.t_hi:g})"
        )
    e = np.exp(w.lam * w.d.at(x))
    peak = math.exp(2.0 * w.lam * w.d.sup)
    return e / ell, (e - peak) / ell


def _gain(log_w: np.ndarray) -> np.ndarray:
    return np.where(log_w > LOG_FLUSH, np.exp(np.maximum(log_w, LOG_FLUSH)), 0.0)


def _log_gain(w: CarlemanWeights, ts: np.ndarray, power: float, psi_shift: float) -> np.ndarray:
    """log of (s phi)^power e^{2s(psi-shift)} over (x, ts); -inf where ell<=0."""
    xs = w.d.grid.xs
    ell = w.ell(ts)
    inside = ell > 0
    out = np.full((xs.size, ts.size), -np.inf)
    e = np.exp(w.lam * w.d.samples)[:, None]
    peak = math.exp(2.0 * w.lam * w.d.sup)
    with np.errstate(divide="ignore"):
        log_phi = np.log(w.s) + w.lam * w.d.samples[:, None] - np.log(ell[None, inside])
    out[:, inside] = power * log_phi + 2.0 * w.s * ((e - peak) / ell[None, inside] - psi_shift)
    return out


def weighted_integral(
    field: np.ndarray,
    w: CarlemanWeights,
    ts: np.ndarray,
    power: float = 0.0,
    psi_shift: float = 0.0,
) -> float:
    """Trapezoidal integral of (s phi)^power |field|^2 e^{2s(psi - psi_shift)}.

    field is sampled on (all space nodes) x (the given window times);
    window-endpoint columns, where ell = 0, contribute exactly zero.
    Exponentials are evaluated in log space and flushed to zero below
    exp(-700).
    """
    field = np.asarray(field, dtype=float)
    ts = np.asarray(ts, dtype=float)
    xs = w.d.grid.xs
    if field.shape != (xs.size, ts.size):
        raise DataError(f"field shape {field.shape} does not match ({xs.size}, {ts.size})")
    gain = _gain(_log_gain(w, ts, power, psi_shift))
    integrand = gain * field * field
    return float(np.trapezoid(np.trapezoid(integrand, ts, axis=1), xs, axis=0))


@dataclass(frozen=True, eq=False)
class RatioScanResult:
    """LHS/RHS integrals of one inequality over an s grid, in the max-psi gauge."""

    lemma_id: str
    lam: float
    s_values: tuple[float, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    ratios: tuple[float, ...]
    undefined: tuple[bool, ...]
    test_function: str
    psi_shift: float
    red_flag: bool


def _red_flag(ratios: np.ndarray, undefined: np.ndarray) -> bool:
    """Monotone growth by more than 10x across the scan marks a red flag."""
    live = ratios[~undefined]
    if live.size < 2:
        return False
    return bool(np.all(np.diff(live) > 0) and live[-1] > 10.0 * live[0])


# ---------------------------------------------------------------------------
# Closed-form test profiles with analytic derivative stacks.


def _bump_stack(xs: np.ndarray, lo: float, hi: float, k: int) -> list[np.ndarray]:
    """((x-lo)(hi-x))^k on its support, peak-normalized, with derivatives 1..4.

    q = (x-lo)(hi-x) has q' = lo+hi-2x, q'' = -2; every coefficient that
    would multiply a negative power of q is zero for the k used here.
    """
    q = np.where((xs > lo) & (xs < hi), (xs - lo) * (hi - xs), 0.0)
    q1 = lo + hi - 2.0 * xs
    inside = q > 0

    def qp(e: int) -> np.ndarray:
        return np.where(inside, q ** max(e, 0), 0.0)

    b = qp(k)
    b1 = k * qp(k - 1) * q1
    b2 = k * (k - 1) * qp(k - 2) * q1**2 - 2 * k * qp(k - 1)
    b3 = k * (k - 1) * (k - 2) * qp(k - 3) * q1**3 - 6 * k * (k - 1) * qp(k - 2) * q1
    b4 = (
        k * (k - 1) * (k - 2) * (k - 3) * qp(k - 4) * q1**4
        - 12 * k * (k - 1) * (k - 2) * qp(k - 3) * q1**2
        + 12 * k * (k - 1) * qp(k - 2)
    )
    peak = ((hi - lo) / 2.0) ** (2 * k)
    return [arr / peak for arr in (b, b1, b2, b3, b4)]


def _two_bump_stack(xs: np.ndarray, geometry: ObservationGeometry, k: int) -> list[np.ndarray]:
    """Profile supported left and right of omega, identically zero on it.

    Supports sit in the middle of each flanking gap, away from both the
    domain endpoints and omega.  Keeping them short keeps the interior
    distance slope large on the support, which makes the scan ratios
    settle within the default s range.
    """
    lo, hi = geometry.omega
    left = _bump_stack(xs, 0.25 * lo, 0.625 * lo, k)
    right = _bump_stack(xs, hi + 0.375 * (1.0 - hi), hi + 0.75 * (1.0 - hi), k)
    return [a + b for a, b in zip(left, right)]


def _sin_x_stack(xs: np.ndarray) -> list[np.ndarray]:
    """sin(pi x) x with derivatives 1..4."""
    s, c, pi = np.sin(np.pi * xs), np.cos(np.pi * xs), np.pi
    return [
        s * xs,
        pi * c * xs + s,
        -(pi**2) * s * xs + 2 * pi * c,
        -(pi**3) * c * xs - 3 * pi**2 * s,
        pi**4 * s * xs - 4 * pi**3 * c,
    ]


def _sin_tilt_stack(xs: np.ndarray) -> list[np.ndarray]:
    """sin(pi x)(1 + x/2) with derivatives 1..4; nonzero flux at both endpoints."""
    s, c, pi = np.sin(np.pi * xs), np.cos(np.pi * xs), np.pi
    g = 1.0 + xs / 2.0
    return [
        s * g,
        pi * c * g + s / 2.0,
        -(pi**2) * s * g + pi * c,
        -(pi**3) * c * g - 1.5 * pi**2 * s,
        pi**4 * s * g - 2.0 * pi**3 * c,
    ]


def _fd_stack(v: np.ndarray, dx: float, orders: int) -> list[np.ndarray]:
    return [v] + [fd_derivative(v, dx, m, axis=0) for m in range(1, orders + 1)]


_SPATIAL_DESCRIPTORS = {
    "elliptic-b": "sin(pi x) x",
    "elliptic-i": "sin(pi x) x",
    "first-order-b": "x^2 (1-x)^2",
    "first-order-i": "two quadratic bumps flanking omega",
    "third-order-b": "(x(1-x))^4",
    "third-order-i": "two quartic bumps flanking omega",
}


def _spatial_default(lemma_id: str, grid: Grid, geometry: ObservationGeometry) -> list[np.ndarray]:
    xs = grid.xs
    if lemma_id.startswith("elliptic"):
        return _sin_x_stack(xs)
    if lemma_id == "first-order-b":
        return _bump_stack(xs, 0.0, 1.0, 2)
    if lemma_id == "first-order-i":
        return _two_bump_stack(xs, geometry, 2)
    if lemma_id == "third-order-b":
        return _bump_stack(xs, 0.0, 1.0, 4)
    return _two_bump_stack(xs, geometry, 4)


def default_test_function(
    lemma_id: str,
    grid: Grid,
    params: ModelParams,
    geometry: ObservationGeometry,
) -> tuple[np.ndarray, str]:
    """Admissible test data for a lemma: (samples, descriptor).

    Spatial lemmas get a 1-D profile; time-dependent ones a space-time
    array.  Each profile satisfies the lemma's vanishing conditions in
    closed form.
    """
    xs, ts, T = grid.xs, grid.ts, params.T
    if lemma_id in ("parabolic-b", "parabolic-i"):
        return np.outer(np.sin(np.pi * xs) * xs, ts * (T - ts)), "t(T-t) sin(pi x) x"
    if lemma_id == "main-b":
        prof = _sin_tilt_stack(xs)[0]
        return np.outer(prof, (ts * (T - ts)) ** 2), "(t(T-t))^2 sin(pi x) (1+x/2)"
    if lemma_id == "main-i":
        return np.outer(np.sin(np.pi * xs) * xs, ts * (T - ts)), "t(T-t) sin(pi x) x"
    if lemma_id in _SPATIAL_DESCRIPTORS:
        return _spatial_default(lemma_id, grid, geometry)[0], _SPATIAL_DESCRIPTORS[lemma_id]
    raise DomainError(f"unknown lemma id {lemma_id!r}; known: {LEMMA_IDS}")


# ---------------------------------------------------------------------------
# Precondition checks.


def _require(cond: bool, name: str) -> None:
    if not cond:
        raise AssumptionError(f"test function violates: {name}")


def _check_endpoint_orders(stack: list[np.ndarray], orders: int, label: str) -> None:
    """Endpoint vanishing of the profile and its first `orders` derivatives.

    Gates widen with the derivative order: finite-difference stacks carry
    one-sided truncation error at the endpoints that grows with order.
    Genuine violations are O(1) relative to the derivative's sup, so the
    coarse gates still separate them from truncation at 63+ nodes.
    """
    gates = (1e-8, 0.02, 0.1, 0.3)
    for k in range(orders + 1):
        cur = stack[k]
        scale = max(float(np.max(np.abs(cur))), 1e-300)
        gate = gates[min(k, 3)] * scale
        _require(abs(float(cur[0])) <= gate, f"{label}: derivative order {k} nonzero at left endpoint")
        _require(abs(float(cur[-1])) <= gate, f"{label}: derivative order {k} nonzero at right endpoint")


def _check_transport(d: DistanceFunction, label: str) -> None:
    """|p . d'| = |d'|^2 must stay above sigma^2 on the lemma's region.

    Boundary variants need the bound on the whole closed interval;
    interior variants outside the observation region.
    """
    xs = d.grid.xs
    if d.kind == "interior":
        lo, hi = d.geometry.omega
        region = (xs <= lo + 1e-12) | (xs >= hi - 1e-12)
    else:
        region = np.ones_like(xs, dtype=bool)
    worst = float(np.min(np.abs(d.slope[region])))
    _require(
        worst >= d.sigma - 1e-12,
        f"{label}: transport slope {worst:g} below bound {d.sigma:g} on the required region",
    )


def _check_zero_on_omega(v: np.ndarray, nodes: np.ndarray, label: str) -> None:
    scale = max(float(np.max(np.abs(v))), 1e-300)
    _require(
        float(np.max(np.abs(v[nodes]))) <= 1e-12 * scale,
        f"{label}: test profile must vanish on the observation region omega",
    )


# ---------------------------------------------------------------------------
# Scan quadratures in a fixed gauge.


class _SpaceTimeScan:
    """Weighted space-time quadratures over a time window."""

    def __init__(self, w: CarlemanWeights, grid: Grid, cols: np.ndarray, psi_shift: float):
        self.w, self.cols, self.shift = w, cols, psi_shift
        self.ts = grid.ts[cols]
        self.xs = grid.xs

    def volume(self, expr: np.ndarray, power: float) -> float:
        gain = _gain(_log_gain(self.w, self.ts, power, self.shift))
        vals = gain * expr[:, self.cols] ** 2
        return float(np.trapezoid(np.trapezoid(vals, self.ts, axis=1), self.xs, axis=0))

    def volume_masked(self, expr: np.ndarray, power: float, nodes: np.ndarray) -> float:
        gain = _gain(_log_gain(self.w, self.ts, power, self.shift))
        vals = (gain * expr[:, self.cols] ** 2)[nodes, :]
        return float(np.trapezoid(np.trapezoid(vals, self.ts, axis=1), self.xs[nodes], axis=0))

    def trace(self, expr_row: np.ndarray, power: float, node: int) -> float:
        gain = _gain(_log_gain(self.w, self.ts, power, self.shift))[node, :]
        return float(np.trapezoid(gain * expr_row[self.cols] ** 2, self.ts))


class _SpatialScan:
    """Weighted spatial quadratures with the stationary weights.

    The stationary lemmas evaluate the time-dependent weights at t0, so
    phi and psi carry the constant factor 1/ell(t0).
    """

    def __init__(self, d: DistanceFunction, lam: float, s: float, ell0: float, psi_shift: float):
        self.d, self.lam, self.s, self.shift = d, lam, s, psi_shift
        self.xs = d.grid.xs
        self.log_phi = math.log(s) + lam * d.samples - math.log(ell0)
        self.psi = (np.exp(lam * d.samples) - math.exp(2.0 * lam * d.sup)) / ell0

    def integral(self, expr: np.ndarray, power: float) -> float:
        log_w = power * self.log_phi + 2.0 * self.s * (self.psi - self.shift)
        return float(np.trapezoid(_gain(log_w) * expr**2, self.xs))

    def integral_masked(self, expr: np.ndarray, power: float, nodes: np.ndarray) -> float:
        log_w = power * self.log_phi + 2.0 * self.s * (self.psi - self.shift)
        vals = (_gain(log_w) * expr**2)[nodes]
        return float(np.trapezoid(vals, self.xs[nodes]))

    def point(self, value: float, power: float, node: int) -> float:
        log_w = power * self.log_phi[node] + 2.0 * self.s * (self.psi[node] - self.shift)
        return float(_gain(np.asarray(log_w))) * value**2


def _max_window_psi(d: DistanceFunction, lam: float, w: CarlemanWeights, ts: np.ndarray) -> float:
    ell = w.ell(ts)
    inside = ell > 0
    e = np.exp(lam * d.samples)[:, None]
    peak = math.exp(2.0 * lam * d.sup)
    return float(np.max((e - peak) / ell[None, inside]))


def _max_stationary_psi(d: DistanceFunction, lam: float, ell0: float) -> float:
    return float(np.max(np.exp(lam * d.samples) - math.exp(2.0 * lam * d.sup)) / ell0)


# ---------------------------------------------------------------------------
# Integrand assembly per lemma family.


def _time_dependent_terms(
    lemma_id: str,
    v: np.ndarray | None,
    grid: Grid,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    geometry: ObservationGeometry,
    p: float,
):
    """Fields and powers for the parabolic and main inequalities.

    Returns (lhs, rhs_volume, rhs_boundary_rows, rhs_interior) where each
    entry pairs a sampled field with its (s phi)-power.
    """
    xs, ts, T = grid.xs, grid.ts, params.T
    dx, dt = grid.dx, grid.dt
    gamma_node = geometry.gamma_index(grid)
    parabolic = lemma_id.startswith("parabolic")

    if v is None:
        if parabolic:
            X = _sin_x_stack(xs)
            theta = ts * (T - ts)
            theta1 = T - 2.0 * ts
            theta2 = np.full_like(ts, -2.0)
        elif lemma_id == "main-b":
            X = _sin_tilt_stack(xs)
            f, f1 = ts * (T - ts), T - 2.0 * ts
            theta = f**2
            theta1 = 2.0 * f * f1
            theta2 = 2.0 * f1**2 - 4.0 * f
        else:
            X = _sin_x_stack(xs)
            theta = ts * (T - ts)
            theta1 = T - 2.0 * ts
            theta2 = np.full_like(ts, -2.0)
        LX = apply_L(X[0], coeffs, dx)
        v_arr = np.outer(X[0], theta)
        v_t = np.outer(X[0], theta1)
        v_x = np.outer(X[1], theta)
        v_xx = np.outer(X[2], theta)
        Lv = np.outer(LX, theta)
        if parabolic:
            fields = dict(v=v_arr, v_t=v_t, v_x=v_x, v_xx=v_xx, heat=params.rho1 * v_t - Lv)
        else:
            cap = caputo(theta, 0.5, dt, axis=0)
            fields = dict(
                v=v_arr, v_t=v_t, v_x=v_x, v_xx=v_xx,
                v_tt=np.outer(X[0], theta2),
                v_tx=np.outer(X[1], theta1),
                fx=np.outer(params.rho1 * X[1], theta1)
                - np.outer(fd_derivative(LX, dx, 1, axis=0), theta),
                squared=params.rho1**2 * np.outer(X[0], theta2)
                - 2.0 * params.rho1 * np.outer(LX, theta1)
                + np.outer(apply_L(LX, coeffs, dx), theta),
                half=np.outer(X[0], cap),
                half_x=np.outer(X[1], cap),
            )
            fields["v_txx"] = np.outer(X[2], theta1)
    else:
        if v.shape != (grid.nx + 2, grid.nt + 1):
            raise DataError(f"test field shape {v.shape} does not match grid")
        v_t = fd_derivative(v, dt, 1, axis=1)
        v_x = fd_derivative(v, dx, 1, axis=0)
        v_xx = fd_derivative(v, dx, 2, axis=0)
        Lv = apply_L(v, coeffs, dx)
        if parabolic:
            fields = dict(v=v, v_t=v_t, v_x=v_x, v_xx=v_xx, heat=params.rho1 * v_t - Lv)
        else:
            half = caputo(v, 0.5, dt, axis=1)
            fields = dict(
                v=v, v_t=v_t, v_x=v_x, v_xx=v_xx,
                v_tt=fd_derivative(v, dt, 2, axis=1),
                v_tx=fd_derivative(v_t, dx, 1, axis=0),
                v_txx=fd_derivative(v_xx, dt, 1, axis=1),
                fx=fd_derivative(params.rho1 * v_t - Lv, dx, 1, axis=0),
                squared=params.rho1**2 * fd_derivative(v, dt, 2, axis=1)
                - 2.0 * params.rho1 * fd_derivative(Lv, dt, 1, axis=1)
                + apply_L(Lv, coeffs, dx),
                half=half,
                half_x=fd_derivative(half, dx, 1, axis=0),
            )

    scale = max(float(np.max(np.abs(fields["v"]))), 1e-300)
    _require(float(np.max(np.abs(fields["v"][0, :]))) <= 1e-8 * scale,
             f"{lemma_id}: zero value at left endpoint")
    _require(float(np.max(np.abs(fields["v"][-1, :]))) <= 1e-8 * scale,
             f"{lemma_id}: zero value at right endpoint")

    if parabolic:
        lhs = [(fields["v_t"], p - 1), (fields["v_xx"], p - 1),
               (fields["v_x"], p + 1), (fields["v"], p + 3)]
        rhs_volume = [(fields["heat"], p)]
        rhs_boundary = [(fields["v_x"][gamma_node, :], p + 1)]
        rhs_interior = [(fields["v"], p + 3)]
    else:
        main_op = params.rho2**2 * fields["v_t"] - fields["squared"]
        lhs = [
            (fields["v_tt"], p - 1), (fields["v_txx"], p - 1), (fields["v_tx"], p + 1),
            (fields["fx"], p + 2), (fields["v_t"], p + 3), (fields["v_xx"], p + 3),
            (fields["v_x"], p + 5), (fields["v"], p + 7),
        ]
        rhs_volume = [(main_op, p + 1)]
        rhs_boundary = [
            (fields["v_tx"][gamma_node, :], p + 1),
            (fields["half_x"][gamma_node, :], p + 2),
            (fields["v_x"][gamma_node, :], p + 5),
        ]
        rhs_interior = [(fields["v_t"], p + 3), (fields["half"], p + 4), (fields["v"], p + 7)]
    return lhs, rhs_volume, rhs_boundary, rhs_interior


def _spatial_terms(
    lemma_id: str,
    v: np.ndarray | None,
    grid: Grid,
    coeffs: EllipticCoefficients,
    geometry: ObservationGeometry,
    d: DistanceFunction,
    p: float,
):
    """Fields and powers for the elliptic, first-order, and third-order lemmas.

    Returns (lhs, rhs_volume, rhs_gamma_point, rhs_interior).
    """
    dx = grid.dx
    gamma_node = geometry.gamma_index(grid)
    interior_kind = lemma_id.endswith("-i")
    if v is None:
        stack = _spatial_default(lemma_id, grid, geometry)
    else:
        if v.shape != (grid.nx + 2,):
            raise DataError(f"test profile shape {v.shape} does not match grid nodes")
        stack = _fd_stack(v, dx, 4)

    if lemma_id.startswith("elliptic"):
        _check_endpoint_orders(stack, 0, lemma_id)
        Lv = apply_L(stack[0], coeffs, dx)
        lhs = [(stack[2], p - 1), (stack[1], p + 1), (stack[0], p + 3)]
        rhs_volume = [(Lv, p)]
        rhs_point = (float(stack[1][gamma_node]), p + 1)
        rhs_interior = [(stack[0], p + 3)]
        return lhs, rhs_volume, rhs_point, rhs_interior
    if interior_kind:
        _check_zero_on_omega(stack[0], geometry.omega_indices(grid), lemma_id)
    if lemma_id.startswith("first-order"):
        _check_endpoint_orders(stack, 1, lemma_id)
        _check_transport(d, lemma_id)
        pv1 = d.slope * stack[1]
        lhs = [(stack[1], p + 2), (stack[0], p + 2)]
        rhs_volume = [(fd_derivative(pv1, dx, 1, axis=0), p), (pv1, p)]
        return lhs, rhs_volume, None, []
    _check_endpoint_orders(stack, 3, lemma_id)
    _check_transport(d, lemma_id)
    pv3 = d.slope * stack[3]
    lhs = [
        (stack[3], p + 1), (stack[3], p + 2), (stack[2], p + 3),
        (stack[1], p + 5), (stack[0], p + 5),
    ]
    rhs_volume = [(fd_derivative(pv3, dx, 1, axis=0), p), (pv3, p)]
    return lhs, rhs_volume, None, []


def carleman_scan(
    lemma_id: str,
    grid: Grid,
    params: ModelParams,
    coeffs: EllipticCoefficients,
    geometry: ObservationGeometry | None = None,
    v: np.ndarray | TimeSeriesField | None = None,
    lam: float = 2.0,
    s_values: Sequence[float] | None = None,
    power: float = 0.0,
) -> RatioScanResult:
    """Evaluate both sides of one inequality over an s grid; return ratios.

    The test data defaults to the lemma's admissible closed-form profile.
    Boundary ('-b') variants weight with the boundary distance and collect
    the observed-endpoint terms on the right-hand side; interior ('-i')
    variants use the interior distance and an integral over the
    observation region.  All integrals share the max-psi gauge so the
    reported ratios are finite wherever the right side is nonzero.
    """
    if lemma_id not in LEMMA_IDS:
        raise DomainError(f"unknown lemma id {lemma_id!r}; known: {LEMMA_IDS}")
    if not lam > 0:
        raise DomainError(f"lambda={lam} must be positive")
    geometry = geometry if geometry is not None else ObservationGeometry()
    s_grid = np.geomspace(1.0, 100.0, 8) if s_values is None else np.asarray(s_values, dtype=float)
    if s_grid.size < 2:
        raise DomainError("s grid needs at least two points")
    if np.any(s_grid <= 0):
        raise DomainError("s grid must be positive")

    boundary = lemma_id.endswith("-b")
    d = build_d1(geometry, grid) if boundary else build_d2(geometry, grid)
    if isinstance(v, TimeSeriesField):
        v = v.values
    elif v is not None:
        v = np.asarray(v, dtype=float)
    descriptor = (
        default_test_function(lemma_id, grid, params, geometry)[1]
        if v is None
        else "user-supplied"
    )
    gamma_node = geometry.gamma_index(grid)
    omega_nodes = geometry.omega_indices(grid)
    p = power

    lhs_list: list[float] = []
    rhs_list: list[float] = []
    if lemma_id.startswith(("parabolic", "main")):
        lhs_terms, rhs_volume, rhs_boundary, rhs_interior = _time_dependent_terms(
            lemma_id, v, grid, params, coeffs, geometry, p
        )
        window = "full" if lemma_id.startswith("parabolic") else "delta"
        if window == "full":
            cols = np.arange(grid.nt + 1)
        else:
            cols = window_indices(grid.ts, params.t0, params.delta)
        w0 = make_weights(d, lam, 1.0, params, window=window)
        shift = _max_window_psi(d, lam, w0, grid.ts[cols])
        for s in s_grid:
            w = make_weights(d, lam, float(s), params, window=window)
            scan = _SpaceTimeScan(w, grid, cols, shift)
            lhs = sum(scan.volume(expr, pw) for expr, pw in lhs_terms)
            rhs = sum(scan.volume(expr, pw) for expr, pw in rhs_volume)
            if boundary:
                rhs += sum(scan.trace(row, pw, gamma_node) for row, pw in rhs_boundary)
            else:
                rhs += sum(scan.volume_masked(expr, pw, omega_nodes) for expr, pw in rhs_interior)
            lhs_list.append(lhs)
            rhs_list.append(rhs)
    else:
        lhs_terms, rhs_volume, rhs_point, rhs_interior = _spatial_terms(
            lemma_id, v, grid, coeffs, geometry, d, p
        )
        ell0 = params.t0 * (params.T - params.t0)
        shift = _max_stationary_psi(d, lam, ell0)
        for s in s_grid:
            scan = _SpatialScan(d, lam, float(s), ell0, shift)
            lhs = sum(scan.integral(expr, pw) for expr, pw in lhs_terms)
            rhs = sum(scan.integral(expr, pw) for expr, pw in rhs_volume)
            if lemma_id.startswith("elliptic"):
                if boundary:
                    rhs += scan.point(rhs_point[0], rhs_point[1], gamma_node)
                else:
                    rhs += sum(scan.integral_masked(expr, pw, omega_nodes) for expr, pw in rhs_interior)
            lhs_list.append(lhs)
            rhs_list.append(rhs)

    lhs_arr = np.asarray(lhs_list)
    rhs_arr = np.asarray(rhs_list)
    if np.any(~np.isfinite(lhs_arr)) or np.any(~np.isfinite(rhs_arr)):
        raise DomainError(f"scan {lemma_id} produced non-finite integrals")
    undefined = rhs_arr == 0.0
    ratios = np.where(undefined, np.nan, lhs_arr / np.where(undefined, 1.0, rhs_arr))
    return RatioScanResult(
        lemma_id=lemma_id,
        lam=lam,
        s_values=tuple(float(s) for s in s_grid),
        lhs=tuple(float(x) for x in lhs_arr),
        rhs=tuple(float(x) for x in rhs_arr),
        ratios=tuple(float(r) for r in ratios),
        undefined=tuple(bool(u) for u in undefined),
        test_function=descriptor,
        psi_shift=shift,
        red_flag=_red_flag(ratios, undefined),
    )
