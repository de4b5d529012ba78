"""Domain geometry, grids, coefficient fields, and global model parameters.

Everything here is an immutable value object shared by the solver, the
transform checks, the weighted-inequality scans, and the inversion code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import ConstructionError, DataError, SizingError

MIN_NX = 16
MIN_NT = 16


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [0,1] x [0,T].

    nx counts interior spatial nodes, so the closed interval carries nx+2
    nodes with spacing dx = 1/(nx+1).  nt counts time steps, giving nt+1
    time levels with spacing dt = T/nt.
    """

    nx: int
    nt: int
    T: float

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx + 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 2)

    @property
    def ts(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


def build_grid(nx: int, nt: int, T: float) -> Grid:
    """Validated Grid constructor; rejects undersized counts and T <= 0."""
    if nx < MIN_NX:
        raise SizingError(f"nx={nx} below minimum {MIN_NX}")
    if nt < MIN_NT:
        raise SizingError(f"nt={nt} below minimum {MIN_NT}")
    if not T > 0:
        raise SizingError(f"T={T} must be positive")
    return Grid(nx=int(nx), nt=int(nt), T=float(T))


@dataclass(frozen=True)
class ModelParams:
    """Model constants: time-derivative weights and the observation window.

    rho1 weighs the first-order time derivative, rho2 the half-order one.
    (t0 - delta, t0 + delta) is the observation window; it must sit
    strictly inside (0, T).
    """

    rho1: float
    rho2: float
    T: float
    t0: float
    delta: float

    def __post_init__(self):
        if not self.rho1 > 0:
            raise ConstructionError(f"rho1={self.rho1} must be positive")
        if self.rho2 == 0:
            raise ConstructionError("rho2 must be nonzero")
        if not self.T > 0:
            raise ConstructionError(f"T={self.T} must be positive")
        if not self.delta > 0:
            raise ConstructionError(f"delta={self.delta} must be positive")
        if not (0 < self.t0 - self.delta < self.t0 + self.delta < self.T):
            raise ConstructionError(
                f"window (t0-delta, t0+delta)=({self.t0 - self.delta}, "
                f"{self.t0 + self.delta}) must lie strictly inside (0, {self.T})"
            )


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Node samples of the operator coefficients a (diffusion), b (drift),
    c (potential) on the closed spatial grid."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a, b, c = map(np.asarray, (self.a, self.b, self.c))
        if not (a.shape == b.shape == c.shape) or a.ndim != 1:
            raise DataError(
                f"coefficient shapes must match and be 1-D, got "
                f"{a.shape}, {b.shape}, {c.shape}"
            )

    @classmethod
    def from_callables(
        cls,
        grid: Grid,
        a: Callable[[np.ndarray], np.ndarray] | float,
        b: Callable[[np.ndarray], np.ndarray] | float = 0.0,
        c: Callable[[np.ndarray], np.ndarray] | float = 0.0,
    ) -> "EllipticCoefficients":
        xs = grid.xs

        def sample(f) -> np.ndarray:
            if callable(f):
                return np.asarray(f(xs), dtype=float) * np.ones_like(xs)
            return np.full_like(xs, float(f))

        return cls(a=sample(a), b=sample(b), c=sample(c))


@dataclass(frozen=True)
class CoefficientCheck:
    passed: bool
    worst_index: int
    worst_value: float
    message: str


def validate_coefficients(coeffs: EllipticCoefficients, mu: float) -> CoefficientCheck:
    """Check the ellipticity bracket 1/mu <= a(x) <= mu at every node.

    Returns a diagnostic describing the worst violation; raises DataError
    on non-finite coefficient samples.
    """
    if not mu > 0:
        raise ConstructionError(f"mu={mu} must be positive")
    for name, arr in (("a", coeffs.a), ("b", coeffs.b), ("c", coeffs.c)):
        if not np.all(np.isfinite(arr)):
            bad = int(np.argmax(~np.isfinite(arr)))
            raise DataError(f"coefficient {name} non-finite at node {bad}")
    lo, hi = 1.0 / mu, mu
    below = lo - coeffs.a  # positive where a dips under 1/mu
    above = coeffs.a - hi
    worst = np.maximum(below, above)
    idx = int(np.argmax(worst))
    if worst[idx] <= 0:
        return CoefficientCheck(True, idx, float(coeffs.a[idx]), "ellipticity bounds hold")
    return CoefficientCheck(
        False,
        idx,
        float(coeffs.a[idx]),
        f"a violates [{lo:g}, {hi:g}] at node {idx} (a={coeffs.a[idx]:g})",
    )


def _check_interval(name: str, iv: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(iv[0]), float(iv[1])
    if not lo < hi:
        raise ConstructionError(f"{name}=({lo}, {hi}) must satisfy lo < hi")
    return lo, hi


@dataclass(frozen=True)
class ObservationGeometry:
    """Observation layout: boundary point gamma plus the nested interior
    intervals omega0 inside omega inside D_prime inside (0,1)."""

    gamma_side: Literal["left", "right"] = "right"
    omega: tuple[float, float] = (0.4, 0.6)
    omega0: tuple[float, float] = (0.45, 0.55)
    d_prime: tuple[float, float] = (0.1, 0.9)

    def __post_init__(self):
        if self.gamma_side not in ("left", "right"):
            raise ConstructionError(f"gamma_side={self.gamma_side!r} must be 'left' or 'right'")
        om = _check_interval("omega", self.omega)
        om0 = _check_interval("omega0", self.omega0)
        dp = _check_interval("d_prime", self.d_prime)
        if not (om[0] < om0[0] and om0[1] < om[1]):
            raise ConstructionError(
                f"inclusion omega0 inside omega violated: {om0} not strictly inside {om}"
            )
        if not (dp[0] < om[0] and om[1] < dp[1]):
            raise ConstructionError(
                f"inclusion omega inside d_prime violated: {om} not strictly inside {dp}"
            )
        if not (0.0 < dp[0] and dp[1] < 1.0):
            raise ConstructionError(
                f"inclusion d_prime inside (0,1) violated: {dp} not strictly inside (0, 1)"
            )

    @property
    def gamma_x(self) -> float:
        return 1.0 if self.gamma_side == "right" else 0.0

    def gamma_index(self, grid: Grid) -> int:
        return grid.nx + 1 if self.gamma_side == "right" else 0

    def omega_indices(self, grid: Grid) -> np.ndarray:
        xs = grid.xs
        lo, hi = self.omega
        return np.nonzero((xs >= lo - 1e-12) & (xs <= hi + 1e-12))[0]


@dataclass(frozen=True, eq=False)
class TimeSeriesField:
    """Space-time samples u(x_i, t_n), shape (nx+2, nt+1), row = node.

    bc_kind 'homogeneous-dirichlet' asserts zero boundary rows and a zero
    first time level; 'general' fields (analytic probes) skip that check.
    """

    values: np.ndarray
    grid: Grid
    bc_kind: Literal["homogeneous-dirichlet", "general"] = "general"

    def __post_init__(self):
        v = np.asarray(self.values)
        expected = (self.grid.nx + 2, self.grid.nt + 1)
        if v.shape != expected:
            raise DataError(f"field shape {v.shape} does not match grid {expected}")
        if self.bc_kind == "homogeneous-dirichlet":
            edge = max(np.max(np.abs(v[0, :])), np.max(np.abs(v[-1, :])))
            if edge > 1e-12:
                raise DataError(f"boundary rows not zero (max {edge:g}) for homogeneous BC")
            ic = np.max(np.abs(v[:, 0]))
            if ic > 1e-12:
                raise DataError(f"first time level not zero (max {ic:g}) for zero IC")

    @classmethod
    def from_function(
        cls,
        grid: Grid,
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
        bc_kind: Literal["homogeneous-dirichlet", "general"] = "general",
    ) -> "TimeSeriesField":
        X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
        return cls(values=np.asarray(fn(X, T), dtype=float), grid=grid, bc_kind=bc_kind)


def window_indices(ts: np.ndarray, t0: float, delta: float) -> np.ndarray:
    """Time-level indices n with t0-delta <= t_n <= t0+delta (inclusive)."""
    return np.nonzero((ts >= t0 - delta - 1e-12) & (ts <= t0 + delta + 1e-12))[0]
