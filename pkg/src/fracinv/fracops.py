"""Fractional and classical derivative kernels plus discrete Sobolev norms.

The half-order time derivative uses the L1 scheme: piecewise-linear
reconstruction of the history integral, weights b_j = (j+1)^{1-beta} -
j^{1-beta}, accuracy O(dt^{2-beta}).  Spatial/temporal integer derivatives
use finite-difference stencils generated by Fornberg's algorithm: central
stencils inside, one-sided stencils of the same accuracy at the ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, SizingError
from .model import EllipticCoefficients


def gamma_fn(x: float) -> float:
    """Gamma function restricted to positive arguments."""
    if not x > 0:
        raise DomainError(f"gamma_fn requires x > 0, got {x}")
    return math.gamma(x)


def l1_weights(beta: float, n: int) -> np.ndarray:
    """L1 kernel weights b_j = (j+1)^{1-beta} - j^{1-beta}, j = 0..n-1."""
    j = np.arange(n + 1, dtype=float)
    pw = j ** (1.0 - beta)
    return pw[1:] - pw[:-1]


@dataclass(frozen=True, eq=False)
class CaputoScheme:
    """L1 discretization data for a fixed order and step."""

    beta: float
    dt: float
    weights: np.ndarray

    @classmethod
    def make(cls, beta: float, dt: float, nsteps: int) -> "CaputoScheme":
        if not 0.0 < beta < 1.0:
            raise DomainError(f"caputo order beta={beta} must lie in (0,1)")
        if not dt > 0:
            raise DomainError(f"dt={dt} must be positive")
        return cls(beta=beta, dt=dt, weights=l1_weights(beta, nsteps))

    @property
    def scale(self) -> float:
        return self.dt ** (-self.beta) / gamma_fn(2.0 - self.beta)


def caputo(series: np.ndarray, beta: float, dt: float, axis: int = -1) -> np.ndarray:
    """L1 approximation of the order-beta Caputo derivative along an axis.

    The value at the first sample (t=0) is defined as 0.  Input samples
    must start at t=0 so the history integral is complete.
    """
    v = np.asarray(series, dtype=float)
    n = v.shape[axis] - 1
    if n < 1:
        raise SizingError("caputo needs at least 2 time samples")
    scheme = CaputoScheme.make(beta, dt, n)
    w = v if axis in (-1, v.ndim - 1) else np.moveaxis(v, axis, -1)
    d = np.diff(w, axis=-1)  # d[..., k] = u(t_{k+1}) - u(t_k)
    out = np.zeros_like(w)
    b = scheme.weights
    for m in range(1, n + 1):
        # sum_{j=0}^{m-1} b_j * d[..., m-1-j]
        out[..., m] = d[..., :m] @ b[m - 1 :: -1]
    out *= scheme.scale
    return out if axis in (-1, v.ndim - 1) else np.moveaxis(out, -1, axis)


def caputo_half_of_derivative(
    series: np.ndarray, m: int, dt: float, axis: int = -1
) -> np.ndarray:
    """Order m+1/2 derivative: m-fold 2nd-order difference, then half-order L1.

    This is the composition used by the trace aggregates for orders 3/2
    and 5/2; it matches the two-branch Caputo definition for smooth inputs.
    """
    if m < 1:
        raise DomainError(f"m={m} must be a positive integer")
    v = np.asarray(series, dtype=float)
    if v.shape[axis] < m + 2:
        raise SizingError(f"series of length {v.shape[axis]} too short for m={m}")
    for _ in range(m):
        v = np.gradient(v, dt, axis=axis, edge_order=2)
    return caputo(v, 0.5, dt, axis=axis)


def _fornberg(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at z from nodes x."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@lru_cache(maxsize=None)
def _stencils(m: int, acc: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    """(central weights, one-sided weight rows, half-width, one-sided width).

    Central stencil has 2*floor((m+1)/2) - 1 + acc points; one-sided rows
    cover the first hw nodes from a window of m + acc points, giving the
    same formal accuracy at the ends.
    """
    hw = (2 * ((m + 1) // 2) - 1 + acc - 1) // 2
    wc = _fornberg(0.0, np.arange(-hw, hw + 1, dtype=float), m)
    wb = m + acc
    rows = np.stack([_fornberg(float(i), np.arange(wb, dtype=float), m) for i in range(hw)])
    return wc, rows, hw, wb


def fd_derivative(
    values: np.ndarray, h: float, m: int, axis: int = -1, acc: int = 2
) -> np.ndarray:
    """m-th derivative along an axis on a uniform grid of spacing h.

    Central differences inside, one-sided stencils of matching order at
    the ends (never composed first differences, which lose boundary
    accuracy for m >= 2).
    """
    if not h > 0:
        raise DomainError(f"grid spacing h={h} must be positive")
    if m == 0:
        return np.asarray(values, dtype=float).copy()
    if m < 0 or acc < 2 or acc % 2:
        raise DomainError(f"unsupported derivative order m={m} or accuracy {acc}")
    v = np.asarray(values, dtype=float)
    w = np.moveaxis(v, axis, -1)
    n = w.shape[-1]
    wc, rows, hw, wb = _stencils(m, acc)
    if n < max(2 * hw + 1, wb):
        raise SizingError(f"axis length {n} too short for order-{m} stencil (need {max(2*hw+1, wb)})")
    out = np.empty_like(w)
    width = 2 * hw + 1
    interior = np.zeros(w.shape[:-1] + (n - 2 * hw,))
    for k in range(width):
        interior += wc[k] * w[..., k : k + n - 2 * hw]
    out[..., hw : n - hw] = interior
    for i in range(hw):
        out[..., i] = w[..., :wb] @ rows[i]
        out[..., n - 1 - i] = w[..., n - wb :] @ rows[i][::-1] * (-1.0) ** m
    out /= h**m
    return np.moveaxis(out, -1, axis)


def apply_L(field: np.ndarray, coeffs: EllipticCoefficients, dx: float) -> np.ndarray:
    """Apply L u = (a u')' - b u' - c u along the spatial axis (axis 0).

    Interior nodes use the conservative flux form with midpoint-averaged a;
    endpoint values come from one-sided 2nd-order stencils so the operator
    can be composed with itself.
    """
    u = np.asarray(field, dtype=float)
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    if u.shape[0] != a.shape[0]:
        raise SizingError(f"field has {u.shape[0]} nodes, coefficients {a.shape[0]}")
    col = (slice(None),) + (None,) * (u.ndim - 1)
    a_half = 0.5 * (a[1:] + a[:-1])  # a at midpoints, length nx+1
    out = np.empty_like(u)
    flux = a_half[col] * (u[1:] - u[:-1]) / dx  # a u' at midpoints
    out[1:-1] = (flux[1:] - flux[:-1]) / dx
    out[1:-1] -= b[1:-1][col] * (u[2:] - u[:-2]) / (2 * dx)
    out[1:-1] -= c[1:-1][col] * u[1:-1]
    # one-sided closure: L = a u'' + a' u' - b u' - c u at the two endpoints
    d1l = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2 * dx)
    d1r = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2 * dx)
    d2l = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / dx**2
    d2r = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / dx**2
    apl = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2 * dx)
    apr = (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2 * dx)
    out[0] = a[0] * d2l + (apl - b[0]) * d1l - c[0] * u[0]
    out[-1] = a[-1] * d2r + (apr - b[-1]) * d1r - c[-1] * u[-1]
    return out


MAX_SOBOLEV_ORDER = 5


def discrete_sobolev_norm(field: np.ndarray, k: int, dx: float) -> float:
    """sqrt(sum_{j<=k} ||D^j field||^2_{L2}) with trapezoidal quadrature."""
    if k < 0 or k > MAX_SOBOLEV_ORDER:
        raise DomainError(f"sobolev order k={k} unsupported (0..{MAX_SOBOLEV_ORDER})")
    f = np.asarray(field, dtype=float)
    n = f.shape[0]
    if n < 4 * k + 2:
        raise SizingError(f"{n} nodes too few for order-{k} norm (need {4*k+2})")
    total = 0.0
    for j in range(k + 1):
        d = f if j == 0 else fd_derivative(f, dx, j, axis=0)
        total += float(np.trapezoid(d * d, dx=dx, axis=0))
    return math.sqrt(total)
