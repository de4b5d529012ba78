"""Observation sampling, basis constraints, and reconstruction round trips."""

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from fracinv.errors import AssumptionError, DataError, DomainError, SolverError
from fracinv.forward import ForwardProblem, solve_forward
from fracinv.fracops import fd_derivative
from fracinv.inversion import (
    LinearObservationMap,
    ObservationSet,
    SpatialBasis,
    add_noise,
    assemble_forward_map,
    difference,
    diffusion_basis,
    discrepancy_alpha,
    invert_diffusion_coefficient,
    invert_source,
    invert_zeroth_coefficient,
    observe,
    source_basis,
)
from fracinv.model import (
    EllipticCoefficients,
    ModelParams,
    ObservationGeometry,
    build_grid,
    window_indices,
)

PARAMS = ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.5, delta=0.25)
GEO = ObservationGeometry()


def _unit_coeffs(grid, c=0.0):
    return EllipticCoefficients.from_callables(grid, 1.0, 0.0, c)


def _solve(grid, coeffs, source):
    return solve_forward(ForwardProblem.make(grid, PARAMS, coeffs, source))


@pytest.fixture(scope="module")
def small():
    grid = build_grid(nx=31, nt=64, T=1.0)
    return grid, _unit_coeffs(grid)


@pytest.fixture(scope="module")
def fine():
    grid = build_grid(nx=127, nt=256, T=1.0)
    return grid, _unit_coeffs(grid)


def _r_factor(X, T):
    return 2.0 + np.sin(np.pi * X) * np.exp(-T)


@pytest.fixture(scope="module")
def source_setup(fine):
    # separable truth driven through the forward solver, then observed
    grid, coeffs = fine
    xs = grid.xs
    f_true = np.sin(np.pi * xs) * np.sin(2 * np.pi * xs)
    X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
    u_true = _solve(grid, coeffs, f_true[:, None] * _r_factor(X, T))
    fmap = assemble_forward_map(_r_factor, PARAMS, coeffs, grid, GEO, kind="boundary")
    return grid, coeffs, f_true, u_true, fmap


# ---------------------------------------------------------------------------
# Noise model.


def test_add_noise_zero_level_identity():
    data = np.linspace(-1, 2, 40)
    out = add_noise(data, 0.0, seed=3)
    assert np.array_equal(out, data)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_add_noise_deterministic_per_seed(seed):
    data = np.linspace(-1, 2, 40)
    a = add_noise(data, 0.01, seed)
    b = add_noise(data, 0.01, seed)
    assert np.array_equal(a, b)


def test_add_noise_perturbation_linear_in_level():
    data = np.sin(np.linspace(0, 6, 100))
    d1 = add_noise(data, 0.01, seed=5) - data
    d2 = add_noise(data, 0.02, seed=5) - data
    assert np.allclose(d2, 2.0 * d1, rtol=1e-12)


def test_add_noise_negative_level():
    with pytest.raises(DomainError, match="nonnegative"):
        add_noise(np.ones(4), -0.1, seed=0)


def test_add_noise_empirical_std():
    data = np.full(4000, 2.0)
    pert = add_noise(data, 0.01, seed=7) - data
    assert 0.005 * 2.0 <= pert.std() <= 0.015 * 2.0


# ---------------------------------------------------------------------------
# Observation sampling.


def test_observe_boundary_pattern(small):
    grid, coeffs = small
    u = _solve(grid, coeffs, lambda X, T: np.sin(np.pi * X) * T)
    obs = observe(u, grid, PARAMS, GEO, "boundary")
    it0 = grid.nt // 2
    window = window_indices(grid.ts, PARAMS.t0, PARAMS.delta)
    assert obs.snapshot.shape == (grid.nx + 2,)
    assert np.array_equal(obs.snapshot, u.values[:, it0])
    assert obs.nodes == (GEO.gamma_index(grid),)
    assert obs.window == tuple(int(n) for n in window)
    flux = fd_derivative(u.values, grid.dx, 1, axis=0)[obs.nodes[0], window]
    assert np.array_equal(obs.series, flux[None, :])
    assert obs.vector().size == obs.snapshot.size + obs.series.size


def test_observe_interior_pattern(small):
    grid, coeffs = small
    u = _solve(grid, coeffs, lambda X, T: np.sin(np.pi * X) * T)
    obs = observe(u, grid, PARAMS, GEO, "interior")
    idx = GEO.omega_indices(grid)
    assert obs.series.shape == (idx.size, len(obs.window))
    assert np.array_equal(obs.series, u.values[np.ix_(idx, np.array(obs.window))])


def test_observe_validation(small):
    grid, coeffs = small
    u = _solve(grid, coeffs, lambda X, T: np.sin(np.pi * X) * T)
    with pytest.raises(DomainError, match="kind"):
        observe(u, grid, PARAMS, GEO, "volume")
    off_grid = build_grid(nx=31, nt=63, T=1.0)
    with pytest.raises(DomainError, match="time grid"):
        observe(np.zeros((33, 64)), off_grid, PARAMS, GEO, "boundary")


def test_observation_set_validation():
    snap = np.zeros(10)
    series = np.zeros((1, 3))
    with pytest.raises(DomainError, match="noise_level"):
        ObservationSet("boundary", snap, series, (2,), (1, 2, 3), noise_level=-1.0)
    with pytest.raises(DataError, match="series shape"):
        ObservationSet("boundary", snap, np.zeros((2, 3)), (2,), (1, 2, 3))
    with pytest.raises(DomainError, match="kind"):
        ObservationSet("edge", snap, series, (2,), (1, 2, 3))


def test_difference_requires_matching_pattern(small):
    grid, coeffs = small
    u = _solve(grid, coeffs, lambda X, T: np.sin(np.pi * X) * T)
    a = observe(u, grid, PARAMS, GEO, "boundary")
    b = observe(u, grid, PARAMS, GEO, "interior")
    with pytest.raises(DataError, match="pattern"):
        difference(a, b)
    zero = difference(a, a)
    assert np.all(zero.vector() == 0.0)


# ---------------------------------------------------------------------------
# Bases.


def test_source_basis_boundary_constraints(small):
    grid, _ = small
    basis = source_basis(grid, GEO, "boundary")
    assert basis.size == 12
    assert np.all(basis.samples[:, 0] == 0.0)
    assert np.all(basis.samples[:, -1] == 0.0)
    # slope vanishes at both endpoints: first off-node value is O(dx^2)
    for k, row in enumerate(basis.samples, start=1):
        assert abs(row[1]) <= 5.0 * k * grid.dx**2 * np.pi**2


def test_source_basis_interior_vanishes_on_omega(small):
    grid, _ = small
    basis = source_basis(grid, GEO, "interior")
    idx = GEO.omega_indices(grid)
    assert np.all(basis.samples[:, idx] == 0.0)
    assert np.all(basis.samples[:, 0] == 0.0)
    assert np.all(basis.samples[:, -1] == 0.0)
    assert np.max(np.abs(basis.samples)) > 0.5


def test_source_basis_validation(small):
    grid, _ = small
    with pytest.raises(DomainError, match="kind"):
        source_basis(grid, GEO, "mixed")
    with pytest.raises(DomainError, match="basis size"):
        source_basis(grid, GEO, "boundary", n=0)


def test_diffusion_basis_support(small):
    grid, _ = small
    xs = grid.xs
    basis = diffusion_basis(grid, GEO, "boundary")
    lo, hi = GEO.d_prime
    outside = (xs < lo - 1e-12) | (xs > hi + 1e-12)
    assert np.all(basis.samples[:, outside] == 0.0)
    assert np.all(basis.samples >= 0.0)
    interior = diffusion_basis(grid, GEO, "interior")
    idx = GEO.omega_indices(grid)
    assert np.all(interior.samples[:, idx] == 0.0)
    assert 0 < interior.size < basis.size


# ---------------------------------------------------------------------------
# Forward map assembly.


def test_map_zero_coefficients_zero_prediction(source_setup):
    _, _, _, _, fmap = source_setup
    assert np.all(fmap.matrix @ np.zeros(fmap.basis.size) == 0.0)


def test_map_column_is_observed_basis_solve(small):
    grid, coeffs = small
    fmap = assemble_forward_map(
        lambda X, T: np.ones_like(X), PARAMS, coeffs, grid, GEO, kind="boundary", n_basis=4
    )
    k = 2
    psi = fmap.basis.samples[k]
    u = _solve(grid, coeffs, np.repeat(psi[:, None], grid.nt + 1, axis=1))
    direct = observe(u, grid, PARAMS, GEO, "boundary").vector()
    assert np.allclose(fmap.matrix[:, k], direct, rtol=1e-12, atol=1e-15)


def test_map_superposition(source_setup):
    _, _, _, _, fmap = source_setup
    rng = np.random.default_rng(0)
    c1, c2 = rng.normal(size=(2, fmap.basis.size))
    lhs = fmap.matrix @ (c1 + c2)
    rhs = fmap.matrix @ c1 + fmap.matrix @ c2
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_map_R_must_not_vanish(small):
    grid, coeffs = small
    with pytest.raises(AssumptionError, match=r"R\(., t0\)"):
        assemble_forward_map(
            lambda X, T: X - 0.5, PARAMS, coeffs, grid, GEO, kind="boundary", n_basis=3
        )


# ---------------------------------------------------------------------------
# Tikhonov solve behavior.


def test_invert_zero_data_gives_zero(source_setup):
    grid, coeffs, _, _, fmap = source_setup
    zero = observe(np.zeros((grid.nx + 2, grid.nt + 1)), grid, PARAMS, GEO, "boundary")
    res = invert_source(zero, fmap, 1e-8)
    assert np.max(np.abs(res.estimate)) <= 1e-10
    assert res.rel_error is None


def test_invert_linear_in_data(source_setup):
    grid, coeffs, f_true, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    scaled = replace(obs, snapshot=3.0 * obs.snapshot, series=3.0 * obs.series)
    r1 = invert_source(obs, fmap, 1e-8)
    r3 = invert_source(scaled, fmap, 1e-8)
    assert np.allclose(r3.estimate, 3.0 * r1.estimate, rtol=1e-10, atol=1e-14)


def test_invert_alpha_validation_and_pattern(source_setup):
    grid, coeffs, _, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    with pytest.raises(DomainError, match="alpha"):
        invert_source(obs, fmap, -1e-8)
    wrong = observe(u_true, grid, PARAMS, GEO, "interior")
    with pytest.raises(DataError, match="pattern"):
        invert_source(wrong, fmap, 1e-8)


def test_invert_ill_conditioned_reports_estimate():
    # duplicate columns with a rank-deficient penalty cannot be solved
    col = np.linspace(0.0, 1.0, 8)
    matrix = np.column_stack([col, col])
    basis = SpatialBasis(
        samples=np.zeros((2, 5)), penalty=np.zeros((1, 2)),
        constraint_kind="boundary", label="degenerate",
    )
    fmap = LinearObservationMap(matrix=matrix, basis=basis, kind="boundary", nodes=(1,), window=(2, 3))
    obs = ObservationSet("boundary", col[:6], col[None, 6:8], (1,), (2, 3))
    with pytest.raises(SolverError, match="condition estimate"):
        invert_source(obs, fmap, 0.0)


def test_noiseless_error_decreases_with_alpha(source_setup):
    grid, coeffs, f_true, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    errs = [invert_source(obs, fmap, a, truth=f_true).rel_error for a in (1e-4, 1e-5, 1e-6, 1e-7)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_residual_grows_with_alpha(source_setup):
    grid, coeffs, _, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    res = [invert_source(obs, fmap, a).residual for a in (1e-8, 1e-6, 1e-4)]
    assert res[0] < res[1] < res[2]


# ---------------------------------------------------------------------------
# Round trips.


def test_source_round_trip_boundary_noiseless(source_setup):
    grid, coeffs, f_true, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    res = invert_source(obs, fmap, 1e-8, truth=f_true)
    assert res.rel_error < 0.05
    assert res.estimate[0] == 0.0 and res.estimate[-1] == 0.0


def test_source_round_trip_boundary_noisy_discrepancy(source_setup):
    grid, coeffs, f_true, u_true, fmap = source_setup
    clean = observe(u_true, grid, PARAMS, GEO, "boundary")
    noisy = observe(u_true, grid, PARAMS, GEO, "boundary", noise_level=0.01, seed=7)
    noise_std = 0.01 * max(np.max(np.abs(clean.snapshot)), np.max(np.abs(clean.series)))
    alpha = discrepancy_alpha(noisy, fmap, noise_std)
    res = invert_source(noisy, fmap, alpha, truth=f_true)
    assert alpha > 0
    assert res.rel_error < 0.20


def test_source_round_trip_interior(fine):
    grid, coeffs = fine
    basis = source_basis(grid, GEO, "interior")
    c_true = np.zeros(basis.size)
    c_true[0], c_true[2] = 0.5, 1.0
    f_true = basis.expand(c_true)
    X, T = np.meshgrid(grid.xs, grid.ts, indexing="ij")
    u_true = _solve(grid, coeffs, f_true[:, None] * _r_factor(X, T))
    fmap = assemble_forward_map(_r_factor, PARAMS, coeffs, grid, GEO, kind="interior")
    obs = observe(u_true, grid, PARAMS, GEO, "interior")
    res = invert_source(obs, fmap, 1e-8, truth=f_true)
    assert res.rel_error < 0.05
    assert np.all(res.estimate[GEO.omega_indices(grid)] == 0.0)


def test_zeroth_round_trip_boundary(fine):
    grid, _ = fine
    xs = grid.xs
    f_true = 0.5 * np.sin(np.pi * xs) ** 2
    coeffs2 = _unit_coeffs(grid, c=1.0)
    coeffs1 = EllipticCoefficients(a=coeffs2.a, b=coeffs2.b, c=coeffs2.c + f_true)
    g = lambda X, T: np.sin(np.pi * X) * (1.0 + T)
    u2 = _solve(grid, coeffs2, g)
    u1 = _solve(grid, coeffs1, g)
    obs1 = observe(u1, grid, PARAMS, GEO, "boundary")
    res = invert_zeroth_coefficient(obs1, u2, PARAMS, coeffs2, grid, GEO, 1e-8, truth=f_true)
    assert res.rel_error < 0.10


def test_zeroth_round_trip_interior(fine):
    grid, _ = fine
    basis = source_basis(grid, GEO, "interior")
    c_true = np.zeros(basis.size)
    c_true[1], c_true[3] = 0.2, 0.1
    f_true = basis.expand(c_true)
    coeffs2 = _unit_coeffs(grid, c=1.0)
    coeffs1 = EllipticCoefficients(a=coeffs2.a, b=coeffs2.b, c=coeffs2.c + f_true)
    g = lambda X, T: np.sin(np.pi * X) * (1.0 + T)
    u2 = _solve(grid, coeffs2, g)
    u1 = _solve(grid, coeffs1, g)
    obs1 = observe(u1, grid, PARAMS, GEO, "interior")
    res = invert_zeroth_coefficient(obs1, u2, PARAMS, coeffs2, grid, GEO, 1e-10, truth=f_true)
    assert res.rel_error < 0.10


def test_zeroth_sign_flip_on_linearized_data(fine):
    grid, _ = fine
    xs = grid.xs
    f_true = 0.5 * np.sin(np.pi * xs) ** 2
    coeffs2 = _unit_coeffs(grid, c=1.0)
    u2 = _solve(grid, coeffs2, lambda X, T: np.sin(np.pi * X) * (1.0 + T))
    w = _solve(grid, coeffs2, -f_true[:, None] * u2.values)
    plus = observe(u2.values + w.values, grid, PARAMS, GEO, "boundary")
    minus = observe(u2.values - w.values, grid, PARAMS, GEO, "boundary")
    rp = invert_zeroth_coefficient(plus, u2, PARAMS, coeffs2, grid, GEO, 1e-8)
    rm = invert_zeroth_coefficient(minus, u2, PARAMS, coeffs2, grid, GEO, 1e-8)
    scale = np.max(np.abs(rp.estimate))
    assert np.max(np.abs(rp.estimate + rm.estimate)) <= 1e-8 * scale


def test_zeroth_background_must_not_vanish(small):
    grid, coeffs = small
    u2 = _solve(grid, coeffs, lambda X, T: np.sin(2 * np.pi * X) * T)
    obs = observe(u2, grid, PARAMS, GEO, "boundary")
    with pytest.raises(AssumptionError, match="background snapshot vanishes"):
        invert_zeroth_coefficient(obs, u2, PARAMS, coeffs, grid, GEO, 1e-8)


@pytest.fixture(scope="module")
def diffusion_setup(fine):
    # left-localized driving keeps the background slope one-signed on the band
    grid, _ = fine
    xs = grid.xs
    coeffs2 = _unit_coeffs(grid, c=1.0)
    g = lambda X, T: 40.0 * np.exp(-40.0 * X) * np.ones_like(T)
    r = _solve(grid, coeffs2, g)
    q = np.where((xs > 0.2) & (xs < 0.8), (xs - 0.2) * (0.8 - xs), 0.0)
    a_true = 0.2 * (q / 0.09) ** 5
    return grid, coeffs2, g, r, a_true


def test_diffusion_round_trip_boundary(diffusion_setup):
    grid, coeffs2, g, r, a_true = diffusion_setup
    coeffs1 = EllipticCoefficients(a=coeffs2.a + a_true, b=coeffs2.b, c=coeffs2.c)
    u1 = _solve(grid, coeffs1, g)
    obs1 = observe(u1, grid, PARAMS, GEO, "boundary")
    res = invert_diffusion_coefficient(
        obs1, r, PARAMS, coeffs2, grid, GEO, 1e-13, truth=a_true
    )
    assert res.rel_error < 0.15
    lo, hi = GEO.d_prime
    outside = (grid.xs < lo - 1e-12) | (grid.xs > hi + 1e-12)
    assert np.all(res.estimate[outside] == 0.0)


def test_diffusion_estimate_scales_with_truth(diffusion_setup):
    # data built through the linearized equation, so halving is exact
    grid, coeffs2, g, r, a_true = diffusion_setup
    r_x = fd_derivative(r.values, grid.dx, 1, axis=0)
    flux_src = fd_derivative(a_true[:, None] * r_x, grid.dx, 1, axis=0)
    w = _solve(grid, coeffs2, flux_src)
    full = observe(r.values + w.values, grid, PARAMS, GEO, "boundary")
    half = observe(r.values + 0.5 * w.values, grid, PARAMS, GEO, "boundary")
    rf = invert_diffusion_coefficient(full, r, PARAMS, coeffs2, grid, GEO, 1e-13)
    rh = invert_diffusion_coefficient(half, r, PARAMS, coeffs2, grid, GEO, 1e-13)
    scale = np.max(np.abs(rf.estimate))
    assert np.max(np.abs(rh.estimate - 0.5 * rf.estimate)) <= 1e-6 * scale


def test_diffusion_transversality_guard(small):
    grid, coeffs = small
    r = _solve(grid, coeffs, lambda X, T: np.sin(np.pi * X) * (1.0 + T))
    obs = observe(r, grid, PARAMS, GEO, "boundary")
    with pytest.raises(AssumptionError, match="transversality"):
        invert_diffusion_coefficient(obs, r, PARAMS, coeffs, grid, GEO, 1e-10)


def test_discrepancy_alpha_validation(source_setup):
    grid, coeffs, _, u_true, fmap = source_setup
    obs = observe(u_true, grid, PARAMS, GEO, "boundary")
    with pytest.raises(DomainError, match="noise_std"):
        discrepancy_alpha(obs, fmap, -1.0)
    with pytest.raises(DomainError, match="positive"):
        discrepancy_alpha(obs, fmap, 0.1, alphas=np.array([0.0, 1.0]))
