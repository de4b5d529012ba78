"""Distance profiles, weight evaluation, weighted integrals, and ratio scans."""

import numpy as np
import pytest

from fracinv.carleman import (
    LEMMA_IDS,
    DistanceFunction,
    _check_transport,
    _red_flag,
    build_d1,
    build_d2,
    carleman_scan,
    check_distance_invariants,
    default_test_function,
    eval_weights,
    make_weights,
    weighted_integral,
)
from fracinv.errors import AssumptionError, ConstructionError, DataError, DomainError
from fracinv.model import (
    EllipticCoefficients,
    ModelParams,
    ObservationGeometry,
    build_grid,
)

# Hand-substituted probe values for d = 1, lambda = 2, T = 1, t = 1/2:
# phi = e^2 / (1/4) = 4 e^2, psi = (e^2 - e^4) / (1/4).
PHI_PROBE = 29.5562243957226
PSI_PROBE = -188.83637573685434


@pytest.fixture
def setup():
    grid = build_grid(nx=63, nt=128, T=1.0)
    params = ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.5, delta=0.25)
    coeffs = EllipticCoefficients.from_callables(grid, lambda x: 1.0, 0.0, 0.0)
    return grid, params, coeffs, ObservationGeometry()


def _probe_distance(grid, geometry):
    ones = np.ones_like(grid.xs)
    return DistanceFunction(
        kind="probe", samples=ones, slope=np.zeros_like(ones), sigma=0.0,
        geometry=geometry, grid=grid,
    )


def test_build_d1_right_profile(setup):
    grid, _, _, geo = setup
    d = build_d1(geo, grid)
    assert np.allclose(d.samples, grid.xs + 1.0)
    assert d.at(0.5) == pytest.approx(1.5)
    assert np.all(d.slope == 1.0)
    assert d.sigma < 1.0
    assert d.sup == pytest.approx(2.0)


def test_build_d1_left_mirror(setup):
    grid, _, _, _ = setup
    geo = ObservationGeometry(gamma_side="left")
    d = build_d1(geo, grid)
    assert np.allclose(d.samples, 2.0 - grid.xs)
    assert d.at(0.5) == pytest.approx(1.5)
    assert np.all(d.slope == -1.0)


def test_build_d1_flux_sign(setup):
    grid, _, coeffs, geo = setup
    d = build_d1(geo, grid)
    # unit diffusion, outward normal -1 at the unobserved left endpoint
    assert coeffs.a[0] * d.slope[0] * (-1.0) == pytest.approx(-1.0)
    check_distance_invariants(d, coeffs)


def test_distance_flux_violation_raises(setup):
    grid, _, _, _ = setup
    geo = ObservationGeometry(gamma_side="left")
    bad = DistanceFunction(
        kind="boundary", samples=grid.xs + 1.0, slope=np.ones_like(grid.xs),
        sigma=0.5, geometry=geo, grid=grid,
    )
    with pytest.raises(ConstructionError, match="unobserved endpoint"):
        check_distance_invariants(bad)


def test_build_d2_default_values(setup):
    grid, _, _, geo = setup
    d = build_d2(geo, grid)
    assert d.at(0.5) == pytest.approx(0.25)
    assert d.samples[0] == 0.0 and d.samples[-1] == 0.0
    assert np.min(d.samples[1:-1]) > 0


def test_build_d2_slope_boundary_value():
    # nx = 159 puts x = 0.45 on a node, where |1 - 2x| equals sigma exactly
    grid = build_grid(nx=159, nt=32, T=1.0)
    d = build_d2(ObservationGeometry(), grid)
    lo, hi = d.geometry.omega0
    outside = (grid.xs <= lo + 1e-12) | (grid.xs >= hi - 1e-12)
    assert np.min(np.abs(d.slope[outside])) == pytest.approx(0.1, abs=1e-12)


def test_build_d2_critical_point_outside_core(setup):
    grid, _, _, _ = setup
    geo = ObservationGeometry(omega=(0.05, 0.3), omega0=(0.1, 0.2), d_prime=(0.02, 0.95))
    with pytest.raises(ConstructionError, match="critical point"):
        build_d2(geo, grid)


def test_probe_weights_hand_values(setup):
    grid, params, _, geo = setup
    w = make_weights(_probe_distance(grid, geo), lam=2.0, s=1.0, params=params)
    phi, psi = eval_weights(w, 0.3, 0.5)
    assert phi == pytest.approx(PHI_PROBE, rel=1e-12)
    assert psi == pytest.approx(PSI_PROBE, rel=1e-12)


def test_eval_weights_domain_errors(setup):
    grid, params, _, geo = setup
    w = make_weights(_probe_distance(grid, geo), lam=2.0, s=1.0, params=params)
    for t in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(DomainError, match="window"):
            eval_weights(w, 0.5, t)
    wd = make_weights(_probe_distance(grid, geo), 2.0, 1.0, params, window="delta")
    with pytest.raises(DomainError, match="window"):
        eval_weights(wd, 0.5, params.t0 - params.delta)


def test_lambda_zero_flagged_degenerate(setup):
    grid, params, _, geo = setup
    w = make_weights(_probe_distance(grid, geo), lam=0.0, s=1.0, params=params)
    assert w.degenerate
    phi, psi = eval_weights(w, 0.5, 0.5)
    assert phi == pytest.approx(4.0)
    assert psi == pytest.approx(0.0, abs=1e-15)
    assert not make_weights(_probe_distance(grid, geo), 2.0, 1.0, params).degenerate


def test_make_weights_validation(setup):
    grid, params, _, geo = setup
    d = _probe_distance(grid, geo)
    with pytest.raises(DomainError, match="positive"):
        make_weights(d, 2.0, 0.0, params)
    with pytest.raises(DomainError, match="window"):
        make_weights(d, 2.0, 1.0, params, window="half")


def test_psi_peaks_at_t0_inside_window(setup):
    grid, params, _, geo = setup
    d = build_d2(geo, grid)
    w = make_weights(d, 2.0, 1.0, params, window="delta")
    _, psi_t0 = eval_weights(w, grid.xs, params.t0)
    inner = grid.ts[(grid.ts > params.t0 - params.delta) & (grid.ts < params.t0 + params.delta)]
    for t in inner:
        _, psi_t = eval_weights(w, grid.xs, t)
        assert np.all(psi_t0 >= psi_t - 1e-12)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
def test_weight_signs_everywhere(setup, lam):
    grid, params, _, geo = setup
    for d in (build_d1(geo, grid), build_d2(geo, grid)):
        w = make_weights(d, lam, 3.0, params)
        for t in (0.1, 0.5, 0.9):
            phi, psi = eval_weights(w, grid.xs, t)
            assert np.all(phi > 0)
            assert np.all(psi < 0)


def test_weighted_integral_zero_field(setup):
    grid, params, _, geo = setup
    w = make_weights(build_d2(geo, grid), 1.0, 1.0, params)
    zeros = np.zeros((grid.nx + 2, grid.nt + 1))
    assert weighted_integral(zeros, w, grid.ts) == 0.0


def test_weighted_integral_constant_field_positive(setup):
    grid, params, _, geo = setup
    w = make_weights(build_d2(geo, grid), 1.0, 0.5, params)
    ones = np.ones((grid.nx + 2, grid.nt + 1))
    val = weighted_integral(ones, w, grid.ts)
    assert np.isfinite(val) and val > 0


def test_weighted_integral_decreases_in_s(setup):
    # psi < 0 pointwise, so raising s shrinks e^{2 s psi} everywhere
    grid, params, _, geo = setup
    d = build_d2(geo, grid)
    ones = np.ones((grid.nx + 2, grid.nt + 1))
    vals = [
        weighted_integral(ones, make_weights(d, 1.0, s, params), grid.ts)
        for s in (0.5, 1.0, 2.0, 4.0)
    ]
    assert all(a > b > 0 for a, b in zip(vals, vals[1:]))


def test_weighted_integral_shape_mismatch(setup):
    grid, params, _, geo = setup
    w = make_weights(build_d2(geo, grid), 1.0, 1.0, params)
    with pytest.raises(DataError, match="shape"):
        weighted_integral(np.ones((3, 4)), w, grid.ts)


def test_scan_zero_test_function_flagged(setup):
    grid, params, coeffs, geo = setup
    zeros = np.zeros((grid.nx + 2, grid.nt + 1))
    r = carleman_scan("parabolic-b", grid, params, coeffs, geo, v=zeros, lam=2.0)
    assert all(r.undefined)
    assert all(np.isnan(x) for x in r.ratios)
    assert not r.red_flag


def test_parabolic_b_example_gate(setup):
    grid, params, coeffs, geo = setup
    r = carleman_scan(
        "parabolic-b", grid, params, coeffs, geo, lam=2.0, s_values=[5, 10, 20, 40, 80]
    )
    ratios = np.asarray(r.ratios)
    assert np.all(np.isfinite(ratios))
    upper = ratios[len(ratios) // 2 :]
    assert np.max(upper) <= 2.0 * ratios[len(ratios) // 2]


def test_first_order_b_example_bounded(setup):
    grid, params, coeffs, geo = setup
    r = carleman_scan("first-order-b", grid, params, coeffs, geo, lam=2.0)
    ratios = np.asarray(r.ratios)
    assert not any(r.undefined)
    assert np.all(np.isfinite(ratios))
    assert np.max(ratios) < 10.0
    assert not r.red_flag


@pytest.mark.parametrize("lemma_id", LEMMA_IDS)
@pytest.mark.parametrize("lam", [1.0, 2.0, 4.0])
def test_scan_finite_and_tail_gated(setup, lemma_id, lam):
    grid, params, coeffs, geo = setup
    r = carleman_scan(lemma_id, grid, params, coeffs, geo, lam=lam)
    lhs, rhs, ratios = map(np.asarray, (r.lhs, r.rhs, r.ratios))
    assert np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))
    assert np.all(lhs >= 0) and np.all(rhs >= 0)
    assert not any(r.undefined)
    upper = ratios[len(ratios) // 2 :]
    med = np.median(upper)
    assert ratios[-1] <= 3.0 * med or ratios[-1] == 0.0
    assert not r.red_flag


def test_scan_ratios_scale_invariant(setup):
    grid, params, coeffs, geo = setup
    v, _ = default_test_function("parabolic-b", grid, params, geo)
    r1 = carleman_scan("parabolic-b", grid, params, coeffs, geo, v=v, lam=2.0)
    r2 = carleman_scan("parabolic-b", grid, params, coeffs, geo, v=3.7 * v, lam=2.0)
    assert np.allclose(r1.ratios, r2.ratios, rtol=1e-12)


def test_scan_determinism(setup):
    grid, params, coeffs, geo = setup
    r1 = carleman_scan("main-i", grid, params, coeffs, geo, lam=2.0)
    r2 = carleman_scan("main-i", grid, params, coeffs, geo, lam=2.0)
    assert r1.lhs == r2.lhs and r1.rhs == r2.rhs and r1.ratios == r2.ratios


def test_scan_validation_errors(setup):
    grid, params, coeffs, geo = setup
    with pytest.raises(DomainError, match="lemma id"):
        carleman_scan("spectral-b", grid, params, coeffs, geo)
    with pytest.raises(DomainError, match="lambda"):
        carleman_scan("parabolic-b", grid, params, coeffs, geo, lam=0.0)
    with pytest.raises(DomainError, match="s grid"):
        carleman_scan("parabolic-b", grid, params, coeffs, geo, s_values=[5.0])
    with pytest.raises(DomainError, match="positive"):
        carleman_scan("parabolic-b", grid, params, coeffs, geo, s_values=[1.0, -2.0])


def test_scan_boundary_condition_violations_named(setup):
    grid, params, coeffs, geo = setup
    ones = np.ones((grid.nx + 2, grid.nt + 1))
    with pytest.raises(AssumptionError, match="endpoint"):
        carleman_scan("parabolic-b", grid, params, coeffs, geo, v=ones)
    with pytest.raises(AssumptionError, match="derivative order 1"):
        carleman_scan("third-order-b", grid, params, coeffs, geo, v=np.sin(np.pi * grid.xs))
    with pytest.raises(AssumptionError, match="omega"):
        carleman_scan(
            "first-order-i", grid, params, coeffs, geo,
            v=grid.xs**2 * (1 - grid.xs) ** 2,
        )


def test_scan_shape_validation(setup):
    grid, params, coeffs, geo = setup
    with pytest.raises(DataError, match="shape"):
        carleman_scan("parabolic-b", grid, params, coeffs, geo, v=np.ones(grid.nx + 2))
    with pytest.raises(DataError, match="shape"):
        carleman_scan("elliptic-b", grid, params, coeffs, geo, v=np.ones((grid.nx + 2, 3)))


def test_transport_guard_fires_on_flat_slope(setup):
    grid, _, _, geo = setup
    flat = DistanceFunction(
        kind="interior", samples=grid.xs * (1 - grid.xs),
        slope=np.full_like(grid.xs, 0.01), sigma=0.1, geometry=geo, grid=grid,
    )
    with pytest.raises(AssumptionError, match="transport slope"):
        _check_transport(flat, "probe")


def test_default_test_functions(setup):
    grid, params, _, geo = setup
    v, desc = default_test_function("parabolic-b", grid, params, geo)
    assert v.shape == (grid.nx + 2, grid.nt + 1)
    assert "sin" in desc
    prof, desc = default_test_function("first-order-b", grid, params, geo)
    assert prof.shape == (grid.nx + 2,)
    assert np.allclose(prof, grid.xs**2 * (1 - grid.xs) ** 2 / 0.25**2)
    with pytest.raises(DomainError, match="lemma id"):
        default_test_function("fourth-order-b", grid, params, geo)


def test_interior_defaults_vanish_on_omega(setup):
    grid, params, _, geo = setup
    nodes = geo.omega_indices(grid)
    for lemma_id in ("first-order-i", "third-order-i"):
        prof, _ = default_test_function(lemma_id, grid, params, geo)
        assert np.all(prof[nodes] == 0.0)


def test_user_supplied_spatial_profile_scans(setup):
    grid, params, coeffs, geo = setup
    v = grid.xs**2 * (1 - grid.xs) ** 2
    r = carleman_scan("first-order-b", grid, params, coeffs, geo, v=v, lam=1.0)
    assert r.test_function == "user-supplied"
    assert np.all(np.isfinite(np.asarray(r.ratios)))


def test_red_flag_rule():
    up = np.geomspace(1.0, 30.0, 8)
    assert _red_flag(up, np.zeros(8, dtype=bool))
    mild = np.geomspace(1.0, 5.0, 8)
    assert not _red_flag(mild, np.zeros(8, dtype=bool))
    bumpy = np.array([1.0, 5.0, 2.0, 40.0])
    assert not _red_flag(bumpy, np.zeros(4, dtype=bool))
