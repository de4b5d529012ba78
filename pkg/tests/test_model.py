import numpy as np
import pytest

from fracinv.errors import ConstructionError, DataError, SizingError
from fracinv.model import (
    EllipticCoefficients,
    ModelParams,
    ObservationGeometry,
    TimeSeriesField,
    build_grid,
    validate_coefficients,
    window_indices,
)


def test_build_grid_spacings():
    g = build_grid(99, 100, 1.0)
    assert g.dx == pytest.approx(0.01)
    assert g.dt == pytest.approx(0.01)
    g2 = build_grid(63, 128, 2.0)
    assert g2.dx == pytest.approx(1 / 64)
    assert g2.dt == pytest.approx(1 / 64)


def test_grid_spacing_identities_exact():
    g = build_grid(31, 77, 3.0)
    assert (g.nx + 1) * g.dx == pytest.approx(1.0, abs=1e-15)
    assert g.nt * g.dt == pytest.approx(g.T, abs=1e-15)
    assert len(g.xs) == g.nx + 2
    assert len(g.ts) == g.nt + 1


def test_build_grid_rejects_undersized():
    with pytest.raises(SizingError):
        build_grid(15, 100, 1.0)
    with pytest.raises(SizingError):
        build_grid(100, 15, 1.0)
    with pytest.raises(SizingError):
        build_grid(100, 100, 0.0)


def test_model_params_window_condition():
    ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.5, delta=0.25)
    with pytest.raises(ConstructionError):
        ModelParams(rho1=0.0, rho2=1.0, T=1.0, t0=0.5, delta=0.25)
    with pytest.raises(ConstructionError):
        ModelParams(rho1=1.0, rho2=0.0, T=1.0, t0=0.5, delta=0.25)
    with pytest.raises(ConstructionError):
        ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.5, delta=0.6)
    with pytest.raises(ConstructionError):
        ModelParams(rho1=1.0, rho2=1.0, T=1.0, t0=0.9, delta=0.2)


def test_validate_coefficients_pass_and_fail():
    g = build_grid(63, 64, 1.0)
    ok = validate_coefficients(EllipticCoefficients.from_callables(g, 1.0), mu=2.0)
    assert ok.passed

    bad = validate_coefficients(
        EllipticCoefficients.from_callables(g, lambda x: 0.1 + x), mu=2.0
    )
    assert not bad.passed
    assert bad.worst_index == 0  # a(0)=0.1 < 1/2 is the deepest violation
    assert bad.worst_value == pytest.approx(0.1)


def test_validate_coefficients_nan_is_data_error():
    g = build_grid(63, 64, 1.0)
    a = np.ones(g.nx + 2)
    a[10] = np.nan
    coeffs = EllipticCoefficients(a=a, b=np.zeros_like(a), c=np.zeros_like(a))
    with pytest.raises(DataError):
        validate_coefficients(coeffs, mu=2.0)


def test_geometry_nesting_errors_name_inclusion():
    ObservationGeometry()  # defaults are admissible
    with pytest.raises(ConstructionError, match="omega0 inside omega"):
        ObservationGeometry(omega=(0.4, 0.6), omega0=(0.3, 0.5))
    with pytest.raises(ConstructionError, match="omega inside d_prime"):
        ObservationGeometry(omega=(0.05, 0.6), omega0=(0.1, 0.5))
    with pytest.raises(ConstructionError, match="d_prime inside"):
        ObservationGeometry(d_prime=(0.1, 1.0))


def test_geometry_gamma_index():
    g = build_grid(31, 32, 1.0)
    assert ObservationGeometry(gamma_side="right").gamma_index(g) == g.nx + 1
    assert ObservationGeometry(gamma_side="left").gamma_index(g) == 0


def test_field_shape_and_bc_validation():
    g = build_grid(31, 32, 1.0)
    with pytest.raises(DataError):
        TimeSeriesField(values=np.zeros((5, 5)), grid=g)
    # probe fields with nonzero boundary values are allowed as 'general'
    f = TimeSeriesField.from_function(g, lambda x, t: t * x)
    assert f.values.shape == (g.nx + 2, g.nt + 1)
    with pytest.raises(DataError):
        TimeSeriesField.from_function(g, lambda x, t: t * x, bc_kind="homogeneous-dirichlet")


def test_window_indices_inclusive():
    g = build_grid(31, 256, 1.0)
    idx = window_indices(g.ts, 0.5, 0.25)
    assert g.ts[idx[0]] == pytest.approx(0.25)
    assert g.ts[idx[-1]] == pytest.approx(0.75)
