"""Numerical laboratory for a diffusion model with first- and half-order
time derivatives: forward solves, operator transforms, weighted-inequality
scans, coefficient/source recovery, and stability ensembles."""

from .errors import (
    AssumptionError,
    ConfigError,
    ConstructionError,
    DataError,
    DomainError,
    FracinvError,
    SizingError,
    SolverError,
)
from .carleman import (
    LEMMA_IDS,
    CarlemanWeights,
    DistanceFunction,
    RatioScanResult,
    build_d1,
    build_d2,
    carleman_scan,
    check_distance_invariants,
    default_test_function,
    eval_weights,
    make_weights,
    weighted_integral,
)
from .fracops import (
    apply_L,
    caputo,
    caputo_half_of_derivative,
    discrete_sobolev_norm,
    fd_derivative,
    gamma_fn,
    l1_weights,
)
from .forward import (
    ConvergenceResult,
    ForwardProblem,
    convergence_study,
    manufactured_case,
    solve_forward,
)
from .inversion import (
    InversionResult,
    LinearObservationMap,
    ObservationSet,
    SpatialBasis,
    add_noise,
    assemble_forward_map,
    diffusion_basis,
    discrepancy_alpha,
    invert_diffusion_coefficient,
    invert_source,
    invert_zeroth_coefficient,
    observe,
    source_basis,
)
from .stability import (
    AGGREGATE_ORDERS,
    EnsembleSpec,
    StabilityRecord,
    aggregate_B,
    aggregate_I,
    run_stability_ensemble,
)
from .transform import (
    TransformOutput,
    diffusion_expansion_Ftilde,
    second_order_residual,
    source_expansion_F,
    transform_rhs,
)
from .model import (
    CoefficientCheck,
    EllipticCoefficients,
    Grid,
    ModelParams,
    ObservationGeometry,
    TimeSeriesField,
    build_grid,
    validate_coefficients,
    window_indices,
)

__version__ = "0.1.0"
