"""Delay Lyapunov matrices of continuous-time linear delay difference
equations x(t) = sum_j A_j x(t - h_j)."""

from .errors import (
    CriticalSystem,
    DelayLyapError,
    DimensionMismatch,
    HorizonTooLarge,
    NonFiniteInput,
    NonincreasingDelays,
    NonRationalInput,
    NotStable,
    OrderUnavailable,
    OutOfDomain,
    ParseError,
    RecursionDepthExceeded,
    SingularK0,
    SizeExceeded,
)
from .fundamental import (
    JumpTable,
    StepMatrixFunction,
    delta_k,
    discontinuity_instants,
    fundamental_matrix,
    simulate,
    simulate_cauchy,
    step_to_csv,
    trajectory_to_csv,
)
from .jump_analysis import (
    JumpPropertyReport,
    JumpSpectrum,
    TruncatedSeries,
    check_jump_properties,
    default_series_horizon,
    delta_u_prime,
    jumps_from_segments,
    u_prime_series,
)
from .lyapunov_build import (
    PiecewiseAffineMatrixFunction,
    ResidualReport,
    build_commensurate,
    build_single_delay,
    p_matrix,
    piecewise_to_csv,
    residuals,
)
from .oracle_verify import (
    CrossCheckReport,
    IntegralEstimate,
    cross_check,
    default_horizon,
    p_integral_oracle,
    u_integral_oracle,
)
from .rational_approx import (
    ApproximationStep,
    ContinuedFraction,
    approximate_system,
    continued_fraction,
    convergent,
    convergents,
    u_sequence,
)
from .system_model import (
    CommensurateForm,
    DelaySystem,
    InitialFunction,
    StabilityReport,
    ValidatedSystem,
    WeightMatrix,
    k0,
    load_system,
    stability_check,
    system_from_json,
    system_to_json,
    to_commensurate,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ApproximationStep",
    "CommensurateForm",
    "ContinuedFraction",
    "CriticalSystem",
    "CrossCheckReport",
    "DelayLyapError",
    "DelaySystem",
    "DimensionMismatch",
    "HorizonTooLarge",
    "InitialFunction",
    "IntegralEstimate",
    "JumpPropertyReport",
    "JumpSpectrum",
    "JumpTable",
    "NonFiniteInput",
    "NonRationalInput",
    "NonincreasingDelays",
    "NotStable",
    "OrderUnavailable",
    "OutOfDomain",
    "ParseError",
    "PiecewiseAffineMatrixFunction",
    "RecursionDepthExceeded",
    "ResidualReport",
    "SingularK0",
    "SizeExceeded",
    "StabilityReport",
    "StepMatrixFunction",
    "TruncatedSeries",
    "ValidatedSystem",
    "WeightMatrix",
    "build_commensurate",
    "build_single_delay",
    "check_jump_properties",
    "continued_fraction",
    "convergent",
    "convergents",
    "cross_check",
    "default_horizon",
    "default_series_horizon",
    "delta_k",
    "delta_u_prime",
    "discontinuity_instants",
    "fundamental_matrix",
    "jumps_from_segments",
    "k0",
    "load_system",
    "p_integral_oracle",
    "p_matrix",
    "piecewise_to_csv",
    "residuals",
    "simulate",
    "simulate_cauchy",
    "stability_check",
    "step_to_csv",
    "system_from_json",
    "system_to_json",
    "to_commensurate",
    "trajectory_to_csv",
    "u_integral_oracle",
    "u_prime_series",
    "u_sequence",
    "validate",
]
