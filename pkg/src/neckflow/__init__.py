"""neckflow: numerical laboratory for gradient blow-up in thin insulated gaps.

A p-Laplace solver on the neck between two nearly touching m-convex
inclusions, explicit super/subsolution barrier verification, blow-up-rate
fitting against the 1/max(p-1, m) dichotomy, and the weighted circle
reduction that predicts higher-dimensional rates.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    GeometryError,
    NeckflowError,
    NumericError,
    ParameterError,
    SolverError,
    SweepError,
    WeightError,
)
from .geometry import (
    AdmissibilityReport,
    ConvexityBounds,
    GapGeometry,
    GeometryConstants,
    ProfileSpec,
    check_admissibility,
    compute_constants,
    estimated_bounds,
    eval_delta,
)
from .barriers import (
    BarrierSpec,
    BarrierVerdict,
    PointEvaluation,
    barrier_field,
    eval_barrier,
    linear_field,
    neumann_flux,
    p_laplace_of,
    radial_log_field,
    radial_power_field,
    subsolution,
    supersolution,
    verify_subsolution,
    verify_supersolution,
    zero_set_radius,
)
from .inequalities import monotonicity_pair, power_difference_ratio, power_ratio_bounds
from .neck_solver import (
    DiscreteField,
    HarnackResult,
    IterationTrace,
    SolverConfig,
    TransformedGrid,
    build_grid,
    grad_max,
    harnack_ratio,
    normalized_coefficients,
    oscillation,
    solve,
)
from .rates import (
    RateFit,
    SweepPlan,
    SweepResult,
    TheoryRates,
    fit_exponent,
    osc_decay_slope,
    run_sweep,
    sweep_fit,
    theory_exponents,
    thm1_ratio,
)
from .weighted import (
    SphereEigenResult,
    WeightedSolveResult,
    WeightFunction,
    alpha_from_lambda,
    check_weight,
    solve_weighted_disk,
    sphere_lambda1,
)

__all__ = [name for name in dir() if not name.startswith("_")]
