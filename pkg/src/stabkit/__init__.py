"""Scalar nonlinear difference equations: equilibria, stability certificates and stabilizing feedback."""

from __future__ import annotations

__version__ = "0.1.0"

from .control import (
    COMBINED,
    NOMINAL_ONLY,
    ClosedLoop,
    GainSchedule,
    close_loop,
    synthesize_combined,
    synthesize_nominal_only,
    verify_gain_trace,
    verify_shift_bound,
    verify_smallness,
)
from .equilibria import (
    ESTIMATE_CASES,
    Classification,
    EquilibriumPoint,
    LinearEstimate,
    OrderHypothesisError,
    OscillationPattern,
    check_equilibrium,
    detect_oscillation,
    estimate_error_curve,
    find_equilibria,
    jacobian,
    linear_estimate,
)
from .expr import (
    ExprDomainError,
    ExprError,
    ExprSyntaxError,
    LaggedExpr,
    LagOutOfRangeError,
    evaluate,
    parse,
    to_text,
)
from .stability import (
    GrowthCertificate,
    RegionSpec,
    StabilityVerdict,
    assess,
    check_invariance,
    classify,
    contraction_trace,
    growth_certificate,
    sample_region,
)
from .system import (
    ComponentMap,
    SystemBundle,
    Variant,
    VectorMap,
    associate_map,
    iterate,
    lift_additive,
    lift_leading,
    order_compatibility,
    scalar_run,
)
