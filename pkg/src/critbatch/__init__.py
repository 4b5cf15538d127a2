"""Unified adaptive optimizer, batch-size step bounds and critical-batch sweeps."""

from .oracle import (
    FiniteSumMLP,
    NoisyQuadratic,
    NoisyRosenbrock,
    OracleStats,
    estimate_oracle_stats,
    full_gradient,
    make_problem,
    make_rng,
    minibatch_gradient,
    stochastic_gradient,
)
from .optimizer import (
    ALL_RULES,
    HyperParams,
    OptimizerState,
    Rule,
    StopCondition,
    Trajectory,
    clamp,
    get_rule,
    run,
    step,
    update_preconditioner,
)
from .bounds import (
    BoundConstants,
    LowerBoundInputs,
    UpperBoundInputs,
    critical_batch_lower,
    critical_batch_upper,
    curve_table,
    fit_condition_residuals,
    lower_constants,
    lower_steps,
    upper_constants,
    upper_steps,
)
from .diagnostics import (
    assumption_audit,
    decompose_v,
    momentum_bound_check,
    pathwise_identity_residuals,
)
from .sweep import (
    SweepRecord,
    detect_perfect_scaling,
    estimate_critical_batch,
    fit_rational,
    sfo_sweep,
    steps_to_threshold,
    summarize,
)

__version__ = "0.1.0"
