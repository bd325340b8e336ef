"""Equilibrium strategies for time-inconsistent LQ control of forward-backward SDEs.

The package integrates the coupled equilibrium Riccati system, computes
closed-loop equilibrium gains by a piecewise contraction iteration in one
dimension, and verifies candidate equilibria by constraint checks,
characterization residuals, and Monte-Carlo spike-variation tests.
"""

from .equilibrium import (
    AssumptionViolatedError,
    EquilibriumSolution,
    NoConvergenceError,
    NonContractiveError,
    SolverConfig,
    fixed_point_map,
    p1_tilde_from_theta,
    second_moment_factor,
    solve_equilibrium,
)
from .fields import OneTimeField, Strategy, TimeGrid, TwoTimeField
from .problem import (
    AssumptionReport,
    Coefficients,
    Dimensions,
    ProblemSpec,
    ValidationReport,
    Weights,
    check_lipschitz_in_t,
    check_one_dim_positivity,
    validate,
)
from .riccati import (
    ConstraintReport,
    characterization_residual,
    check_constraints,
    feedback_map,
    solve_p1,
    solve_p2,
    solve_p3,
)
from .simulate import (
    PathBundle,
    SimConfig,
    SpikeSpec,
    bsde_residual_check,
    build_controls,
    evaluate_cost,
    perturbation_scaling,
    simulate_closed_loop,
    simulate_spike,
    spike_test,
)
from .verify import suite_classical_reduction, suite_equilibrium, suite_example_2_5

__version__ = "0.1.0"

__all__ = [
    "TimeGrid",
    "OneTimeField",
    "TwoTimeField",
    "Strategy",
    "Dimensions",
    "Coefficients",
    "Weights",
    "ProblemSpec",
    "ValidationReport",
    "AssumptionReport",
    "validate",
    "check_lipschitz_in_t",
    "check_one_dim_positivity",
    "solve_p1",
    "solve_p2",
    "solve_p3",
    "feedback_map",
    "check_constraints",
    "characterization_residual",
    "ConstraintReport",
    "SolverConfig",
    "EquilibriumSolution",
    "solve_equilibrium",
    "fixed_point_map",
    "second_moment_factor",
    "p1_tilde_from_theta",
    "NonContractiveError",
    "NoConvergenceError",
    "AssumptionViolatedError",
    "SimConfig",
    "SpikeSpec",
    "PathBundle",
    "simulate_closed_loop",
    "simulate_spike",
    "build_controls",
    "evaluate_cost",
    "spike_test",
    "perturbation_scaling",
    "bsde_residual_check",
    "suite_example_2_5",
    "suite_classical_reduction",
    "suite_equilibrium",
    "__version__",
]
