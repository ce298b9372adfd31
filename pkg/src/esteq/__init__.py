"""esteq: solvers, checkers, and Monte Carlo suites for penalized
estimating equations."""

from .conditions import (
    ConditionReport,
    check_conditions,
    envelope_max_eig,
    incoherence_alpha,
    lambda_threshold,
    sigma_eta,
    uniqueness_margin,
)
from .data import Dataset, load_csv, save_csv
from .harness import McSummary, Scenario, generate, ks_distance, rate_scan, run_monte_carlo
from .inference import (
    InferenceReport,
    confidence_intervals,
    infer,
    normal_quantile,
    sandwich_covariance,
    standardize,
    standardize_penalized,
)
from .models import (
    EstimatingModel,
    StackedModel,
    evaluate_I_hat,
    evaluate_J_hat,
    evaluate_phi_bar,
    mean_model,
    stack_multisample,
    stack_stepwise,
)
from .penalties import (
    FusionMap,
    Penalty,
    SubdiffRectangle,
    fusion_reparametrize,
    penalty_value,
    scalar_threshold,
    subdifferential,
    weak_convexity_mu,
)
from .solvers import (
    SolveOptions,
    SolveResult,
    WitnessResult,
    primal_dual_witness,
    solve_penalized,
    solve_sequential,
    solve_unpenalized,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionReport",
    "Dataset",
    "EstimatingModel",
    "FusionMap",
    "InferenceReport",
    "McSummary",
    "Penalty",
    "Scenario",
    "SolveOptions",
    "SolveResult",
    "StackedModel",
    "SubdiffRectangle",
    "WitnessResult",
    "check_conditions",
    "confidence_intervals",
    "envelope_max_eig",
    "evaluate_I_hat",
    "evaluate_J_hat",
    "evaluate_phi_bar",
    "fusion_reparametrize",
    "generate",
    "incoherence_alpha",
    "infer",
    "ks_distance",
    "lambda_threshold",
    "load_csv",
    "mean_model",
    "normal_quantile",
    "penalty_value",
    "primal_dual_witness",
    "rate_scan",
    "run_monte_carlo",
    "sandwich_covariance",
    "save_csv",
    "scalar_threshold",
    "sigma_eta",
    "solve_penalized",
    "solve_sequential",
    "solve_unpenalized",
    "stack_multisample",
    "stack_stepwise",
    "standardize",
    "standardize_penalized",
    "subdifferential",
    "uniqueness_margin",
    "weak_convexity_mu",
]
