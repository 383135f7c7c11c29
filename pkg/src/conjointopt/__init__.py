"""Variance-constrained optimal stochastic interventions on factorial designs.

The package estimates pairwise-choice and direct-outcome models on conjoint
data, solves for penalized optimal intervention distributions (closed form
where available, gradient ascent otherwise), attaches delta-method or
stacked-moment sandwich inference, solves a two-group adversarial selection
game with a grid oracle for verification, and ships a Monte Carlo harness
plus a deterministic CLI.
"""

from .errors import (
    CannotSplitError,
    ConjointOptError,
    DivergenceUndefinedError,
    GridTooLargeError,
    InferenceFailureError,
    InsufficientDataError,
    InvalidParameterError,
    LambdaTooSmallError,
    NumericalError,
    NumericalFailureError,
    ParseError,
    PositivityError,
    SchemaError,
    SingularFitError,
    SupportTooLargeError,
    ValidationError,
)
from .design import (
    ConjointDesign,
    FactorSpec,
    Profile,
    ProfileDistribution,
    SoftmaxParams,
    design_from_json,
    design_to_json,
    distribution_to_softmax,
    enumerate_support,
    load_design,
    profile_probability,
    save_design,
    softmax_jacobian_factor,
    softmax_to_distribution,
    support_array,
    support_probabilities,
)
from .dataio import (
    ForcedChoiceDataset,
    ProfileSample,
    TaskRecord,
    as_profile_sample,
    fold_assignments,
    load_dataset,
    split_dataset,
    write_dataset,
)
from .model import (
    FitSpec,
    build_difference_design_row,
    build_profile_design_row,
    OutcomeModel,
    fit_outcome_model,
    fit_profile_model,
    load_model,
    model_from_json,
    model_to_json,
    save_model,
)
from .estim import (
    PenaltyComparison,
    VarianceBoundInputs,
    VarianceBoundResult,
    cell_stats,
    compare_penalties,
    divergence_gradient,
    estimate_variance_bound,
    q_gradient_pi,
    q_parametric,
    q_weighting,
    strategic_divergence,
    variance_bound,
)
from .closed import (
    ClosedFormSolution,
    solve_binary_nonchoice,
    solve_for_coding,
    solve_forced_choice_average_case,
    solve_multilevel_nonchoice,
)
from .ascent import (
    AscentConfig,
    LambdaScalingReport,
    OneStepConfig,
    OneStepResult,
    PenaltyConfig,
    SGAConfig,
    StrategyEstimate,
    TwoStepConfig,
    TwoStepResult,
    check_lambda_scaling,
    gradient_parametric,
    gradient_weighting,
    maximize,
    maximize_weighting,
    objective_parametric,
    objective_weighting,
    one_step_estimate,
    penalty_gradient_pi,
    penalty_value,
    solve_profile,
    stochastic_ascent,
    two_step_estimate,
)
from .infer import (
    InferenceResult,
    SandwichResult,
    delta_method,
    fixed_intervention_sandwich,
    m_estimation_sandwich,
    propagate_covariance,
)
from .game import (
    EquilibriumInference,
    EquilibriumResult,
    GameConfig,
    GridOracleResult,
    InstitutionSpec,
    PayoffEvaluator,
    deviation_check,
    equilibrium_delta,
    grid_oracle,
    payoff,
    solve_equilibrium,
)
from .mc import (
    AdversarialDGP,
    AverageCaseDGP,
    MetricsRow,
    adversarial_study,
    average_case_study,
    metrics_csv_text,
    run_adversarial,
    run_average_case,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarialDGP",
    "AscentConfig",
    "AverageCaseDGP",
    "CannotSplitError",
    "ClosedFormSolution",
    "ConjointDesign",
    "ConjointOptError",
    "DivergenceUndefinedError",
    "EquilibriumInference",
    "EquilibriumResult",
    "FactorSpec",
    "FitSpec",
    "ForcedChoiceDataset",
    "GameConfig",
    "GridOracleResult",
    "GridTooLargeError",
    "InferenceFailureError",
    "InferenceResult",
    "InstitutionSpec",
    "InsufficientDataError",
    "InvalidParameterError",
    "LambdaScalingReport",
    "LambdaTooSmallError",
    "MetricsRow",
    "NumericalError",
    "NumericalFailureError",
    "OneStepConfig",
    "OneStepResult",
    "OutcomeModel",
    "ParseError",
    "PayoffEvaluator",
    "PenaltyComparison",
    "PenaltyConfig",
    "PositivityError",
    "Profile",
    "ProfileDistribution",
    "ProfileSample",
    "SGAConfig",
    "SandwichResult",
    "SchemaError",
    "SingularFitError",
    "SoftmaxParams",
    "StrategyEstimate",
    "SupportTooLargeError",
    "TaskRecord",
    "TwoStepConfig",
    "TwoStepResult",
    "ValidationError",
    "VarianceBoundInputs",
    "VarianceBoundResult",
    "adversarial_study",
    "as_profile_sample",
    "average_case_study",
    "cell_stats",
    "check_lambda_scaling",
    "compare_penalties",
    "delta_method",
    "design_from_json",
    "design_to_json",
    "deviation_check",
    "distribution_to_softmax",
    "divergence_gradient",
    "enumerate_support",
    "equilibrium_delta",
    "estimate_variance_bound",
    "build_difference_design_row",
    "build_profile_design_row",
    "fit_outcome_model",
    "fit_profile_model",
    "fixed_intervention_sandwich",
    "propagate_covariance",
    "fold_assignments",
    "gradient_parametric",
    "gradient_weighting",
    "grid_oracle",
    "load_dataset",
    "load_design",
    "load_model",
    "m_estimation_sandwich",
    "maximize",
    "maximize_weighting",
    "metrics_csv_text",
    "model_from_json",
    "model_to_json",
    "objective_parametric",
    "objective_weighting",
    "one_step_estimate",
    "payoff",
    "penalty_gradient_pi",
    "penalty_value",
    "profile_probability",
    "q_gradient_pi",
    "q_parametric",
    "q_weighting",
    "run_adversarial",
    "run_average_case",
    "save_design",
    "save_model",
    "softmax_jacobian_factor",
    "softmax_to_distribution",
    "support_array",
    "support_probabilities",
    "solve_binary_nonchoice",
    "solve_equilibrium",
    "solve_for_coding",
    "solve_forced_choice_average_case",
    "solve_multilevel_nonchoice",
    "solve_profile",
    "split_dataset",
    "stochastic_ascent",
    "strategic_divergence",
    "two_step_estimate",
    "variance_bound",
    "write_dataset",
    "write_metrics_csv",
]
