"""Finite-sample models, estimators and the Monte Carlo risk harness."""

from __future__ import annotations

from .estimators import (
    ESTIMATORS,
    EstimatorSpec,
    asymptotic_sd,
    estimate,
    gmm_from_summaries,
    plug_in_decision,
    sandwich_variance,
    score_statistic,
)
from .models import (
    BernoulliTrial,
    GaussianLocation,
    OveridMean,
    PathwiseReport,
    influence_and_sigma,
    pathwise_derivative_check,
)
from .montecarlo import (
    CHUNK_REPS,
    BaseDraws,
    ConvergenceRow,
    Difference,
    EfficiencyReport,
    RiskReport,
    base_draws,
    clear_cache,
    convergence_study,
    effect_grid,
    efficiency_comparison,
    limit_value,
    mc_tilted_risk,
    standardized_estimates,
    worst_case_risk,
)

__all__ = [
    "CHUNK_REPS",
    "ESTIMATORS",
    "BaseDraws",
    "BernoulliTrial",
    "ConvergenceRow",
    "Difference",
    "EfficiencyReport",
    "EstimatorSpec",
    "GaussianLocation",
    "OveridMean",
    "PathwiseReport",
    "RiskReport",
    "asymptotic_sd",
    "base_draws",
    "clear_cache",
    "convergence_study",
    "effect_grid",
    "efficiency_comparison",
    "estimate",
    "gmm_from_summaries",
    "influence_and_sigma",
    "limit_value",
    "mc_tilted_risk",
    "pathwise_derivative_check",
    "plug_in_decision",
    "sandwich_variance",
    "score_statistic",
    "standardized_estimates",
    "worst_case_risk",
]
