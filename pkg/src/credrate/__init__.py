"""Ratemaking engine for hierarchically structured insurance portfolios.

Fits the distribution-free hierarchical credibility model, weighted
Tweedie/Gaussian GLMs, and their iterative combination; evaluates and
selects pricing models with actuarial lift metrics.
"""

from .claims import CapConfig, RawClaimRecord, cap_and_aggregate
from .credibility import (
    CredibilityFit,
    VarianceComponents,
    estimate_variance_components,
    fit_jewell,
    predict_jewell,
    weighted_branch_means,
)
from .errors import (
    CredrateError,
    DataValidationError,
    DegenerateHierarchyError,
    NumericalError,
)
from .glm import GlmFit, PowerProfile, glm_aic, irls_fit, profile_power
from .glmc import (
    GlmcFit,
    fit_glmc,
    glmc_aic,
    predict_glmc,
    predict_glmc_portfolio,
    transform_for_credibility,
)
from .metrics import (
    EvaluationReport,
    PremiumDiff,
    balance_alpha,
    evaluate_predictions,
    lorenz_gini,
    loss_ratio,
    rebalance_intercept,
    relative_premium_diff,
)
from .portfolio import (
    MISSING,
    CovariateSchema,
    DesignMatrix,
    FamilySpec,
    Observation,
    Portfolio,
    build_design,
    validate_portfolio,
)
from .selection import (
    Clustering,
    ClusterSearchResult,
    SubsetEntry,
    best_subset,
    cluster_1d,
    cluster_grid_search,
)
from .simulate import ExposureLaw, SimulationSpec, SimulationTruth, simulate_portfolio
from .tweedie import tweedie_log_density, tweedie_log_likelihood

__version__ = "0.1.0"

__all__ = [
    "CapConfig",
    "Clustering",
    "ClusterSearchResult",
    "CovariateSchema",
    "CredibilityFit",
    "CredrateError",
    "DataValidationError",
    "DegenerateHierarchyError",
    "DesignMatrix",
    "EvaluationReport",
    "ExposureLaw",
    "FamilySpec",
    "GlmFit",
    "GlmcFit",
    "MISSING",
    "NumericalError",
    "Observation",
    "Portfolio",
    "PowerProfile",
    "PremiumDiff",
    "RawClaimRecord",
    "SimulationSpec",
    "SimulationTruth",
    "SubsetEntry",
    "VarianceComponents",
    "balance_alpha",
    "best_subset",
    "build_design",
    "cap_and_aggregate",
    "cluster_1d",
    "cluster_grid_search",
    "estimate_variance_components",
    "evaluate_predictions",
    "fit_glmc",
    "fit_jewell",
    "glm_aic",
    "glmc_aic",
    "irls_fit",
    "lorenz_gini",
    "loss_ratio",
    "predict_glmc",
    "predict_glmc_portfolio",
    "predict_jewell",
    "profile_power",
    "rebalance_intercept",
    "relative_premium_diff",
    "simulate_portfolio",
    "transform_for_credibility",
    "tweedie_log_density",
    "tweedie_log_likelihood",
    "validate_portfolio",
    "weighted_branch_means",
]
