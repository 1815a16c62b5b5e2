"""Combined GLM plus hierarchical credibility fitting.

Alternates a weighted GLM (fixed effects, with the current random-effect
estimates entering as offsets) with a hierarchical credibility fit on
suitably transformed data, until the random-effect estimates reach a
joint fixed point.

tweedie-log runs the multiplicative form: the covariate effect
``gamma = exp(x' beta)`` rescales the response (``y / gamma``) and weight
(``w * gamma**(2 - p)``) so the transformed data satisfy the credibility
model assumptions; the industry and branch factors are the ratios of the
credibility level predictors.  gaussian-identity runs the additive
analogue on the covariate-adjusted residual response with untransformed
weights.

The multiplicative factors are anchored at the credibility collective
mean (the industry factor is the industry predictor over the collective
mean).  Because the credibility predictors satisfy the exposure-weighted
balance identity exactly, the intercept-only fit reduces to the plain
hierarchical credibility model: the factors coincide by construction and
the additive predictions coincide through the balance identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .credibility import CredibilityFit, fit_jewell
from .errors import DataValidationError, NumericalError
from .glm import GlmFit, PowerProfile, glm_aic, irls_fit, profile_power
from .portfolio import DesignMatrix, FamilySpec, Portfolio, build_design

GLMC_TOL = 1e-8
GLMC_MAX_ITER = 100


@dataclass(frozen=True)
class GlmcFit:
    """Converged joint state of the combined fit.

    ``u_industry`` and ``u_branch`` are multiplicative factors for
    tweedie-log (ratios of credibility predictors, all positive) and
    additive shifts for gaussian-identity.  ``base_level`` is the
    collective mean the factors are anchored at: the credibility estimate
    on the transformed scale for tweedie-log, the final GLM intercept for
    gaussian-identity.  ``trajectory`` records the per-cycle maximum
    relative change of the random-effect estimates.
    """

    glm: GlmFit
    credibility: CredibilityFit
    u_industry: dict[str, float]
    u_branch: dict[tuple[str, str], float]
    iterations: int
    converged: bool
    trajectory: tuple[float, ...]
    family: str
    power: float
    base_level: float
    covariates: tuple[str, ...]
    covariate_levels: dict[str, tuple[str, ...]]
    power_profile: PowerProfile | None = None

    @property
    def is_tweedie(self) -> bool:
        return self.family == FamilySpec.TWEEDIE


def transform_for_credibility(portfolio: Portfolio, gamma, p: float):
    """Rescale response and weight by the covariate effect.

    Returns ``(response_override, weight_override)`` with
    ``y / gamma`` and ``w * gamma**(2 - p)``; the transformed pair
    satisfies the hierarchical credibility model's moment assumptions.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (len(portfolio),):
        raise DataValidationError("gamma length must match observation count")
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise DataValidationError("gamma must be strictly positive and finite")
    response = portfolio.responses / gamma
    weight = portfolio.exposures * gamma ** (2.0 - p)
    return response, weight


def _covariate_effect(design: DesignMatrix, fit: GlmFit) -> np.ndarray:
    """Non-intercept linear predictor contribution, per observation."""
    beta = fit.coefficient_vector()
    beta = beta.copy()
    beta[0] = 0.0  # intercept excluded; it is the multiplicative base
    return design.matrix @ beta


def _offsets(portfolio: Portfolio, u_ind: np.ndarray, u_br: np.ndarray,
             multiplicative: bool) -> np.ndarray:
    if multiplicative:
        per_branch = np.log(u_br) + np.log(u_ind)[portfolio.branch_industry]
    else:
        per_branch = u_br + u_ind[portfolio.branch_industry]
    return per_branch[portfolio.obs_branch]


def fit_glmc(portfolio: Portfolio, covariate_selection, family: FamilySpec, *,
             tol: float = GLMC_TOL, max_iter: int = GLMC_MAX_ITER,
             damping: float = 0.0, final_reprofile: bool = False,
             irls_tol: float = 1e-9, irls_max_iter: int = 200) -> GlmcFit:
    """Run the iterative combined fit to convergence.

    Each cycle fits the GLM with the current random-effect offsets and
    the exposures as weights, transforms the data by the fitted covariate
    effect, refits the hierarchical credibility model on the transformed
    data, and updates the industry and branch factors from the credibility
    level predictors.  For a tweedie-log family with a profiling grid the
    power is profiled on the first cycle and then frozen
    (``final_reprofile=True`` re-profiles once after convergence).

    ``damping`` in [0, 1) blends each update with the previous state
    (geometrically for multiplicative factors) for portfolios that
    oscillate.  Non-convergence returns the last state with
    ``converged=False`` rather than raising.
    """
    if not 0.0 <= damping < 1.0:
        raise DataValidationError("damping must lie in [0, 1)")
    if max_iter < 1:
        raise DataValidationError("max_iter must be at least 1")
    design = build_design(portfolio, covariate_selection)
    y = portfolio.responses
    w = portfolio.exposures
    multiplicative = family.is_tweedie
    if multiplicative and np.any(y < 0):
        raise DataValidationError("tweedie-log requires non-negative responses")

    n_ind = len(portfolio.industry_ids)
    n_br = len(portfolio.branch_keys)
    if multiplicative:
        u_ind = np.ones(n_ind)
        u_br = np.ones(n_br)
    else:
        u_ind = np.zeros(n_ind)
        u_br = np.zeros(n_br)

    profile: PowerProfile | None = None
    grid = family.power_grid() if multiplicative else ()
    power = grid[0] if len(grid) == 1 else 0.0

    glm: GlmFit | None = None
    cred: CredibilityFit | None = None
    trajectory: list[float] = []
    converged = False
    warm = None
    iterations = 0

    for iterations in range(1, max_iter + 1):
        offset = _offsets(portfolio, u_ind, u_br, multiplicative)
        if multiplicative and len(grid) > 1 and profile is None:
            profile = profile_power(design, y, w, offset, grid,
                                    tol=irls_tol, max_iter=irls_max_iter)
            power = profile.power
        fam_fixed = (FamilySpec(FamilySpec.TWEEDIE, power) if multiplicative
                     else FamilySpec(FamilySpec.GAUSSIAN))
        try:
            glm = irls_fit(design, y, w, offset, fam_fixed,
                           tol=irls_tol, max_iter=irls_max_iter, start=warm)
        except NumericalError as exc:
            raise NumericalError(f"GLM failed inside cycle {iterations}: {exc}")
        warm = glm.coefficient_vector()

        effect = _covariate_effect(design, glm)
        if multiplicative:
            gamma = np.exp(effect)
            resp_t, wt_t = transform_for_credibility(portfolio, gamma, power)
        else:
            resp_t, wt_t = y - effect, w
        cred = fit_jewell(portfolio, response_override=resp_t,
                          weight_override=wt_t, allow_degenerate=True)

        v_ind = np.array([cred.industry_predictor[ind] for ind in portfolio.industry_ids])
        v_br = np.array([cred.branch_predictor[key] for key in portfolio.branch_keys])
        if multiplicative:
            if cred.mu_hat <= 0 or np.any(v_ind <= 0) or np.any(v_br <= 0):
                raise NumericalError(
                    f"non-positive credibility level predictor at cycle {iterations}; "
                    "the multiplicative factors are undefined"
                )
            new_ind = v_ind / cred.mu_hat
            new_br = v_br / v_ind[portfolio.branch_industry]
            if damping > 0:
                new_ind = new_ind ** (1 - damping) * u_ind ** damping
                new_br = new_br ** (1 - damping) * u_br ** damping
            delta = max(
                float(np.max(np.abs(new_ind - u_ind) / u_ind)),
                float(np.max(np.abs(new_br - u_br) / u_br)),
            )
        else:
            new_ind = v_ind - cred.mu_hat
            new_br = v_br - v_ind[portfolio.branch_industry]
            if damping > 0:
                new_ind = (1 - damping) * new_ind + damping * u_ind
                new_br = (1 - damping) * new_br + damping * u_br
            scale = max(abs(cred.mu_hat), 1e-12)
            delta = max(
                float(np.max(np.abs(new_ind - u_ind))),
                float(np.max(np.abs(new_br - u_br))),
            ) / scale
        trajectory.append(delta)
        u_ind, u_br = new_ind, new_br
        if delta < tol:
            converged = True
            break

    # Refit once with the final factors so the reported GLM's offsets are
    # exactly the logs (or values) of the reported random effects.
    offset = _offsets(portfolio, u_ind, u_br, multiplicative)
    if multiplicative and final_reprofile and len(grid) > 1:
        profile = profile_power(design, y, w, offset, grid,
                                tol=irls_tol, max_iter=irls_max_iter, start=warm)
        power = profile.power
    fam_fixed = (FamilySpec(FamilySpec.TWEEDIE, power) if multiplicative
                 else FamilySpec(FamilySpec.GAUSSIAN))
    glm = irls_fit(design, y, w, offset, fam_fixed,
                   tol=irls_tol, max_iter=irls_max_iter, start=warm)

    base = cred.mu_hat if multiplicative else glm.intercept
    return GlmcFit(
        glm=glm,
        credibility=cred,
        u_industry={ind: float(u_ind[j]) for j, ind in enumerate(portfolio.industry_ids)},
        u_branch={key: float(u_br[b]) for b, key in enumerate(portfolio.branch_keys)},
        iterations=iterations,
        converged=converged,
        trajectory=tuple(trajectory),
        family=family.family,
        power=power,
        base_level=float(base),
        covariates=tuple(n for n in portfolio.schema.names if n in set(covariate_selection)),
        covariate_levels={
            n: portfolio.schema.levels[n]
            for n in portfolio.schema.names if n in set(covariate_selection)
        },
        power_profile=profile,
    )


def _covariate_term(fit: GlmcFit, covariates: dict[str, str]) -> float:
    """Sum of the fitted level coefficients for one record's covariates."""
    total = 0.0
    for name in fit.covariates:
        levels = fit.covariate_levels[name]
        level = covariates.get(name, levels[0])
        if level not in levels:
            raise DataValidationError(
                f"unknown level {level!r} for covariate {name!r}; "
                "fixed effects have no new-business fallback"
            )
        if level != levels[0]:
            total += fit.glm.coefficients[f"{name}={level}"]
    return total


def predict_glmc(fit: GlmcFit, industry_id: str, branch_id: str,
                 covariates: dict[str, str] | None = None) -> float:
    """Predicted damage rate for one record.

    tweedie-log composes ``base * exp(covariate effect) * industry factor
    * branch factor``; gaussian-identity adds the same pieces.  Unseen
    branches or industries fall back to factor one (zero for the additive
    form), mirroring zero-credibility shrinkage; unknown covariate levels
    are an error.
    """
    covariates = covariates or {}
    effect = _covariate_term(fit, covariates)
    if fit.is_tweedie:
        u_j = fit.u_industry.get(industry_id, 1.0)
        u_jk = fit.u_branch.get((industry_id, branch_id), 1.0)
        return fit.base_level * math.exp(effect) * u_j * u_jk
    u_j = fit.u_industry.get(industry_id, 0.0)
    u_jk = fit.u_branch.get((industry_id, branch_id), 0.0)
    return fit.base_level + effect + u_j + u_jk


def predict_glmc_portfolio(fit: GlmcFit, portfolio: Portfolio) -> np.ndarray:
    """Vector of predictions for every observation of a portfolio."""
    return np.array([
        predict_glmc(
            fit, obs.industry_id, obs.branch_id,
            {name: level for name, level in obs.covariates},
        )
        for obs in portfolio.observations
    ])


def glmc_aic(fit: GlmcFit) -> float:
    """AIC of the final-cycle GLM (random effects enter as constants)."""
    return glm_aic(fit.glm)


def rebalanced_glmc(fit: GlmcFit, alpha: float) -> GlmcFit:
    """Multiplicative fit with all predictions scaled by ``alpha``.

    The base level absorbs the correction and the GLM intercept shifts by
    ``log(alpha)`` so both views stay consistent.  Additive (identity
    link) fits cannot be rebalanced this way.
    """
    if not fit.is_tweedie:
        raise DataValidationError("rebalancing is defined for log-link fits only")
    if not alpha > 0:
        raise DataValidationError("alpha must be positive")
    from .glm import rebalanced_glm

    return replace(
        fit,
        glm=rebalanced_glm(fit.glm, alpha),
        base_level=fit.base_level * alpha,
    )
