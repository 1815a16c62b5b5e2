"""Distribution-free two-level hierarchical credibility.

Fits the additive shrinkage model in which every branch mean is pulled
toward its industry mean and every industry mean toward the collective
mean, with the amount of pooling controlled by moment-based variance
components at the observation, branch, and industry levels.

The three variance estimators are computed in order (within, branch,
industry): the branch-level estimator consumes the within estimate and
the industry-level estimator consumes the branch estimate.  Negative raw
values are clipped to zero and flagged rather than aborting the fit.

All grouped sums use exact compensated accumulation (``math.fsum``),
because real portfolios mix exposures spanning many orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, DegenerateHierarchyError
from .portfolio import Portfolio


def _grouped_fsum(values: np.ndarray, order: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Exact per-group sums; ``order``/``bounds`` come from the group index."""
    sorted_vals = values[order]
    out = np.empty(len(bounds) - 1)
    for g in range(len(bounds) - 1):
        out[g] = math.fsum(sorted_vals[bounds[g]:bounds[g + 1]])
    return out


class _GroupIndex:
    """Sorted-order view of observations grouped by branch, branches by industry."""

    def __init__(self, portfolio: Portfolio):
        self.n_branches = len(portfolio.branch_keys)
        self.n_industries = len(portfolio.industry_ids)
        self.obs_branch = portfolio.obs_branch
        self.branch_industry = portfolio.branch_industry
        self.order = np.argsort(self.obs_branch, kind="stable")
        sorted_codes = self.obs_branch[self.order]
        self.bounds = np.searchsorted(sorted_codes, np.arange(self.n_branches + 1))
        self.counts = np.diff(self.bounds)
        self.ind_order = np.argsort(self.branch_industry, kind="stable")
        sorted_ind = self.branch_industry[self.ind_order]
        self.ind_bounds = np.searchsorted(sorted_ind, np.arange(self.n_industries + 1))
        self.branches_per_industry = np.diff(self.ind_bounds)

    def branch_sums(self, values: np.ndarray) -> np.ndarray:
        return _grouped_fsum(values, self.order, self.bounds)

    def industry_sums(self, branch_values: np.ndarray) -> np.ndarray:
        return _grouped_fsum(branch_values, self.ind_order, self.ind_bounds)


@dataclass(frozen=True)
class VarianceComponents:
    """Moment estimates of the three nested variance parameters.

    ``clipped`` records, per component (within, branch, industry), whether
    the raw estimate came out negative and was clipped to zero.
    """

    sigma2: float
    sigma2_branch: float
    sigma2_industry: float
    clipped: tuple[bool, bool, bool] = (False, False, False)


@dataclass(frozen=True)
class CredibilityFit:
    """Fitted hierarchical credibility state.

    Branch-keyed maps use ``(industry_id, branch_id)`` pairs.  The branch
    predictor is an exact convex combination of the branch mean and the
    industry predictor; the industry predictor is an exact convex
    combination of the credibility-weighted industry mean and the
    collective mean.  ``mu_fallback`` flags the degenerate case where all
    industry credibility factors are zero and the collective mean falls
    back to the credibility-weighted grand mean.
    """

    mu_hat: float
    components: VarianceComponents
    branch_means: dict[tuple[str, str], float]
    branch_weights: dict[tuple[str, str], float]
    branch_credibility: dict[tuple[str, str], float]
    industry_credibility: dict[str, float]
    industry_zmean: dict[str, float]
    industry_predictor: dict[str, float]
    branch_predictor: dict[tuple[str, str], float]
    mu_fallback: bool = False


def _resolve_overrides(portfolio, response_override, weight_override):
    y = portfolio.responses if response_override is None else np.asarray(response_override, dtype=float)
    w = portfolio.exposures if weight_override is None else np.asarray(weight_override, dtype=float)
    if y.shape != (len(portfolio),) or w.shape != (len(portfolio),):
        raise DataValidationError("override length does not match observation count")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("responses must be finite")
    if not (np.all(np.isfinite(w)) and np.all(w > 0)):
        raise DataValidationError("weights must be positive and finite")
    return y, w


def weighted_branch_means(portfolio: Portfolio, response_override=None,
                          weight_override=None) -> dict[tuple[str, str], tuple[float, float]]:
    """Weighted average response and total weight per branch.

    Returns a map ``(industry_id, branch_id) -> (mean, total_weight)``.
    Optional overrides replace the stored responses/exposures, matching
    the observation order.
    """
    y, w = _resolve_overrides(portfolio, response_override, weight_override)
    index = _GroupIndex(portfolio)
    sw = index.branch_sums(w)
    swy = index.branch_sums(w * y)
    return {
        key: (swy[b] / sw[b], sw[b])
        for b, key in enumerate(portfolio.branch_keys)
    }


class _Aggregates:
    """All per-branch and per-industry aggregates the estimators need."""

    def __init__(self, portfolio: Portfolio, y: np.ndarray, w: np.ndarray):
        self.index = index = _GroupIndex(portfolio)
        self.sw = index.branch_sums(w)                     # branch total weights
        if np.any(self.sw <= 0):
            raise DataValidationError("every branch needs positive total weight")
        self.swy = index.branch_sums(w * y)
        self.ybar = self.swy / self.sw                     # branch means
        resid = y - self.ybar[index.obs_branch]
        self.ss_within = index.branch_sums(w * resid * resid)
        self.sw_ind = index.industry_sums(self.sw)         # industry total weights
        self.ybar_ind = index.industry_sums(self.sw * self.ybar) / self.sw_ind
        self.sw_total = math.fsum(self.sw)


def _estimate_components(agg: _Aggregates, allow_degenerate: bool):
    index = agg.index
    df_within = int(np.sum(index.counts - 1))
    if df_within <= 0:
        if not allow_degenerate:
            raise DegenerateHierarchyError(
                "within-branch variance denominator vanished: "
                "no branch has 2 or more observations"
            )
        sigma2 = 0.0
    else:
        sigma2 = math.fsum(agg.ss_within) / df_within

    dev_b = agg.ybar - agg.ybar_ind[index.branch_industry]
    between_branch = math.fsum(agg.sw * dev_b * dev_b)
    k_minus_1 = int(np.sum(index.branches_per_industry - 1))
    den_branch = agg.sw_total - math.fsum(
        agg.index.industry_sums(agg.sw * agg.sw) / agg.sw_ind
    )
    clipped_b = False
    if den_branch <= 0:
        if not allow_degenerate:
            raise DegenerateHierarchyError(
                "branch-level variance denominator vanished: "
                "no industry has 2 or more branches"
            )
        sigma2_branch = 0.0
    else:
        raw = (between_branch - sigma2 * k_minus_1) / den_branch
        clipped_b = raw < 0
        sigma2_branch = max(raw, 0.0)
    return sigma2, sigma2_branch, clipped_b


def _industry_weights(agg: _Aggregates, sigma2: float, sigma2_branch: float):
    """Branch credibility factors plus the industry-level aggregation weights.

    When the branch-level variance is zero the branch factors collapse to
    zero and the industry aggregation continues in its exact limiting
    form: plain exposure weights replace the credibility weights and the
    within variance replaces the branch variance in the industry-level
    shrinkage ratio.  This keeps every downstream quantity well defined
    and preserves the exact weighted-balance identity.
    """
    index = agg.index
    if sigma2_branch > 0:
        z = agg.sw / (agg.sw + sigma2 / sigma2_branch)
        agg_w = z
        shrink_var = sigma2_branch
    else:
        z = np.zeros_like(agg.sw)
        agg_w = agg.sw
        shrink_var = sigma2
    agg_w_ind = index.industry_sums(agg_w)
    zmean_ind = index.industry_sums(agg_w * agg.ybar) / agg_w_ind
    return z, agg_w, agg_w_ind, zmean_ind, shrink_var


def _estimate_sigma2_industry(agg, agg_w_ind, zmean_ind, subtract_var,
                              allow_degenerate: bool):
    total = math.fsum(agg_w_ind)
    n_ind = len(agg_w_ind)
    grand = math.fsum(agg_w_ind * zmean_ind) / total
    dev = zmean_ind - grand
    num = math.fsum(agg_w_ind * dev * dev) - subtract_var * (n_ind - 1)
    den = total - math.fsum(agg_w_ind * agg_w_ind) / total
    if den <= 0:
        if not allow_degenerate:
            raise DegenerateHierarchyError(
                "industry-level variance denominator vanished: "
                "fewer than 2 industries"
            )
        return 0.0, False, grand
    raw = num / den
    return max(raw, 0.0), raw < 0, grand


def estimate_variance_components(portfolio: Portfolio, response_override=None,
                                 weight_override=None, *,
                                 allow_degenerate: bool = False) -> VarianceComponents:
    """Moment estimators of the within, branch, and industry variances.

    Computed in dependency order: the branch estimator subtracts the
    scaled within estimate, and the industry estimator subtracts the
    branch estimate after reweighting industry means by the branch
    credibility factors.  Branches with a single observation contribute
    nothing to the within estimator (their degrees of freedom are zero).

    With ``allow_degenerate=True``, vanished denominators yield zero
    components instead of raising; the combined GLM-credibility loop uses
    this so that collapsed hierarchies degrade to pure pooling.
    """
    y, w = _resolve_overrides(portfolio, response_override, weight_override)
    agg = _Aggregates(portfolio, y, w)
    sigma2, sigma2_branch, clipped_b = _estimate_components(agg, allow_degenerate)
    _, _, agg_w_ind, zmean_ind, shrink_var = _industry_weights(agg, sigma2, sigma2_branch)
    subtract = sigma2_branch if sigma2_branch > 0 else sigma2
    sigma2_industry, clipped_i, _ = _estimate_sigma2_industry(
        agg, agg_w_ind, zmean_ind, subtract, allow_degenerate
    )
    return VarianceComponents(
        sigma2=sigma2, sigma2_branch=sigma2_branch, sigma2_industry=sigma2_industry,
        clipped=(False, clipped_b, clipped_i),
    )


def fit_jewell(portfolio: Portfolio, response_override=None, weight_override=None, *,
               allow_degenerate: bool = False) -> CredibilityFit:
    """Fit the two-level hierarchical credibility model.

    Produces branch credibility factors ``z``, industry factors ``q``, the
    collective mean, and the shrinkage predictors at both levels:

    * industry predictor = ``q * credibility-weighted industry mean + (1 - q) * collective mean``
    * branch predictor = ``z * branch mean + (1 - z) * industry predictor``

    When the branch variance is zero every ``z`` is zero (branch
    predictors collapse onto their industry predictor); when the industry
    variance is zero every ``q`` is zero and the collective mean falls
    back to the credibility-weighted grand mean, flagged via
    ``mu_fallback``.  The prediction for any known branch cell is its
    branch predictor (see :func:`predict_jewell`).
    """
    y, w = _resolve_overrides(portfolio, response_override, weight_override)
    agg = _Aggregates(portfolio, y, w)
    index = agg.index
    sigma2, sigma2_branch, clipped_b = _estimate_components(agg, allow_degenerate)
    z, agg_w, agg_w_ind, zmean_ind, shrink_var = _industry_weights(
        agg, sigma2, sigma2_branch
    )
    sigma2_industry, clipped_i, zgrand = _estimate_sigma2_industry(
        agg, agg_w_ind, zmean_ind, sigma2_branch if sigma2_branch > 0 else sigma2,
        allow_degenerate,
    )

    mu_fallback = False
    if sigma2_industry > 0:
        q = agg_w_ind / (agg_w_ind + shrink_var / sigma2_industry)
        q_total = math.fsum(q)
        mu_hat = math.fsum(q * zmean_ind) / q_total
    else:
        q = np.zeros_like(agg_w_ind)
        mu_hat = zgrand
        mu_fallback = True

    v_industry = q * zmean_ind + (1.0 - q) * mu_hat
    v_branch = z * agg.ybar + (1.0 - z) * v_industry[index.branch_industry]

    branch_keys = portfolio.branch_keys
    industry_ids = portfolio.industry_ids
    return CredibilityFit(
        mu_hat=float(mu_hat),
        components=VarianceComponents(
            sigma2=sigma2, sigma2_branch=sigma2_branch,
            sigma2_industry=sigma2_industry,
            clipped=(False, clipped_b, clipped_i),
        ),
        branch_means={key: float(agg.ybar[b]) for b, key in enumerate(branch_keys)},
        branch_weights={key: float(agg.sw[b]) for b, key in enumerate(branch_keys)},
        branch_credibility={key: float(z[b]) for b, key in enumerate(branch_keys)},
        industry_credibility={ind: float(q[j]) for j, ind in enumerate(industry_ids)},
        industry_zmean={ind: float(zmean_ind[j]) for j, ind in enumerate(industry_ids)},
        industry_predictor={ind: float(v_industry[j]) for j, ind in enumerate(industry_ids)},
        branch_predictor={key: float(v_branch[b]) for b, key in enumerate(branch_keys)},
        mu_fallback=mu_fallback,
    )


def predict_jewell(fit: CredibilityFit, industry_id: str, branch_id: str) -> float:
    """Predicted damage rate for one cell, with new-business fallbacks.

    Known branch: its branch predictor.  Known industry with an unseen
    branch: the industry predictor (a new branch has zero credibility).
    Unseen industry: the collective mean.
    """
    value = fit.branch_predictor.get((industry_id, branch_id))
    if value is not None:
        return value
    value = fit.industry_predictor.get(industry_id)
    if value is not None:
        return value
    return fit.mu_hat
