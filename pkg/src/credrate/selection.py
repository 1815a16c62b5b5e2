"""Model selection: exhaustive subset search by AIC and optimal
one-dimensional coefficient clustering with an AIC grid search.

``cluster_1d`` is exact, not heuristic: optimal clusters of scalars are
contiguous once the values are sorted, so dynamic programming over
segment boundaries finds the assignment with the global minimum weighted
within-cluster sum of squares.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, NumericalError
from .glmc import GlmcFit, fit_glmc, glmc_aic
from .portfolio import FamilySpec, Portfolio, recode_covariate


@dataclass(frozen=True)
class Clustering:
    """Optimal 1-D clustering: labels follow the input order, clusters are
    numbered by ascending center."""

    labels: tuple[int, ...]
    centers: tuple[float, ...]
    wcss: float


def cluster_1d(values, weights=None, k: int = 1) -> Clustering:
    """Optimal weighted k-means in one dimension by dynamic programming.

    Minimizes the weighted within-cluster sum of squares exactly; no
    alternative assignment of the values to ``k`` groups has a strictly
    smaller objective.  ``k`` must not exceed the number of distinct
    values.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != x.shape:
        raise DataValidationError("weights must match values")
    if np.any(w <= 0):
        raise DataValidationError("weights must be positive")
    n_distinct = len(np.unique(x))
    if not 1 <= k <= n_distinct:
        raise DataValidationError(
            f"cluster count {k} outside [1, {n_distinct}] (distinct values)"
        )

    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    csw = np.concatenate([[0.0], np.cumsum(ws)])
    cswx = np.concatenate([[0.0], np.cumsum(ws * xs)])
    cswx2 = np.concatenate([[0.0], np.cumsum(ws * xs * xs)])

    def seg_cost(a: int, b: int) -> float:
        # weighted SSE of xs[a:b]
        sw = csw[b] - csw[a]
        swx = cswx[b] - cswx[a]
        swx2 = cswx2[b] - cswx2[a]
        return max(swx2 - swx * swx / sw, 0.0)

    big = float("inf")
    cost = np.full((k + 1, n + 1), big)
    split = np.zeros((k + 1, n + 1), dtype=int)
    cost[0, 0] = 0.0
    for m in range(1, k + 1):
        for i in range(m, n + 1):
            best, best_j = big, m - 1
            for j in range(m - 1, i):
                c = cost[m - 1, j] + seg_cost(j, i)
                if c < best:
                    best, best_j = c, j
            cost[m, i] = best
            split[m, i] = best_j

    boundaries = [n]
    i = n
    for m in range(k, 0, -1):
        i = split[m, i]
        boundaries.append(i)
    boundaries.reverse()

    labels_sorted = np.empty(n, dtype=int)
    centers = []
    for c in range(k):
        a, b = boundaries[c], boundaries[c + 1]
        labels_sorted[a:b] = c
        centers.append(float((cswx[b] - cswx[a]) / (csw[b] - csw[a])))
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    return Clustering(labels=tuple(int(v) for v in labels),
                      centers=tuple(centers), wcss=float(cost[k, n]))


@dataclass(frozen=True)
class SubsetEntry:
    """One candidate subset's outcome in the exhaustive search."""

    covariates: tuple[str, ...]
    aic: float
    converged: bool
    power: float
    iterations: int
    error: str = ""


def best_subset(portfolio: Portfolio, candidate_covariates, family: FamilySpec,
                forced_covariates=(), *, max_candidates: int = 20,
                **glmc_kwargs) -> list[SubsetEntry]:
    """Fit the combined model for every candidate subset and rank by AIC.

    Forced covariates join every subset; the hierarchy always enters
    through the credibility layer.  Returns all ``2**m`` entries ranked
    ascending by AIC with ties broken toward the smaller subset, then
    lexicographically.  Individual fit failures become infinite-AIC
    entries instead of aborting the search.
    """
    candidates = list(dict.fromkeys(candidate_covariates))
    forced = tuple(dict.fromkeys(forced_covariates))
    if set(candidates) & set(forced):
        raise DataValidationError("candidate and forced covariates must be disjoint")
    if len(candidates) > max_candidates:
        raise DataValidationError(
            f"{len(candidates)} candidates exceed the cap of {max_candidates}"
        )
    entries: list[SubsetEntry] = []
    for r in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            selection = forced + combo
            try:
                fit = fit_glmc(portfolio, selection, family, **glmc_kwargs)
                entries.append(SubsetEntry(
                    covariates=tuple(sorted(combo)),
                    aic=glmc_aic(fit),
                    converged=fit.converged,
                    power=fit.power,
                    iterations=fit.iterations,
                ))
            except (NumericalError, DataValidationError) as exc:
                entries.append(SubsetEntry(
                    covariates=tuple(sorted(combo)), aic=float("inf"),
                    converged=False, power=float("nan"), iterations=0,
                    error=str(exc),
                ))
    entries.sort(key=lambda e: (e.aic, len(e.covariates), e.covariates))
    return entries


@dataclass(frozen=True)
class ClusterSearchResult:
    """Grid-search outcome for one clustered covariate."""

    best_k: int
    aic_by_k: dict[int, float]
    mapping: dict[str, str]
    cluster_effects: dict[str, float]
    fit: GlmcFit


def _cluster_label(idx: int) -> str:
    return f"c{idx}"


def cluster_grid_search(portfolio: Portfolio, coefficient_covariate: str,
                        k_grid, family: FamilySpec, *,
                        forced_covariates=(), **glmc_kwargs) -> ClusterSearchResult:
    """Choose how many groups to merge a covariate's levels into, by AIC.

    Fits the dummy-encoded model once, clusters the fitted level
    coefficients (reference level at zero) with :func:`cluster_1d` for
    each grid size, refits on the merged encoding, and keeps the size
    with the lowest AIC (ties toward fewer clusters).  A grid entry of
    one merges every level, so the covariate drops out of the refit.

    The reported per-cluster effect is the inverse link applied to the
    refit intercept plus the cluster coefficient.
    """
    if coefficient_covariate not in portfolio.schema.levels:
        raise DataValidationError(f"unknown covariate {coefficient_covariate!r}")
    k_grid = sorted(set(int(k) for k in k_grid))
    if not k_grid:
        raise DataValidationError("k grid must be non-empty")
    levels = portfolio.schema.levels[coefficient_covariate]
    if any(k < 1 or k > len(levels) for k in k_grid):
        raise DataValidationError(f"k grid entries must lie in [1, {len(levels)}]")

    base_selection = tuple(forced_covariates) + (coefficient_covariate,)
    base_fit = fit_glmc(portfolio, base_selection, family, **glmc_kwargs)
    coefs = np.array([
        0.0 if lvl == levels[0]
        else base_fit.glm.coefficients[f"{coefficient_covariate}={lvl}"]
        for lvl in levels
    ])

    results: dict[int, tuple[float, dict[str, str], GlmcFit]] = {}
    for k in k_grid:
        if k == 1:
            mapping = {lvl: _cluster_label(0) for lvl in levels}
            refit = fit_glmc(portfolio, tuple(forced_covariates), family, **glmc_kwargs)
        else:
            clustering = cluster_1d(coefs, None, k)
            mapping = {
                lvl: _cluster_label(clustering.labels[i])
                for i, lvl in enumerate(levels)
            }
            # The cluster holding the original reference level leads the
            # recoded declaration so it stays the reference.
            ref_label = mapping[levels[0]]
            new_levels = [ref_label] + [
                _cluster_label(c) for c in range(k) if _cluster_label(c) != ref_label
            ]
            merged = recode_covariate(
                portfolio, coefficient_covariate, mapping, tuple(new_levels)
            )
            refit = fit_glmc(merged, base_selection, family, **glmc_kwargs)
        results[k] = (glmc_aic(refit), mapping, refit)

    best_k = min(k_grid, key=lambda k: (results[k][0], k))
    aic, mapping, fit = results[best_k]

    if family.is_tweedie:
        def inv_link(v):
            return float(np.exp(v))
    else:
        def inv_link(v):
            return float(v)
    intercept = fit.glm.intercept
    effects: dict[str, float] = {}
    for label in sorted(set(mapping.values())):
        name = f"{coefficient_covariate}={label}"
        beta = fit.glm.coefficients.get(name, 0.0)
        effects[label] = inv_link(intercept + beta)

    return ClusterSearchResult(
        best_k=best_k,
        aic_by_k={k: results[k][0] for k in k_grid},
        mapping=mapping,
        cluster_effects=effects,
        fit=fit,
    )
