"""Actuarial lift and calibration metrics.

The Lorenz curve traces, with records ranked from the highest predicted
damage rate down, the cumulative share of weighted observed damage
against a cumulative share on the x axis.  The default x axis is the
cumulative exposure share, which makes the curve (and hence the Gini
index) depend on the predictions only through their ordering; the
cumulative weighted-predicted-damage share is available as an
alternative abscissa.  Ties in the predictions are merged into a single
segment so the curve is invariant to permutations of tied records.

The Gini index is twice the trapezoid-rule area between the curve and
the diagonal.  The loss ratio and the balance factor are both the ratio
of total weighted observed to total weighted predicted damage; the two
names reflect their uses (out-of-sample accuracy versus in-sample
calibration).  For log-link fits the balance factor can be folded back
into the intercept to restore exact balance on the fitting data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .glm import GlmFit, rebalanced_glm
from .glmc import GlmcFit, rebalanced_glmc


@dataclass(frozen=True)
class EvaluationReport:
    """Bundle of evaluation outputs for one prediction set."""

    lorenz: tuple[tuple[float, float], ...]
    gini: float
    loss_ratio: float
    alpha: float
    n_records: int
    premium_diffs: np.ndarray | None = None
    n_excluded_benchmark: int = 0


def _check_triplet(observed, predicted, weight):
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if not observed.shape == predicted.shape == weight.shape:
        raise DataValidationError("observed/predicted/weight lengths must match")
    if np.any(weight <= 0) or not np.all(np.isfinite(weight)):
        raise DataValidationError("weights must be positive and finite")
    return observed, predicted, weight


def lorenz_gini(observed, predicted, weight, *, abscissa: str = "weight"):
    """Lorenz points and Gini index of a prediction ordering.

    Parameters
    ----------
    observed, predicted, weight : array-like, per record
    abscissa : {"weight", "predicted"}
        x-axis convention: cumulative exposure share (ordering-only,
        default) or cumulative weighted-predicted-damage share.

    Returns
    -------
    (points, gini)
        ``points`` starts at (0, 0) and ends at (1, 1); records with
        equal predictions form a single segment.
    """
    observed, predicted, weight = _check_triplet(observed, predicted, weight)
    total_observed = float(np.sum(weight * observed))
    if total_observed <= 0:
        raise DataValidationError("total weighted observed damage must be positive")
    if abscissa not in ("weight", "predicted"):
        raise DataValidationError(f"unknown abscissa {abscissa!r}")

    order = np.argsort(-predicted, kind="stable")
    pred_sorted = predicted[order]
    damage = (weight * observed)[order]
    if abscissa == "weight":
        x_mass = weight[order]
    else:
        x_mass = (weight * predicted)[order]
        total_x = float(np.sum(x_mass))
        if total_x <= 0:
            raise DataValidationError(
                "total weighted predicted damage must be positive for the "
                "predicted abscissa"
            )

    # Group tied predictions into one segment each.
    boundaries = np.nonzero(np.diff(pred_sorted))[0] + 1
    seg_damage = np.add.reduceat(damage, np.r_[0, boundaries])
    seg_x = np.add.reduceat(x_mass, np.r_[0, boundaries])

    x = np.concatenate([[0.0], np.cumsum(seg_x) / np.sum(seg_x)])
    y = np.concatenate([[0.0], np.cumsum(seg_damage) / total_observed])
    # Both shares close at one by construction; snap away reordering noise.
    x[-1] = 1.0
    y[-1] = 1.0

    # Twice the area between the curve and the diagonal, by trapezoids.
    gini = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1])) - 1.0)
    points = tuple((float(a), float(b)) for a, b in zip(x, y))
    return points, gini


def loss_ratio(observed, predicted, weight) -> float:
    """Total weighted observed damage over total weighted predicted damage."""
    observed, predicted, weight = _check_triplet(observed, predicted, weight)
    total_pred = float(np.sum(weight * predicted))
    if total_pred <= 0:
        raise DataValidationError("total weighted predicted damage must be positive")
    return float(np.sum(weight * observed)) / total_pred


def balance_alpha(observed, predicted, weight) -> float:
    """Deviation factor of total predicted from total observed damage.

    Equals one for a balanced model; multiplying all predictions by this
    factor restores aggregate balance.
    """
    return loss_ratio(observed, predicted, weight)


def rebalance_intercept(fit, alpha: float):
    """Shift a log-link fit's intercept by ``log(alpha)``.

    Every fitted mean (and prediction) scales by ``alpha``; running
    :func:`balance_alpha` on the same data afterwards yields one exactly.
    Identity-link fits raise, since the correction is defined through the
    log link.
    """
    if isinstance(fit, GlmcFit):
        return rebalanced_glmc(fit, alpha)
    if isinstance(fit, GlmFit):
        return rebalanced_glm(fit, alpha)
    raise DataValidationError(f"cannot rebalance object of type {type(fit).__name__}")


@dataclass(frozen=True)
class PremiumDiff:
    """Per-record relative premium differences against a benchmark.

    ``ratios`` is full length with NaN at records whose benchmark
    prediction was not strictly positive; those are excluded from any
    summary and counted in ``n_excluded``.
    """

    ratios: np.ndarray
    n_excluded: int

    def included(self) -> np.ndarray:
        return self.ratios[~np.isnan(self.ratios)]


def relative_premium_diff(candidate_pred, benchmark_pred) -> PremiumDiff:
    """Relative difference of candidate to benchmark predictions per record.

    ``(candidate - benchmark) / benchmark``; records with a non-positive
    benchmark are excluded (NaN) and counted rather than failing the run.
    """
    cand = np.asarray(candidate_pred, dtype=float)
    bench = np.asarray(benchmark_pred, dtype=float)
    if cand.shape != bench.shape:
        raise DataValidationError("candidate/benchmark lengths must match")
    valid = bench > 0
    ratios = np.full(cand.shape, np.nan)
    ratios[valid] = (cand[valid] - bench[valid]) / bench[valid]
    return PremiumDiff(ratios=ratios, n_excluded=int(np.sum(~valid)))


def evaluate_predictions(observed, predicted, weight, benchmark=None, *,
                         abscissa: str = "weight") -> EvaluationReport:
    """Assemble the full evaluation report for one prediction set."""
    points, gini = lorenz_gini(observed, predicted, weight, abscissa=abscissa)
    ratio = loss_ratio(observed, predicted, weight)
    diffs = None
    excluded = 0
    if benchmark is not None:
        pd = relative_premium_diff(predicted, benchmark)
        diffs = pd.ratios
        excluded = pd.n_excluded
    return EvaluationReport(
        lorenz=points, gini=gini, loss_ratio=ratio, alpha=ratio,
        n_records=int(np.asarray(observed).shape[0]),
        premium_diffs=diffs, n_excluded_benchmark=excluded,
    )
