"""Compound Poisson-gamma (Tweedie, 1 < p < 2) log density.

The weighted family has effective dispersion ``phi / weight``.  Writing
``lam`` for the Poisson rate, ``alpha`` for the gamma shape and ``scale``
for the gamma scale of the claim-size terms,

    lam   = mu**(2 - p) / (phi' * (2 - p))
    alpha = (2 - p) / (p - 1)
    scale = phi' * (p - 1) * mu**(p - 1)

the density has an exact atom at zero, ``exp(-lam)``, and for y > 0 a
series over the claim count whose terms are evaluated in log space around
the dominant index and summed outward until they fall below 1e-17 of the
running maximum.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DataValidationError

#: Log-space drop below the dominant term at which the series is truncated.
_LOG_TAIL = np.log(1e-17)

_CHUNK = 4096


def _check_domain(mu, phi, p, weight):
    if not 1.0 < p < 2.0:
        raise DataValidationError(f"power must lie in (1, 2), got {p}")
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise DataValidationError("mean must be positive and finite")
    if np.any(phi <= 0) or not np.all(np.isfinite(phi)):
        raise DataValidationError("dispersion must be positive and finite")
    if np.any(weight <= 0) or not np.all(np.isfinite(weight)):
        raise DataValidationError("weight must be positive and finite")


def zero_mass_log(mu, phi, p, weight=1.0):
    """Log of the point mass at zero: ``-mu**(2-p) / ((phi/weight) * (2-p))``."""
    mu = np.asarray(mu, dtype=float)
    phi_eff = np.asarray(phi, dtype=float) / np.asarray(weight, dtype=float)
    return -(mu ** (2.0 - p)) / (phi_eff * (2.0 - p))


def log_density_positive(y, mu, phi, p, weight=1.0, window_scale=1.0):
    """Vectorized series log density for y > 0.

    The summand at claim count ``n`` is
    ``n*log(lam) + n*alpha*log(y/scale) - lgamma(n+1) - lgamma(n*alpha)``;
    terms are evaluated in log space over a window centered on the
    dominant count and summed via a per-row log-sum-exp.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), y.shape)
    phi_eff = np.broadcast_to(np.asarray(phi, dtype=float), y.shape) / weight
    _check_domain(mu, phi_eff, p, np.ones_like(y))
    if np.any(y <= 0):
        raise DataValidationError("series density requires y > 0; use the zero atom at 0")

    alpha = (2.0 - p) / (p - 1.0)
    lam = mu ** (2.0 - p) / (phi_eff * (2.0 - p))
    scale = phi_eff * (p - 1.0) * mu ** (p - 1.0)
    log_ratio = np.log(y / scale)
    c = np.log(lam) + alpha * log_ratio

    # Dominant claim count: y**(2-p) / (phi' * (2-p)).
    n_star = np.maximum(y ** (2.0 - p) / (phi_eff * (2.0 - p)), 1.0)

    out = np.empty_like(y)
    for start in range(0, y.shape[0], _CHUNK):
        sl = slice(start, min(start + _CHUNK, y.shape[0]))
        out[sl] = _chunk_log_sum(c[sl], n_star[sl], alpha, window_scale)

    return out - lam - y / scale - np.log(y)


def _chunk_log_sum(c, n_star, alpha, window_scale):
    """Per-chunk log-sum-exp of the series with a shared offset window."""
    half = np.sqrt(2.0 * (-_LOG_TAIL) * np.max(n_star) / (1.0 + alpha))
    half = int(np.ceil(window_scale * (half + 10.0)))
    while True:
        lo = np.maximum(np.round(n_star) - half, 1.0)
        width = 2 * half + 1
        n = lo[:, None] + np.arange(width)[None, :]
        log_terms = n * c[:, None] - gammaln(n + 1.0) - gammaln(n * alpha)
        m = np.max(log_terms, axis=1)
        # Edge terms must have decayed; otherwise widen and retry.
        edge_hi = log_terms[:, -1] - m
        interior = lo > 1.0
        edge_lo = np.where(interior, log_terms[:, 0] - m, -np.inf)
        if np.all(edge_hi < _LOG_TAIL) and np.all(edge_lo < _LOG_TAIL):
            keep = log_terms - m[:, None] > _LOG_TAIL
            total = np.sum(np.exp(log_terms - m[:, None], where=keep, out=np.zeros_like(log_terms)), axis=1)
            return m + np.log(total)
        half *= 2
        if half > 10_000_000:
            raise DataValidationError("series window exceeded sane bounds")


def tweedie_log_density(y, mu, phi, p, weight=1.0, *, window_scale=1.0) -> float:
    """Log density of one weighted compound Poisson-gamma observation.

    Parameters
    ----------
    y : float
        Non-negative response.
    mu : float
        Positive conditional mean.
    phi : float
        Positive dispersion; the effective dispersion is ``phi / weight``.
    p : float
        Power parameter, strictly between 1 and 2.
    weight : float
        Positive prior weight (exposure).
    window_scale : float
        Inflation factor for the series truncation window; the reported
        value is stable under doubling it.
    """
    if y < 0 or not np.isfinite(y):
        raise DataValidationError(f"response must be non-negative and finite, got {y}")
    mu_arr = np.asarray(float(mu))
    _check_domain(mu_arr, np.asarray(float(phi)), p, np.asarray(float(weight)))
    if y == 0:
        return float(zero_mass_log(mu, phi, p, weight))
    return float(
        log_density_positive(
            np.array([y]), mu, phi, p, weight, window_scale=window_scale
        )[0]
    )


def tweedie_log_likelihood(y, mu, phi, p, weight) -> float:
    """Summed log density over a sample; zeros use the exact atom."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if np.any(y < 0):
        raise DataValidationError("responses must be non-negative")
    zero = y == 0
    total = float(np.sum(zero_mass_log(mu[zero], phi, p, weight[zero])))
    if np.any(~zero):
        total += float(
            np.sum(log_density_positive(y[~zero], mu[~zero], phi, p, weight[~zero]))
        )
    return total


def tweedie_unit_deviance(y, mu, p):
    """Unit deviance of the compound Poisson-gamma family (y >= 0, mu > 0)."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    term_y = np.where(
        y > 0,
        y ** (2.0 - p) / ((1.0 - p) * (2.0 - p)),
        0.0,
    )
    return 2.0 * (term_y - y * mu ** (1.0 - p) / (1.0 - p) + mu ** (2.0 - p) / (2.0 - p))
