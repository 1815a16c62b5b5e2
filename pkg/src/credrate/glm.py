"""Weighted exponential-family GLM fitting by iteratively reweighted
least squares, with offsets, power-parameter profiling, and AIC.

Two family/link pairs are supported: gaussian-identity (one weighted
least-squares step) and tweedie-log for powers strictly between 1 and 2.
Deviance is forced non-increasing across iterations by step halving, and
collinear design columns are dropped with a warning (their coefficients
are reported as zero) rather than failing the fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataValidationError, NumericalError
from .portfolio import DesignMatrix, FamilySpec
from .tweedie import tweedie_log_likelihood, tweedie_unit_deviance

IRLS_TOL = 1e-9
IRLS_MAX_ITER = 200

_ETA_BOUND = 30.0  # log-link linear predictor clamp during iteration


@dataclass(frozen=True)
class GlmFit:
    """Converged GLM state.

    ``coefficients`` maps column names to values (``"intercept"``
    included; dropped collinear columns carry 0.0 and are listed in
    ``dropped_columns``).  ``fitted_means`` are on the response scale and
    include the offset.  ``log_likelihood`` is the Gaussian closed form at
    its maximum-likelihood dispersion, or the compound Poisson-gamma
    series evaluated at the Pearson dispersion.
    """

    coefficients: dict[str, float]
    dispersion: float
    power: float
    deviance: float
    log_likelihood: float
    fitted_means: np.ndarray
    iterations: int
    converged: bool
    family: str
    rank: int
    n_obs: int
    offset: np.ndarray
    column_names: tuple[str, ...]
    terms: tuple[tuple[str, str] | None, ...]
    dropped_columns: tuple[str, ...] = ()
    deviance_path: tuple[float, ...] = ()

    def coefficient_vector(self) -> np.ndarray:
        return np.array([self.coefficients[name] for name in self.column_names])

    @property
    def intercept(self) -> float:
        return self.coefficients["intercept"]


def _independent_columns(x: np.ndarray, names) -> tuple[np.ndarray, list[str]]:
    """Greedy left-to-right rank screen; returns kept mask and dropped names.

    Prefers earlier columns (the intercept is first by construction) so
    the drop choice is deterministic under reordering of later levels.
    """
    n, p = x.shape
    kept = np.zeros(p, dtype=bool)
    basis: list[np.ndarray] = []
    dropped: list[str] = []
    for j in range(p):
        col = x[:, j].astype(float)
        norm0 = np.linalg.norm(col)
        resid = col.copy()
        for b in basis:
            resid -= (b @ resid) * b
        # Re-orthogonalize once for numerical safety.
        for b in basis:
            resid -= (b @ resid) * b
        norm = np.linalg.norm(resid)
        if norm0 == 0 or norm <= 1e-10 * max(norm0, 1.0):
            dropped.append(names[j])
        else:
            kept[j] = True
            basis.append(resid / norm)
    return kept, dropped


def _gaussian_deviance(y, mu, w):
    r = y - mu
    return float(np.sum(w * r * r))


def _tweedie_deviance(y, mu, w, p):
    return float(np.sum(w * tweedie_unit_deviance(y, mu, p)))


def _gaussian_loglik(y, mu, w):
    n = y.shape[0]
    rss = np.sum(w * (y - mu) ** 2)
    phi_mle = rss / n
    if phi_mle <= 0:
        # Degenerate perfect fit; likelihood unbounded.
        return float("inf")
    return float(0.5 * np.sum(np.log(w)) - 0.5 * n * np.log(2.0 * np.pi * phi_mle) - 0.5 * n)


def irls_fit(design: DesignMatrix, response, weight, offset, family: FamilySpec, *,
             tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER,
             start=None) -> GlmFit:
    """Fit a weighted GLM with offsets by IRLS.

    Parameters
    ----------
    design : DesignMatrix
        Intercept-first dummy design; collinear columns are dropped with
        a warning and reported as zero coefficients.
    response, weight, offset : array-like, per row
        Weights must be strictly positive; for tweedie-log all responses
        must be non-negative.
    family : FamilySpec
        With a single fixed power for tweedie-log (use
        :func:`profile_power` for grids).
    start : array-like, optional
        Warm-start coefficient vector (full column order).

    Notes
    -----
    The working response and weight follow the usual quasi-likelihood
    update; deviance is kept non-increasing by step halving, and the loop
    stops when the relative deviance change drops below ``tol``.  The
    dispersion is the Pearson statistic over ``n - rank`` (for
    gaussian-identity this is the weighted residual mean square).
    """
    x = design.matrix
    y = np.asarray(response, dtype=float)
    w = np.asarray(weight, dtype=float)
    off = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    n = x.shape[0]
    if y.shape != (n,) or w.shape != (n,) or off.shape != (n,):
        raise DataValidationError("response/weight/offset must match design rows")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DataValidationError("weights must be positive and finite")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("responses must be finite")

    tweedie = family.is_tweedie
    if tweedie:
        p = family.fixed_power()
        if np.any(y < 0):
            raise DataValidationError("tweedie-log requires non-negative responses")
    else:
        p = 0.0

    kept, dropped = _independent_columns(np.sqrt(w)[:, None] * x, design.column_names)
    if dropped:
        warnings.warn(
            f"dropping collinear design columns: {', '.join(dropped)}",
            RuntimeWarning, stacklevel=2,
        )
    xk = x[:, kept]
    rank = xk.shape[1]
    if rank == 0:
        raise NumericalError("design has no estimable columns")
    if n <= rank:
        raise NumericalError(
            f"need more observations ({n}) than estimable columns ({rank})"
        )

    if start is not None:
        beta = np.asarray(start, dtype=float)[kept]
    elif tweedie:
        ybar = float(np.sum(w * y) / np.sum(w))
        mu0 = np.maximum((y + ybar) / 2.0, 1e-8 * max(ybar, 1e-8))
        eta0 = np.log(mu0) - off
        beta = _wls_solve(xk, eta0, w)
    else:
        beta = _wls_solve(xk, y - off, w)

    def means(b):
        eta = xk @ b + off
        if tweedie:
            return np.exp(np.clip(eta, -_ETA_BOUND, _ETA_BOUND))
        return eta

    def deviance_of(b):
        mu = means(b)
        return (_tweedie_deviance(y, mu, w, p) if tweedie
                else _gaussian_deviance(y, mu, w))

    dev = deviance_of(beta)
    dev_path = [dev]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = means(beta)
        if tweedie:
            # log link: g'(mu) = 1/mu, V(mu) = mu**p
            z = (xk @ beta) + (y - mu) / mu
            ww = w * mu ** (2.0 - p)
        else:
            z = y - off
            ww = w
        try:
            proposal = _wls_solve(xk, z, ww)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"working weights collapsed at iteration {iterations}: {exc}")

        step = proposal - beta
        new_dev = deviance_of(proposal)
        halvings = 0
        while not np.isfinite(new_dev) or new_dev > dev * (1 + 1e-12) + 1e-300:
            halvings += 1
            if halvings > 30:
                break
            proposal = beta + step / (2.0 ** halvings)
            new_dev = deviance_of(proposal)
        if not np.isfinite(new_dev) or new_dev > dev * (1 + 1e-8):
            break  # cannot improve; report unconverged state below
        beta = proposal
        rel_change = abs(dev - new_dev) / max(abs(dev), abs(new_dev), 1e-300)
        dev = new_dev
        dev_path.append(dev)
        if rel_change < tol:
            converged = True
            break

    mu = means(beta)
    if n > rank:
        if tweedie:
            pearson = float(np.sum(w * (y - mu) ** 2 / mu ** p))
        else:
            pearson = float(np.sum(w * (y - mu) ** 2))
        dispersion = pearson / (n - rank)
    else:  # pragma: no cover - guarded above
        dispersion = float("nan")

    if tweedie:
        if dispersion <= 0:
            loglik = float("inf")  # perfect fit of all-zero data etc.
        else:
            loglik = tweedie_log_likelihood(y, mu, dispersion, p, w)
    else:
        loglik = _gaussian_loglik(y, mu, w)

    coefficients = {}
    kk = 0
    for j, name in enumerate(design.column_names):
        if kept[j]:
            coefficients[name] = float(beta[kk])
            kk += 1
        else:
            coefficients[name] = 0.0

    return GlmFit(
        coefficients=coefficients,
        dispersion=dispersion,
        power=p,
        deviance=dev,
        log_likelihood=loglik,
        fitted_means=mu,
        iterations=iterations,
        converged=converged,
        family=family.family,
        rank=rank,
        n_obs=n,
        offset=off,
        column_names=design.column_names,
        terms=design.terms,
        dropped_columns=tuple(dropped),
        deviance_path=tuple(dev_path),
    )


def _wls_solve(x, z, w):
    xtw = x.T * w
    xtwx = xtw @ x
    xtwz = xtw @ z
    try:
        return np.linalg.solve(xtwx, xtwz)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(xtwx, xtwz, rcond=None)
        return sol


@dataclass(frozen=True)
class PowerProfile:
    """Profile of the power parameter over a grid."""

    power: float
    powers: tuple[float, ...]
    log_likelihoods: tuple[float, ...]
    messages: tuple[str, ...]


def profile_power(design: DesignMatrix, response, weight, offset, grid, *,
                  tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER,
                  start=None) -> PowerProfile:
    """Refit the tweedie-log GLM at each grid power and pick the best.

    The criterion is the summed series log density at the fitted means
    and Pearson dispersion.  Ties break toward the smaller power.  Grid
    points whose fit fails are recorded and skipped; only an all-failed
    grid raises.
    """
    grid = tuple(float(p) for p in grid)
    if not grid:
        raise DataValidationError("profiling grid must be non-empty")
    for p in grid:
        if not 1.0 < p < 2.0:
            raise DataValidationError(f"grid power {p} outside (1, 2)")
    logliks: list[float] = []
    messages: list[str] = []
    for p in sorted(grid):
        try:
            fit = irls_fit(
                design, response, weight, offset,
                FamilySpec(FamilySpec.TWEEDIE, p), tol=tol, max_iter=max_iter,
                start=start,
            )
            logliks.append(fit.log_likelihood)
            messages.append("")
        except (NumericalError, DataValidationError) as exc:
            logliks.append(float("-inf"))
            messages.append(str(exc))
    if all(not np.isfinite(v) or v == float("-inf") for v in logliks):
        raise NumericalError("all profiling grid points failed: " + "; ".join(messages))
    powers = tuple(sorted(grid))
    best_idx = 0
    for i in range(1, len(powers)):
        if logliks[i] > logliks[best_idx]:
            best_idx = i
    return PowerProfile(
        power=powers[best_idx], powers=powers,
        log_likelihoods=tuple(logliks), messages=tuple(messages),
    )


def glm_aic(fit: GlmFit) -> float:
    """Akaike criterion with the dispersion (and power, for tweedie) counted.

    gaussian-identity: ``-2*loglik + 2*(rank + 1)``;
    tweedie-log: ``-2*loglik + 2*(rank + 2)``.
    """
    if not fit.converged:
        raise NumericalError("AIC requested for an unconverged fit")
    extra = 2 if fit.family == FamilySpec.TWEEDIE else 1
    return -2.0 * fit.log_likelihood + 2.0 * (fit.rank + extra)


def rebalanced_glm(fit: GlmFit, alpha: float) -> GlmFit:
    """Log-link fit with its intercept shifted by ``log(alpha)``."""
    if fit.family != FamilySpec.TWEEDIE:
        raise DataValidationError("rebalancing is defined for log-link fits only")
    if not alpha > 0:
        raise DataValidationError("alpha must be positive")
    coefficients = dict(fit.coefficients)
    coefficients["intercept"] = coefficients["intercept"] + float(np.log(alpha))
    return replace(
        fit, coefficients=coefficients, fitted_means=fit.fitted_means * alpha
    )
