"""Synthetic hierarchical portfolios with known ground truth.

Generation is fully deterministic given the seed: independent child
streams (derived from one root seed sequence) drive industry effects,
branch effects, exposures, covariate assignment, and responses, and every
draw happens in a fixed record order.  Output is therefore identical
across runs and thread counts.

Tweedie responses use the exact compound Poisson-gamma construction:
claim count Poisson with rate ``w * mu**(2-p) / (phi * (2-p))``, claim
sizes gamma with shape ``(2-p)/(p-1)`` and scale ``phi*(p-1)*mu**(p-1)``,
response equal to the total over the exposure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError
from .portfolio import MISSING, CovariateSchema, FamilySpec, Observation, Portfolio


@dataclass(frozen=True)
class ExposureLaw:
    """Exposure generator: ``constant`` at ``low`` or log-uniform on [low, high]."""

    kind: str = "log-uniform"
    low: float = 1.0
    high: float = 1000.0

    def __post_init__(self):
        if self.kind not in ("constant", "log-uniform"):
            raise DataValidationError(f"unknown exposure law {self.kind!r}")
        if self.low <= 0 or (self.kind == "log-uniform" and self.high < self.low):
            raise DataValidationError("exposure bounds must satisfy 0 < low <= high")

    def draw(self, rng, size):
        if self.kind == "constant":
            return np.full(size, float(self.low))
        return np.exp(rng.uniform(np.log(self.low), np.log(self.high), size=size))


@dataclass(frozen=True)
class SimulationSpec:
    """Ground-truth configuration for one synthetic portfolio."""

    n_industries: int
    branches_per_industry: int
    units_per_branch: int
    periods: int
    family: FamilySpec
    dispersion: float
    intercept: float
    sigma2_industry: float = 0.0
    sigma2_branch: float = 0.0
    exposure_law: ExposureLaw = field(default_factory=ExposureLaw)
    covariate_effects: dict[str, dict[str, float]] | None = None
    seed: int = 0

    def __post_init__(self):
        for name, value in (
            ("n_industries", self.n_industries),
            ("branches_per_industry", self.branches_per_industry),
            ("units_per_branch", self.units_per_branch),
            ("periods", self.periods),
        ):
            if value < 1:
                raise DataValidationError(f"{name} must be >= 1, got {value}")
        if self.sigma2_industry < 0 or self.sigma2_branch < 0:
            raise DataValidationError("random-effect variances must be non-negative")
        if self.dispersion <= 0:
            raise DataValidationError("dispersion must be positive")
        if self.family.is_tweedie:
            self.family.fixed_power()  # a grid is not a generative model


@dataclass(frozen=True)
class SimulationTruth:
    """Everything needed to recompute true conditional means independently."""

    u_industry: dict[str, float]
    u_branch: dict[tuple[str, str], float]
    true_means: np.ndarray
    linear_predictor: np.ndarray
    covariate_contribution: np.ndarray
    spec: SimulationSpec


def _label(prefix: str, i: int, width: int) -> str:
    return f"{prefix}{i:0{width}d}"


def simulate_portfolio(spec: SimulationSpec) -> tuple[Portfolio, SimulationTruth]:
    """Draw one portfolio plus its ground-truth record.

    Industry effects are Normal(0, sigma2_industry) and branch effects
    Normal(0, sigma2_branch) on the link scale; the linear predictor adds
    the intercept and any covariate effects.  Identical seeds yield
    bit-identical portfolios.
    """
    root = np.random.SeedSequence(spec.seed)
    s_ind, s_br, s_exp, s_cov, s_resp = (
        np.random.Generator(np.random.Philox(child)) for child in root.spawn(5)
    )

    j_n, k_n = spec.n_industries, spec.branches_per_industry
    u_n, t_n = spec.units_per_branch, spec.periods
    wj = max(2, len(str(j_n - 1)))
    wk = max(2, len(str(k_n - 1)))
    wu = max(3, len(str(u_n - 1)))

    industries = [_label("I", j, wj) for j in range(j_n)]
    u_ind = s_ind.normal(0.0, np.sqrt(spec.sigma2_industry), size=j_n)
    u_br = s_br.normal(0.0, np.sqrt(spec.sigma2_branch), size=(j_n, k_n))

    n = j_n * k_n * u_n * t_n
    exposures = spec.exposure_law.draw(s_exp, n)

    effects = spec.covariate_effects or {}
    cov_names = list(effects)
    unit_levels: dict[str, list[str]] = {}
    n_units = j_n * k_n * u_n
    for name in cov_names:
        levels = list(effects[name])
        picks = s_cov.integers(0, len(levels), size=n_units)
        unit_levels[name] = [levels[i] for i in picks]

    zeta = np.empty(n)
    cov_contrib = np.empty(n)
    observations: list[Observation] = []
    u_branch_map: dict[tuple[str, str], float] = {}
    row = 0
    unit_row = 0
    for j, ind in enumerate(industries):
        for k in range(k_n):
            branch = f"{ind}-B{k:0{wk}d}"
            u_branch_map[(ind, branch)] = float(u_br[j, k])
            for u in range(u_n):
                unit = f"{branch}-U{u:0{wu}d}"
                covs = tuple(
                    (name, unit_levels[name][unit_row]) for name in cov_names
                )
                contrib = sum(
                    effects[name][unit_levels[name][unit_row]] for name in cov_names
                )
                for t in range(t_n):
                    zeta[row] = spec.intercept + contrib + u_ind[j] + u_br[j, k]
                    cov_contrib[row] = contrib
                    observations.append(
                        Observation(
                            industry_id=ind, branch_id=branch, unit_id=unit,
                            period=t, exposure=float(exposures[row]),
                            response=0.0, covariates=covs,
                        )
                    )
                    row += 1
                unit_row += 1

    if spec.family.is_tweedie:
        p = spec.family.fixed_power()
        mu = np.exp(zeta)
        responses = _draw_tweedie(s_resp, mu, spec.dispersion, p, exposures)
    else:
        mu = zeta
        responses = s_resp.normal(mu, np.sqrt(spec.dispersion / exposures))

    observations = [
        Observation(
            industry_id=o.industry_id, branch_id=o.branch_id, unit_id=o.unit_id,
            period=o.period, exposure=o.exposure, response=float(responses[i]),
            covariates=o.covariates,
        )
        for i, o in enumerate(observations)
    ]

    schema_levels = {
        name: tuple(effects[name]) for name in cov_names
    }
    schema = CovariateSchema(levels=schema_levels, missing_marker=MISSING)
    portfolio = Portfolio.from_observations(observations, schema=schema)
    truth = SimulationTruth(
        u_industry={ind: float(u_ind[j]) for j, ind in enumerate(industries)},
        u_branch=u_branch_map,
        true_means=mu,
        linear_predictor=zeta,
        covariate_contribution=cov_contrib,
        spec=spec,
    )
    return portfolio, truth


def _draw_tweedie(rng, mu, phi, p, weight):
    """Compound Poisson-gamma draws, vectorized over records."""
    lam = weight * mu ** (2.0 - p) / (phi * (2.0 - p))
    shape = (2.0 - p) / (p - 1.0)
    scale = phi * (p - 1.0) * mu ** (p - 1.0)
    counts = rng.poisson(lam)
    total_claims = int(counts.sum())
    totals = np.zeros(mu.shape[0])
    if total_claims > 0:
        owner = np.repeat(np.arange(mu.shape[0]), counts)
        severities = rng.gamma(shape, np.repeat(scale, counts))
        np.add.at(totals, owner, severities)
    return totals / weight
