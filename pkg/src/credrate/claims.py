"""Large-claim capping and damage-rate aggregation.

Raw claim rows are capped at a year-specific threshold (the base
threshold times a per-period correction factor).  The total capped-away
amount can be redistributed across all claims in proportion to their
share of the total pre-cap cost, which preserves the portfolio total
exactly; the redistribution rule is a published, deliberate choice.
Capped rows then collapse to unit-period damage rates, optionally
grouped further into tariff classes (identical covariates within the
same branch and period, exposures summed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DataValidationError
from .portfolio import Observation, Portfolio


@dataclass(frozen=True)
class RawClaimRecord:
    """One claim row (or a pre-aggregated unit-period row)."""

    unit_id: str
    industry_id: str
    branch_id: str
    period: int
    exposure: float
    claim_amount: float
    covariates: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class CapConfig:
    """Claim capping policy: base threshold, per-period correction, redistribution."""

    threshold: float
    correction_factors: dict[int, float]
    redistribute: bool = True

    def __post_init__(self):
        if self.threshold <= 0:
            raise DataValidationError("cap threshold must be positive")
        for period, factor in self.correction_factors.items():
            if factor <= 0:
                raise DataValidationError(
                    f"correction factor for period {period} must be positive"
                )

    def period_threshold(self, period: int) -> float:
        if period not in self.correction_factors:
            raise DataValidationError(f"no correction factor for period {period}")
        return self.threshold * self.correction_factors[period]


def cap_claims(records, cap: CapConfig) -> list[float]:
    """Capped (and optionally redistributed) claim amounts, in input order."""
    records = list(records)
    for rec in records:
        if rec.exposure <= 0:
            raise DataValidationError(
                f"claim for unit {rec.unit_id!r} period {rec.period}: exposure must be > 0"
            )
        if rec.claim_amount < 0:
            raise DataValidationError(
                f"claim for unit {rec.unit_id!r} period {rec.period}: "
                "claim amount must be >= 0"
            )
    capped = [
        min(rec.claim_amount, cap.period_threshold(rec.period)) for rec in records
    ]
    if not cap.redistribute:
        return capped
    total = math.fsum(rec.claim_amount for rec in records)
    excess = math.fsum(
        rec.claim_amount - z for rec, z in zip(records, capped)
    )
    if excess <= 0:
        return capped
    if total <= 0:
        raise DataValidationError("positive capped excess with zero total cost")
    return [
        z + excess * (rec.claim_amount / total)
        for rec, z in zip(records, capped)
    ]


def cap_and_aggregate(records, cap: CapConfig, grouping: str = "unit") -> Portfolio:
    """Cap claims, then aggregate to damage rates.

    ``grouping="unit"`` emits one observation per (unit, period); every
    row of a unit-period must carry the same exposure and covariates
    (claims of one unit in one year share the salary mass).
    ``grouping="tariff-class"`` merges units with identical covariates
    within a branch and period, summing exposures and claim totals.
    """
    if grouping not in ("unit", "tariff-class"):
        raise DataValidationError(f"unknown grouping {grouping!r}")
    records = list(records)
    if not records:
        raise DataValidationError("no claim records")
    amounts = cap_claims(records, cap)

    # Stage 1: collapse claims to unit-period cells.
    cells: dict[tuple, dict] = {}
    for rec, amount in zip(records, amounts):
        key = (rec.unit_id, rec.industry_id, rec.branch_id, rec.period)
        cell = cells.get(key)
        if cell is None:
            cells[key] = {
                "exposure": rec.exposure,
                "covariates": rec.covariates,
                "amounts": [amount],
            }
        else:
            if cell["exposure"] != rec.exposure:
                raise DataValidationError(
                    f"unit {rec.unit_id!r} period {rec.period}: "
                    "claims disagree on exposure"
                )
            if cell["covariates"] != rec.covariates:
                raise DataValidationError(
                    f"unit {rec.unit_id!r} period {rec.period}: "
                    "claims disagree on covariates"
                )
            cell["amounts"].append(amount)

    observations = []
    if grouping == "unit":
        for (unit, ind, br, period), cell in sorted(cells.items()):
            observations.append(Observation(
                industry_id=ind, branch_id=br, unit_id=unit, period=period,
                exposure=cell["exposure"],
                response=math.fsum(cell["amounts"]) / cell["exposure"],
                covariates=cell["covariates"],
            ))
    else:
        # Stage 2: merge unit cells into tariff classes.
        classes: dict[tuple, dict] = {}
        for (unit, ind, br, period), cell in sorted(cells.items()):
            key = (ind, br, period, cell["covariates"])
            entry = classes.setdefault(
                key, {"exposure": 0.0, "total": [], "covariates": cell["covariates"]}
            )
            entry["exposure"] += cell["exposure"]
            entry["total"].extend(cell["amounts"])
        for i, ((ind, br, period, covs), entry) in enumerate(sorted(
            classes.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3])
        )):
            label = "|".join(f"{k}={v}" for k, v in covs) or "all"
            observations.append(Observation(
                industry_id=ind, branch_id=br,
                unit_id=f"class:{label}", period=period,
                exposure=entry["exposure"],
                response=math.fsum(entry["total"]) / entry["exposure"],
                covariates=covs,
            ))
    return Portfolio.from_observations(observations)
