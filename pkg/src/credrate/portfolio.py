"""Core data model: observations, hierarchical portfolios, model families,
and dummy-coded design matrices.

A portfolio is a panel of exposure-weighted observations indexed by
industry > branch > unit > period.  Everything downstream (credibility,
GLM, combined fits) consumes this representation, so all types here are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError

#: Literal used to mark an absent covariate value.  When present among a
#: covariate's observed levels it is forced to be the reference level.
MISSING = "NA"


@dataclass(frozen=True)
class Observation:
    """One exposure period of one rated unit.

    Attributes
    ----------
    industry_id, branch_id : str
        Hierarchy labels.  Branch labels must resolve to exactly one
        industry across the whole portfolio.
    unit_id : str
        Company or tariff-class identifier; opaque to the estimators.
    period : int
        Plain integer year index, no calendar semantics.
    exposure : float
        Salary mass (weight), strictly positive.
    response : float
        Damage rate: claim cost divided by exposure.  Non-negative for
        Tweedie fits; may be signed under the Gaussian family.
    covariates : tuple of (name, level) pairs
        Categorical risk factors, pre-binned.
    """

    industry_id: str
    branch_id: str
    unit_id: str
    period: int
    exposure: float
    response: float
    covariates: tuple[tuple[str, str], ...] = ()

    def covariate(self, name: str) -> str:
        for key, level in self.covariates:
            if key == name:
                return level
        return MISSING


@dataclass(frozen=True)
class CovariateSchema:
    """Per-covariate level sets with a designated reference level.

    The first declared level of each covariate is the reference; when the
    missing marker occurs among a covariate's levels it must be declared
    first so that records with missing values serve as the reference.
    """

    levels: dict[str, tuple[str, ...]]
    missing_marker: str = MISSING

    def __post_init__(self):
        for name, lvls in self.levels.items():
            if len(lvls) != len(set(lvls)):
                raise DataValidationError(f"duplicate levels declared for covariate {name!r}")
            if self.missing_marker in lvls and lvls[0] != self.missing_marker:
                raise DataValidationError(
                    f"covariate {name!r}: missing marker {self.missing_marker!r} "
                    "must be the reference (first) level"
                )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.levels)

    def reference(self, name: str) -> str:
        return self.levels[name][0]


def _schema_from_observations(observations, missing_marker=MISSING) -> CovariateSchema:
    """Derive a schema from the data: missing marker first, then sorted levels."""
    seen: dict[str, set] = {}
    for obs in observations:
        for name, level in obs.covariates:
            seen.setdefault(name, set()).add(level)
    levels = {}
    for name in sorted(seen):
        lvls = sorted(seen[name])
        if missing_marker in seen[name]:
            lvls.remove(missing_marker)
            lvls = [missing_marker] + lvls
        levels[name] = tuple(lvls)
    return CovariateSchema(levels=levels, missing_marker=missing_marker)


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Immutable panel of observations plus the two-level hierarchy index.

    Construction precomputes integer codes and sorted group boundaries so
    that the estimators can aggregate deterministically without re-deriving
    the grouping on every call.
    """

    observations: tuple[Observation, ...]
    hierarchy: dict[str, tuple[str, ...]]
    schema: CovariateSchema

    # Caches derived in __post_init__; excluded from comparison/repr.
    exposures: np.ndarray = field(repr=False, default=None)
    responses: np.ndarray = field(repr=False, default=None)
    branch_keys: tuple[tuple[str, str], ...] = field(repr=False, default=None)
    industry_ids: tuple[str, ...] = field(repr=False, default=None)
    obs_branch: np.ndarray = field(repr=False, default=None)
    branch_industry: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        industries = tuple(sorted(self.hierarchy))
        branch_keys = tuple(
            (ind, br) for ind in industries for br in sorted(self.hierarchy[ind])
        )
        branch_pos = {key: i for i, key in enumerate(branch_keys)}
        industry_pos = {ind: i for i, ind in enumerate(industries)}

        n = len(self.observations)
        exposures = np.empty(n)
        responses = np.empty(n)
        obs_branch = np.empty(n, dtype=np.intp)
        for i, obs in enumerate(self.observations):
            exposures[i] = obs.exposure
            responses[i] = obs.response
            obs_branch[i] = branch_pos.get((obs.industry_id, obs.branch_id), -1)
        branch_industry = np.array(
            [industry_pos[key[0]] for key in branch_keys], dtype=np.intp
        )
        for arr in (exposures, responses, obs_branch, branch_industry):
            arr.setflags(write=False)

        object.__setattr__(self, "exposures", exposures)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "branch_keys", branch_keys)
        object.__setattr__(self, "industry_ids", industries)
        object.__setattr__(self, "obs_branch", obs_branch)
        object.__setattr__(self, "branch_industry", branch_industry)

    def __eq__(self, other):
        if not isinstance(other, Portfolio):
            return NotImplemented
        return (
            self.observations == other.observations
            and self.hierarchy == other.hierarchy
            and self.schema == other.schema
        )

    def __len__(self) -> int:
        return len(self.observations)

    @classmethod
    def from_observations(cls, observations, schema: CovariateSchema | None = None,
                          hierarchy: dict[str, tuple[str, ...]] | None = None) -> "Portfolio":
        """Build a portfolio, deriving the hierarchy index and schema from data."""
        observations = tuple(observations)
        if hierarchy is None:
            mapping: dict[str, set] = {}
            for obs in observations:
                mapping.setdefault(obs.industry_id, set()).add(obs.branch_id)
            hierarchy = {ind: tuple(sorted(brs)) for ind, brs in sorted(mapping.items())}
        else:
            hierarchy = {ind: tuple(brs) for ind, brs in hierarchy.items()}
        if schema is None:
            schema = _schema_from_observations(observations)
        return cls(observations=observations, hierarchy=hierarchy, schema=schema)

    def covariate_column(self, name: str) -> list[str]:
        """Observed level of one covariate, in observation order."""
        if name not in self.schema.levels:
            raise DataValidationError(f"unknown covariate {name!r}")
        return [obs.covariate(name) for obs in self.observations]

    def subset(self, mask) -> "Portfolio":
        """Portfolio restricted to observations where ``mask`` is true."""
        kept = tuple(obs for obs, keep in zip(self.observations, mask) if keep)
        return Portfolio.from_observations(kept, schema=self.schema)

    def periods(self) -> tuple[int, ...]:
        return tuple(sorted({obs.period for obs in self.observations}))


@dataclass(frozen=True)
class FamilySpec:
    """Response family plus link, fixed at two supported combinations.

    ``gaussian-identity`` models the damage rate additively; ``tweedie-log``
    models it multiplicatively with a compound Poisson-gamma response whose
    power parameter lies strictly between 1 and 2 (point mass at zero plus
    a continuous positive part).  ``power`` is either a single fixed value
    or a grid to profile over; the dispersion is always estimated.
    """

    family: str
    power: float | tuple[float, ...] | None = None

    GAUSSIAN = "gaussian-identity"
    TWEEDIE = "tweedie-log"

    def __post_init__(self):
        if self.family not in (self.GAUSSIAN, self.TWEEDIE):
            raise DataValidationError(f"unknown family {self.family!r}")
        if self.family == self.GAUSSIAN:
            if self.power not in (None, 0, 0.0):
                raise DataValidationError("gaussian-identity fixes the power at 0")
            object.__setattr__(self, "power", 0.0)
        else:
            grid = self.power_grid()
            if not grid:
                object.__setattr__(self, "power", DEFAULT_POWER_GRID)
                grid = DEFAULT_POWER_GRID
            for p in grid:
                if not 1.0 < p < 2.0:
                    raise DataValidationError(
                        f"tweedie-log power {p} outside the compound Poisson-gamma range (1, 2)"
                    )

    @property
    def is_tweedie(self) -> bool:
        return self.family == self.TWEEDIE

    def power_grid(self) -> tuple[float, ...]:
        if self.power is None:
            return ()
        if isinstance(self.power, (int, float)):
            return (float(self.power),)
        return tuple(float(p) for p in self.power)

    def fixed_power(self) -> float:
        grid = self.power_grid()
        if len(grid) != 1:
            raise DataValidationError(
                "family has a profiling grid; a single fixed power is required here"
            )
        return grid[0]


#: Default profiling grid covering the compound Poisson-gamma regime.
DEFAULT_POWER_GRID = tuple(round(1.05 + 0.05 * i, 2) for i in range(19))


@dataclass(frozen=True)
class DesignMatrix:
    """Dummy-coded design: intercept plus one column per non-reference level.

    ``terms[c]`` is ``None`` for the intercept and ``(covariate, level)``
    for dummy columns; row order equals the portfolio's observation order.
    """

    matrix: np.ndarray
    column_names: tuple[str, ...]
    terms: tuple[tuple[str, str] | None, ...]

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def decode_row(self, row) -> dict[str, str]:
        """Recover covariate levels from one encoded row (round-trip check)."""
        row = np.asarray(row)
        covariates = {term[0] for term in self.terms if term is not None}
        decoded = {}
        for name in covariates:
            decoded[name] = None
        for j, term in enumerate(self.terms):
            if term is None:
                continue
            name, level = term
            if row[j] == 1:
                decoded[name] = level
        return decoded


def build_design(portfolio: Portfolio, covariate_selection) -> DesignMatrix:
    """Dummy-encode the selected covariates against the portfolio schema.

    Columns are ordered deterministically: intercept first, then covariates
    in schema declaration order restricted to the selection, then levels in
    schema order with the reference level omitted.

    Raises
    ------
    DataValidationError
        For unknown covariate names or covariates with fewer than two
        observed levels (their dummies would be void or collinear).
    """
    selection = list(covariate_selection)
    for name in selection:
        if name not in portfolio.schema.levels:
            raise DataValidationError(f"unknown covariate {name!r}")
    ordered = [name for name in portfolio.schema.names if name in selection]

    n = len(portfolio)
    columns = [np.ones(n)]
    names = ["intercept"]
    terms: list[tuple[str, str] | None] = [None]
    for name in ordered:
        observed = portfolio.covariate_column(name)
        if len(set(observed)) < 2:
            raise DataValidationError(
                f"covariate {name!r} has fewer than 2 observed levels"
            )
        levels = portfolio.schema.levels[name]
        for level in levels[1:]:
            col = np.fromiter(
                (1.0 if value == level else 0.0 for value in observed),
                dtype=float, count=n,
            )
            columns.append(col)
            names.append(f"{name}={level}")
            terms.append((name, level))
    matrix = np.column_stack(columns) if columns else np.ones((n, 1))
    return DesignMatrix(matrix=matrix, column_names=tuple(names), terms=tuple(terms))


def validate_portfolio(portfolio: Portfolio) -> list[str]:
    """Check every structural invariant; returns violations as data, not errors.

    An empty list means the portfolio is well formed.  Each violation names
    the offending record (or index entry) and the rule it breaks.
    """
    violations: list[str] = []
    branch_owner: dict[str, str] = {}
    for ind, branches in portfolio.hierarchy.items():
        if not branches:
            violations.append(f"hierarchy: industry {ind!r} has no branches")
        for br in branches:
            owner = branch_owner.get(br)
            if owner is not None and owner != ind:
                violations.append(
                    f"hierarchy: branch {br!r} listed under industries "
                    f"{owner!r} and {ind!r}; branches must resolve to one industry"
                )
            branch_owner[br] = ind

    populated: set[tuple[str, str]] = set()
    hierarchy_pairs = {
        (ind, br) for ind, branches in portfolio.hierarchy.items() for br in branches
    }
    for i, obs in enumerate(portfolio.observations):
        tag = f"obs[{i}] (unit={obs.unit_id!r}, period={obs.period})"
        if not np.isfinite(obs.exposure) or obs.exposure <= 0:
            violations.append(f"{tag}: exposure must be > 0, got {obs.exposure!r}")
        if not np.isfinite(obs.response):
            violations.append(f"{tag}: response must be finite, got {obs.response!r}")
        if (obs.industry_id, obs.branch_id) not in hierarchy_pairs:
            violations.append(
                f"{tag}: pair ({obs.industry_id!r}, {obs.branch_id!r}) "
                "missing from the hierarchy index"
            )
        else:
            populated.add((obs.industry_id, obs.branch_id))
        for name, level in obs.covariates:
            schema_levels = portfolio.schema.levels.get(name)
            if schema_levels is None:
                violations.append(f"{tag}: covariate {name!r} not in schema")
            elif level not in schema_levels and level != portfolio.schema.missing_marker:
                violations.append(
                    f"{tag}: level {level!r} of covariate {name!r} not in schema"
                )
    for pair in sorted(hierarchy_pairs - populated):
        violations.append(
            f"hierarchy: branch {pair!r} is indexed but has no observations"
        )
    return violations


def recode_covariate(portfolio: Portfolio, name: str, mapping: dict[str, str],
                     new_levels: tuple[str, ...]) -> Portfolio:
    """Portfolio with one covariate's levels merged through ``mapping``.

    Used by coefficient clustering: the original levels collapse onto
    cluster labels, and ``new_levels`` fixes the recoded declaration order
    (its first entry becomes the reference).
    """
    if name not in portfolio.schema.levels:
        raise DataValidationError(f"unknown covariate {name!r}")
    observations = []
    for obs in portfolio.observations:
        covs = tuple(
            (key, mapping[level] if key == name else level)
            for key, level in obs.covariates
        )
        observations.append(
            Observation(
                industry_id=obs.industry_id, branch_id=obs.branch_id,
                unit_id=obs.unit_id, period=obs.period,
                exposure=obs.exposure, response=obs.response, covariates=covs,
            )
        )
    levels = dict(portfolio.schema.levels)
    levels[name] = tuple(new_levels)
    schema = CovariateSchema(levels=levels, missing_marker=portfolio.schema.missing_marker)
    return Portfolio.from_observations(observations, schema=schema,
                                       hierarchy=portfolio.hierarchy)
