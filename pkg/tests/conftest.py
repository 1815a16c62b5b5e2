import numpy as np
import pytest

from credrate.portfolio import CovariateSchema, Observation, Portfolio


def make_obs(ind, br, unit, period, w, y, covs=()):
    return Observation(
        industry_id=ind, branch_id=br, unit_id=unit, period=period,
        exposure=w, response=y, covariates=tuple(covs),
    )


@pytest.fixture
def toy_portfolio():
    """2 industries x 2 branches x 2 obs; strong branch contrast, no clipping."""
    rows = [
        ("A", "A1", 1.0, 1.0), ("A", "A1", 1.4, 1.0),
        ("A", "A2", 3.0, 2.0), ("A", "A2", 3.4, 2.0),
        ("B", "B1", 6.0, 1.0), ("B", "B1", 6.8, 3.0),
        ("B", "B2", 9.0, 2.0), ("B", "B2", 8.4, 1.0),
    ]
    obs = [
        make_obs(ind, br, f"{br}-u{i}", i % 2, w, y)
        for i, (ind, br, y, w) in enumerate(rows)
    ]
    return Portfolio.from_observations(obs)


@pytest.fixture
def covariate_portfolio():
    """Small portfolio with two covariates for design-matrix tests."""
    levels = [("size", ("S", "M", "L")), ("region", ("N", "E"))]
    schema = CovariateSchema(levels=dict(levels))
    obs = []
    rng = np.random.default_rng(7)
    for i in range(24):
        size = ("S", "M", "L")[i % 3]
        region = ("N", "E")[i % 2]
        ind = "IA" if i < 12 else "IB"
        br = f"{ind}-b{(i // 6) % 2}"
        obs.append(make_obs(
            ind, br, f"u{i}", i % 3, 1.0 + (i % 4), float(rng.gamma(2.0, 1.0)),
            covs=[("size", size), ("region", region)],
        ))
    return Portfolio.from_observations(obs, schema=schema)
