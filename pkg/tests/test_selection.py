import itertools

import numpy as np
import pytest

from credrate.errors import DataValidationError
from credrate.portfolio import FamilySpec
from credrate.selection import best_subset, cluster_1d, cluster_grid_search
from credrate.simulate import ExposureLaw, SimulationSpec, simulate_portfolio

TWEEDIE = FamilySpec("tweedie-log", 1.5)


def brute_force_wcss(values, weights, k):
    """Exhaustive search over contiguous partitions of the sorted values."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    n = len(xs)
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = [0, *cuts, n]
        total = 0.0
        for a, b in zip(bounds, bounds[1:]):
            seg, sw = xs[a:b], ws[a:b]
            center = np.sum(sw * seg) / np.sum(sw)
            total += np.sum(sw * (seg - center) ** 2)
        best = min(best, total)
    return best


class TestCluster1d:
    def test_k_equals_distinct_count_gives_zero_wcss(self):
        result = cluster_1d([3.0, 1.0, 2.0], None, 3)
        assert result.wcss == 0.0
        assert sorted(result.centers) == [1.0, 2.0, 3.0]
        # labels ordered by center
        assert result.labels == (2, 0, 1)

    def test_separated_pairs(self):
        result = cluster_1d([1.0, 1.1, 5.0, 5.1], None, 2)
        assert result.labels == (0, 0, 1, 1)
        assert result.centers == (pytest.approx(1.05), pytest.approx(5.05))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(120):
            n = int(rng.integers(2, 13))
            x = rng.normal(0.0, 1.0, n).round(3)
            k = int(rng.integers(1, min(4, len(np.unique(x))) + 1))
            w = rng.uniform(0.5, 2.0, n)
            ours = cluster_1d(x, w, k)
            assert ours.wcss == pytest.approx(brute_force_wcss(x, w, k), abs=1e-10)

    def test_fifty_values_three_clusters_vs_brute(self):
        rng = np.random.default_rng(7)
        x = rng.normal(0.0, 2.0, 50)
        ours = cluster_1d(x, None, 3)
        assert ours.wcss == pytest.approx(
            brute_force_wcss(x, np.ones(50), 3), rel=1e-12
        )

    def test_k_out_of_range(self):
        with pytest.raises(DataValidationError):
            cluster_1d([1.0, 1.0, 2.0], None, 3)  # only 2 distinct
        with pytest.raises(DataValidationError):
            cluster_1d([1.0, 2.0], None, 0)

    def test_weights_shift_boundaries(self):
        # heavy middle point pulls the boundary toward protecting its cluster
        x = [0.0, 1.0, 1.6, 3.0]
        light = cluster_1d(x, [1.0, 1.0, 1.0, 1.0], 2)
        heavy = cluster_1d(x, [1.0, 50.0, 1.0, 1.0], 2)
        assert light.wcss <= brute_force_wcss(x, [1, 1, 1, 1], 2) + 1e-12
        assert heavy.wcss == pytest.approx(
            brute_force_wcss(x, [1.0, 50.0, 1.0, 1.0], 2), rel=1e-12
        )


def selection_portfolio(seed, n_units=30, real_levels=None, noise_names=("noise1", "noise2")):
    effects = {"real": real_levels or {"A": 0.0, "B": 0.5, "C": -0.4}}
    for name in noise_names:
        effects[name] = {"u": 0.0, "v": 0.0}
    spec = SimulationSpec(
        n_industries=4, branches_per_industry=3, units_per_branch=n_units,
        periods=1, family=FamilySpec("tweedie-log", 1.5), dispersion=1.0,
        intercept=0.0, sigma2_industry=0.1, sigma2_branch=0.05,
        exposure_law=ExposureLaw("constant", 1.0),
        covariate_effects=effects, seed=seed,
    )
    return simulate_portfolio(spec)[0]


class TestBestSubset:
    def test_zero_candidates_single_entry(self, toy_portfolio):
        entries = best_subset(toy_portfolio, (), FamilySpec("gaussian-identity"))
        assert len(entries) == 1
        assert entries[0].covariates == ()

    def test_powerset_complete(self):
        pf = selection_portfolio(seed=1, n_units=8, noise_names=("noise1", "noise2"))
        entries = best_subset(pf, ("real", "noise1", "noise2"), TWEEDIE)
        assert len(entries) == 8
        seen = {e.covariates for e in entries}
        assert () in seen
        assert ("noise1", "noise2", "real") in seen

    def test_real_effect_ranks_first(self):
        pf = selection_portfolio(seed=2, n_units=80)
        entries = best_subset(pf, ("real", "noise1"), TWEEDIE)
        assert "real" in entries[0].covariates

    def test_candidate_forced_overlap_rejected(self, toy_portfolio):
        with pytest.raises(DataValidationError):
            best_subset(toy_portfolio, ("a",), TWEEDIE, forced_covariates=("a",))

    def test_cap_enforced(self, toy_portfolio):
        too_many = tuple(f"c{i}" for i in range(21))
        with pytest.raises(DataValidationError):
            best_subset(toy_portfolio, too_many, TWEEDIE)

    def test_fit_failures_become_infinite_aic(self):
        # a covariate with a single observed level cannot be encoded
        pf = selection_portfolio(seed=3, n_units=6,
                                 real_levels={"A": 0.0, "B": 0.5})
        entries = best_subset(pf, ("real", "missingcov"), TWEEDIE)
        bad = [e for e in entries if "missingcov" in e.covariates]
        assert bad and all(np.isinf(e.aic) for e in bad)
        assert all(e.error for e in bad)

    def test_deterministic_tie_break_ordering(self):
        pf = selection_portfolio(seed=4, n_units=10)
        entries = best_subset(pf, ("real", "noise1"), TWEEDIE)
        keys = [(e.aic, len(e.covariates), e.covariates) for e in entries]
        assert keys == sorted(keys)

    def test_forced_covariates_join_every_subset(self):
        from credrate.glmc import fit_glmc, glmc_aic

        pf = selection_portfolio(seed=12, n_units=15)
        entries = best_subset(pf, ("noise1",), TWEEDIE, forced_covariates=("real",))
        assert len(entries) == 2
        # the empty-candidate entry is the forced-only model
        empty = next(e for e in entries if e.covariates == ())
        forced_only = fit_glmc(pf, ("real",), TWEEDIE)
        assert empty.aic == pytest.approx(glmc_aic(forced_only), rel=1e-12)


class TestClusterGridSearch:
    def make_grouped_portfolio(self, seed=5, n_units=60):
        # ten levels generated from three true effect groups
        groups = {"l0": 0.0, "l1": 0.0, "l2": 0.0, "l3": 0.6, "l4": 0.6,
                  "l5": 0.6, "l6": 0.6, "l7": -0.5, "l8": -0.5, "l9": -0.5}
        spec = SimulationSpec(
            n_industries=3, branches_per_industry=2, units_per_branch=n_units,
            periods=1, family=FamilySpec("tweedie-log", 1.5), dispersion=1.0,
            intercept=0.0, sigma2_industry=0.05, sigma2_branch=0.02,
            exposure_law=ExposureLaw("constant", 1.0),
            covariate_effects={"zone": groups}, seed=seed,
        )
        return simulate_portfolio(spec)[0]

    def test_identity_grid_point_matches_unclustered_aic(self):
        from credrate.glmc import fit_glmc, glmc_aic

        pf = self.make_grouped_portfolio(seed=6, n_units=25)
        n_levels = len(pf.schema.levels["zone"])
        result = cluster_grid_search(pf, "zone", [n_levels], TWEEDIE)
        base = fit_glmc(pf, ("zone",), TWEEDIE)
        assert result.aic_by_k[n_levels] == pytest.approx(glmc_aic(base), rel=1e-9)

    def test_k_one_drops_the_covariate(self):
        from credrate.glmc import fit_glmc, glmc_aic

        pf = self.make_grouped_portfolio(seed=7, n_units=15)
        result = cluster_grid_search(pf, "zone", [1], TWEEDIE)
        assert result.best_k == 1
        assert set(result.mapping.values()) == {"c0"}
        plain = fit_glmc(pf, (), TWEEDIE)
        assert result.aic_by_k[1] == pytest.approx(glmc_aic(plain), rel=1e-9)

    def test_recovers_three_groups(self):
        pf = self.make_grouped_portfolio(seed=8, n_units=120)
        result = cluster_grid_search(pf, "zone", [1, 2, 3, 4, 5], TWEEDIE)
        assert result.best_k == 3
        # the recovered grouping matches the generative one
        buckets = {}
        for level, label in result.mapping.items():
            buckets.setdefault(label, set()).add(level)
        assert {frozenset(b) for b in buckets.values()} == {
            frozenset({"l0", "l1", "l2"}),
            frozenset({"l3", "l4", "l5", "l6"}),
            frozenset({"l7", "l8", "l9"}),
        }

    def test_cluster_effects_on_response_scale(self):
        # the intercept absorbs the sample mean of the few random-effect
        # draws, so only the effect ratios are identifiable
        pf = self.make_grouped_portfolio(seed=9, n_units=400)
        result = cluster_grid_search(pf, "zone", [3], TWEEDIE)
        effects = sorted(result.cluster_effects.values())
        assert effects[0] / effects[1] == pytest.approx(np.exp(-0.5), rel=0.2)
        assert effects[-1] / effects[1] == pytest.approx(np.exp(0.6), rel=0.2)

    def test_unknown_covariate_rejected(self, toy_portfolio):
        with pytest.raises(DataValidationError):
            cluster_grid_search(toy_portfolio, "ghost", [1], TWEEDIE)

    def test_bad_grid_rejected(self):
        pf = self.make_grouped_portfolio(seed=10, n_units=10)
        with pytest.raises(DataValidationError):
            cluster_grid_search(pf, "zone", [], TWEEDIE)
        with pytest.raises(DataValidationError):
            cluster_grid_search(pf, "zone", [99], TWEEDIE)
