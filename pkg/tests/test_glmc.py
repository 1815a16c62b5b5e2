import numpy as np
import pytest

from credrate.credibility import fit_jewell
from credrate.errors import DataValidationError
from credrate.glmc import (
    fit_glmc,
    predict_glmc,
    predict_glmc_portfolio,
    transform_for_credibility,
)
from credrate.portfolio import FamilySpec, Portfolio
from credrate.simulate import ExposureLaw, SimulationSpec, simulate_portfolio

from conftest import make_obs

TWEEDIE = FamilySpec("tweedie-log", 1.5)
GAUSS = FamilySpec("gaussian-identity")


def small_tweedie_portfolio(seed=9, covariates=None):
    spec = SimulationSpec(
        n_industries=4, branches_per_industry=3, units_per_branch=4, periods=3,
        family=FamilySpec("tweedie-log", 1.5), dispersion=1.0, intercept=0.3,
        sigma2_industry=0.3, sigma2_branch=0.1,
        exposure_law=ExposureLaw("log-uniform", 1.0, 100.0),
        covariate_effects=covariates, seed=seed,
    )
    return simulate_portfolio(spec)[0]


class TestTransform:
    def test_identity_when_gamma_is_one(self, toy_portfolio):
        for p in (1.2, 1.5, 1.9):
            resp, wt = transform_for_credibility(
                toy_portfolio, np.ones(len(toy_portfolio)), p
            )
            np.testing.assert_array_equal(resp, toy_portfolio.responses)
            np.testing.assert_array_equal(wt, toy_portfolio.exposures)

    def test_weight_unchanged_at_power_two(self, toy_portfolio):
        gamma = np.linspace(0.5, 2.0, len(toy_portfolio))
        _, wt = transform_for_credibility(toy_portfolio, gamma, 2.0)
        np.testing.assert_allclose(wt, toy_portfolio.exposures, rtol=1e-14)

    def test_nonpositive_gamma_rejected(self, toy_portfolio):
        gamma = np.ones(len(toy_portfolio))
        gamma[0] = 0.0
        with pytest.raises(DataValidationError):
            transform_for_credibility(toy_portfolio, gamma, 1.5)

    def test_monte_carlo_moment_identity(self):
        """Within one cell with known level mean and a gamma pattern, the
        transformed response has mean equal to that level and weighted
        variance matching the within variance over the transformed weight."""
        rng = np.random.default_rng(21)
        p, phi, v_level = 1.5, 1.0, 1.3
        n = 200_000
        gamma = np.exp(rng.normal(0.0, 0.4, n))
        w = rng.uniform(0.5, 2.0, n)
        mu = gamma * v_level
        lam = w * mu ** (2 - p) / (phi * (2 - p))
        shape = (2 - p) / (p - 1)
        scale = phi * (p - 1) * mu ** (p - 1)
        counts = rng.poisson(lam)
        owner = np.repeat(np.arange(n), counts)
        totals = np.zeros(n)
        np.add.at(totals, owner, rng.gamma(shape, np.repeat(scale, counts)))
        y = totals / w

        resp = y / gamma
        wt = w * gamma ** (2 - p)
        mean_t = np.sum(wt * resp) / np.sum(wt)
        assert mean_t == pytest.approx(v_level, rel=0.02)
        # E[Var(resp)] = sigma2 / wt with sigma2 = phi * v_level**p
        sigma2 = phi * v_level ** p
        standardized = (resp - v_level) * np.sqrt(wt / sigma2)
        assert np.var(standardized) == pytest.approx(1.0, rel=0.05)


class TestReductions:
    def test_gaussian_intercept_only_equals_additive_jewell(self):
        spec = SimulationSpec(
            n_industries=4, branches_per_industry=3, units_per_branch=3, periods=3,
            family=GAUSS, dispersion=1.0, intercept=1.0,
            sigma2_industry=0.5, sigma2_branch=0.25,
            exposure_law=ExposureLaw("log-uniform", 1.0, 100.0), seed=5,
        )
        pf, _ = simulate_portfolio(spec)
        jewell = fit_jewell(pf)
        combined = fit_glmc(pf, (), GAUSS)
        assert combined.converged
        for key in pf.branch_keys:
            ind, br = key
            assert predict_glmc(combined, ind, br) == pytest.approx(
                jewell.branch_predictor[key], abs=1e-8
            )

    def test_tweedie_intercept_only_matches_multiplicative_jewell(self):
        pf = small_tweedie_portfolio(seed=9)
        jewell = fit_jewell(pf)
        combined = fit_glmc(pf, (), TWEEDIE)
        assert combined.converged
        for ind in pf.industry_ids:
            expect = jewell.industry_predictor[ind] / jewell.mu_hat
            assert combined.u_industry[ind] == pytest.approx(expect, rel=1e-6)
        for key in pf.branch_keys:
            expect = jewell.branch_predictor[key] / jewell.industry_predictor[key[0]]
            assert combined.u_branch[key] == pytest.approx(expect, rel=1e-6)

    def test_covariate_free_predictions_coincide_with_jewell(self):
        pf = small_tweedie_portfolio(seed=13)
        jewell = fit_jewell(pf)
        combined = fit_glmc(pf, (), TWEEDIE)
        for key in pf.branch_keys:
            ours = predict_glmc(combined, key[0], key[1])
            assert ours == pytest.approx(jewell.branch_predictor[key], rel=1e-6)

    def test_single_cell_hierarchy_gives_unit_factors(self):
        spec = SimulationSpec(
            n_industries=1, branches_per_industry=1, units_per_branch=6, periods=2,
            family=FamilySpec("tweedie-log", 1.5), dispersion=1.0, intercept=0.0,
            seed=3,
        )
        pf, _ = simulate_portfolio(spec)
        fit = fit_glmc(pf, (), TWEEDIE)
        assert set(fit.u_industry.values()) == {1.0}
        assert set(fit.u_branch.values()) == {1.0}


class TestFixedPoint:
    def test_one_more_cycle_moves_factors_below_tolerance(self):
        pf = small_tweedie_portfolio(
            seed=31, covariates={"size": {"S": 0.0, "L": 0.5}}
        )
        fit = fit_glmc(pf, ("size",), TWEEDIE, tol=1e-8)
        assert fit.converged
        # run one explicit extra cycle from the converged state
        from credrate.glmc import _covariate_effect, _offsets
        from credrate.portfolio import build_design
        from credrate.glm import irls_fit

        design = build_design(pf, ("size",))
        u_ind = np.array([fit.u_industry[i] for i in pf.industry_ids])
        u_br = np.array([fit.u_branch[k] for k in pf.branch_keys])
        offset = _offsets(pf, u_ind, u_br, True)
        glm = irls_fit(design, pf.responses, pf.exposures, offset, TWEEDIE)
        gamma = np.exp(_covariate_effect(design, glm))
        resp, wt = transform_for_credibility(pf, gamma, fit.power)
        cred = fit_jewell(pf, response_override=resp, weight_override=wt,
                          allow_degenerate=True)
        v_ind = np.array([cred.industry_predictor[i] for i in pf.industry_ids])
        v_br = np.array([cred.branch_predictor[k] for k in pf.branch_keys])
        new_ind = v_ind / cred.mu_hat
        new_br = v_br / v_ind[pf.branch_industry]
        drift = max(np.max(np.abs(new_ind - u_ind) / u_ind),
                    np.max(np.abs(new_br - u_br) / u_br))
        assert drift < 10 * 1e-8

    def test_final_glm_offsets_equal_log_factors(self):
        pf = small_tweedie_portfolio(seed=17, covariates={"size": {"S": 0.0, "L": 0.5}})
        fit = fit_glmc(pf, ("size",), TWEEDIE)
        for i, obs in enumerate(pf.observations):
            expect = (np.log(fit.u_industry[obs.industry_id])
                      + np.log(fit.u_branch[(obs.industry_id, obs.branch_id)]))
            assert fit.glm.offset[i] == pytest.approx(expect, abs=1e-14)

    def test_additive_offsets_equal_factors(self):
        spec = SimulationSpec(
            n_industries=3, branches_per_industry=3, units_per_branch=3, periods=3,
            family=GAUSS, dispersion=1.0, intercept=1.0,
            sigma2_industry=0.4, sigma2_branch=0.2,
            covariate_effects={"size": {"S": 0.0, "L": 0.5}}, seed=23,
        )
        pf, _ = simulate_portfolio(spec)
        fit = fit_glmc(pf, ("size",), GAUSS)
        for i, obs in enumerate(pf.observations):
            expect = (fit.u_industry[obs.industry_id]
                      + fit.u_branch[(obs.industry_id, obs.branch_id)])
            assert fit.glm.offset[i] == pytest.approx(expect, abs=1e-14)

    def test_gaussian_balance_with_covariates(self):
        spec = SimulationSpec(
            n_industries=4, branches_per_industry=3, units_per_branch=3, periods=3,
            family=GAUSS, dispersion=1.0, intercept=1.0,
            sigma2_industry=0.4, sigma2_branch=0.2,
            exposure_law=ExposureLaw("log-uniform", 1.0, 500.0),
            covariate_effects={"size": {"S": 0.0, "L": 0.5}}, seed=29,
        )
        pf, _ = simulate_portfolio(spec)
        fit = fit_glmc(pf, ("size",), GAUSS)
        pred = predict_glmc_portfolio(fit, pf)
        w, y = pf.exposures, pf.responses
        assert abs(np.sum(w * pred) - np.sum(w * y)) / abs(np.sum(w * y)) < 1e-8

    def test_trajectory_recorded_and_shrinking(self):
        pf = small_tweedie_portfolio(seed=37, covariates={"size": {"S": 0.0, "L": 0.4}})
        fit = fit_glmc(pf, ("size",), TWEEDIE)
        assert len(fit.trajectory) == fit.iterations
        assert fit.trajectory[-1] < 1e-8

    def test_damping_converges_to_same_point(self):
        pf = small_tweedie_portfolio(seed=41, covariates={"size": {"S": 0.0, "L": 0.4}})
        plain = fit_glmc(pf, ("size",), TWEEDIE)
        damped = fit_glmc(pf, ("size",), TWEEDIE, damping=0.3)
        assert damped.converged
        for key in pf.branch_keys:
            assert damped.u_branch[key] == pytest.approx(plain.u_branch[key], rel=1e-5)

    def test_bad_damping_rejected(self, toy_portfolio):
        with pytest.raises(DataValidationError):
            fit_glmc(toy_portfolio, (), GAUSS, damping=1.0)

    def test_non_convergence_returns_best_state(self):
        pf = small_tweedie_portfolio(seed=83, covariates={"size": {"S": 0.0, "L": 0.4}})
        fit = fit_glmc(pf, ("size",), TWEEDIE, max_iter=1)
        assert not fit.converged
        assert fit.iterations == 1
        assert len(fit.trajectory) == 1
        # the returned state is still a usable model
        pred = predict_glmc_portfolio(fit, pf)
        assert np.all(np.isfinite(pred)) and np.all(pred > 0)


class TestPredict:
    def test_reference_levels_and_unit_factors_give_base(self):
        pf = small_tweedie_portfolio(seed=43, covariates={"size": {"S": 0.0, "L": 0.4}})
        fit = fit_glmc(pf, ("size",), TWEEDIE)
        pred = predict_glmc(fit, "unseen-ind", "unseen-br", {"size": "S"})
        assert pred == pytest.approx(fit.base_level, rel=1e-12)

    def test_multiplicative_in_branch_factor(self):
        pf = small_tweedie_portfolio(seed=47)
        fit = fit_glmc(pf, (), TWEEDIE)
        ind, br = pf.branch_keys[0]
        base = predict_glmc(fit, ind, br)
        import dataclasses
        doubled = dataclasses.replace(
            fit, u_branch={**fit.u_branch, (ind, br): 2 * fit.u_branch[(ind, br)]}
        )
        assert predict_glmc(doubled, ind, br) == pytest.approx(2 * base, rel=1e-12)

    def test_factor_recomposition(self):
        pf = small_tweedie_portfolio(seed=53, covariates={"size": {"S": 0.0, "L": 0.4}})
        fit = fit_glmc(pf, ("size",), TWEEDIE)
        obs = pf.observations[5]
        level = obs.covariate("size")
        gamma = np.exp(fit.glm.coefficients["size=L"]) if level == "L" else 1.0
        expect = (fit.base_level * gamma
                  * fit.u_industry[obs.industry_id]
                  * fit.u_branch[(obs.industry_id, obs.branch_id)])
        got = predict_glmc(fit, obs.industry_id, obs.branch_id, {"size": level})
        assert got == pytest.approx(expect, rel=1e-12)

    def test_unseen_levels_fall_back(self):
        pf = small_tweedie_portfolio(seed=59)
        fit = fit_glmc(pf, (), TWEEDIE)
        known_ind = pf.industry_ids[0]
        known_branch_factor = predict_glmc(fit, known_ind, "nope")
        assert known_branch_factor == pytest.approx(
            fit.base_level * fit.u_industry[known_ind], rel=1e-12
        )
        assert predict_glmc(fit, "nope", "nope") == pytest.approx(
            fit.base_level, rel=1e-12
        )

    def test_unknown_covariate_level_errors(self):
        pf = small_tweedie_portfolio(seed=61, covariates={"size": {"S": 0.0, "L": 0.4}})
        fit = fit_glmc(pf, ("size",), TWEEDIE)
        with pytest.raises(DataValidationError):
            predict_glmc(fit, pf.industry_ids[0], "x", {"size": "XXL"})

    def test_gaussian_additive_fallbacks_are_zero(self):
        spec = SimulationSpec(
            n_industries=3, branches_per_industry=2, units_per_branch=3, periods=2,
            family=GAUSS, dispersion=1.0, intercept=2.0,
            sigma2_industry=0.4, sigma2_branch=0.2, seed=67,
        )
        pf, _ = simulate_portfolio(spec)
        fit = fit_glmc(pf, (), GAUSS)
        assert predict_glmc(fit, "nope", "nope") == pytest.approx(
            fit.base_level, rel=1e-12
        )


class TestValidation:
    def test_negative_response_rejected_for_tweedie(self):
        obs = [
            make_obs("A", "A-b1", "u0", 0, 1.0, -0.5),
            make_obs("A", "A-b1", "u1", 0, 1.0, 1.0),
            make_obs("A", "A-b2", "u2", 0, 1.0, 1.0),
            make_obs("B", "B-b1", "u3", 0, 1.0, 2.0),
        ]
        pf = Portfolio.from_observations(obs)
        with pytest.raises(DataValidationError):
            fit_glmc(pf, (), TWEEDIE)

    def test_power_recorded_from_profile(self):
        pf = small_tweedie_portfolio(seed=71)
        fit = fit_glmc(pf, (), FamilySpec("tweedie-log", (1.4, 1.5, 1.6)))
        assert fit.power in (1.4, 1.5, 1.6)
        assert fit.power_profile is not None
        assert len(fit.power_profile.log_likelihoods) == 3
