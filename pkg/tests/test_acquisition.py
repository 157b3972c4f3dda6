import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mfbo.acquisition import (
    Acquisition,
    AcquisitionSpec,
    build_acquisition,
    cost_aware_argmax,
    expected_improvement,
    maximize,
    mes_value,
    mes_value_mf,
    next_query,
    sample_max_values,
)
from mfbo.core import HF, LF, FidelityModel, Observation, RngStream, SearchSpace, latin_hypercube
from mfbo.errors import ConfigError, ExhaustionError
from mfbo.problems import SyntheticProblem
from mfbo.surrogate import KernelParams, MultiFidelityGP, fit, gram


def branin_state(n_hf=12, n_lf=20, seed=0):
    problem = SyntheticProblem.create("branin", 0.8, 0.1)
    space = problem.space
    rng = RngStream(seed)
    obs = [Observation(x, HF, problem.evaluate(x, HF), 1.0) for x in latin_hypercube(space, n_hf, rng.spawn(0))]
    obs += [Observation(x, LF, problem.evaluate(x, LF), 0.1) for x in latin_hypercube(space, n_lf, rng.spawn(1))]
    X = np.array([space.to_unit(o.x) for o in obs])
    gp = fit(X, [o.fidelity for o in obs], [o.y for o in obs], restarts=3, rng=rng.spawn(2))
    return problem, gp, obs


class TestExpectedImprovement:
    def test_no_uncertainty_no_improvement(self):
        assert expected_improvement(0.5, 0.0, 1.0) == 0.0

    def test_no_uncertainty_with_improvement(self):
        assert expected_improvement(2.0, 0.0, 1.0) == pytest.approx(1.0)

    def test_at_incumbent(self):
        assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
        assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(0.39894, abs=1e-5)

    def test_increasing_std_at_incumbent(self):
        values = expected_improvement(np.zeros(5), np.array([0.1, 0.5, 1.0, 2.0, 4.0]), 0.0)
        assert np.all(np.diff(values) > 0)

    def test_vectorized_matches_scalar(self):
        m, s = np.array([0.0, 1.0, -2.0]), np.array([1.0, 0.0, 0.3])
        np.testing.assert_allclose(expected_improvement(m, s, 0.5), [expected_improvement(a, b, 0.5) for a, b in zip(m, s)])

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            mean, std, inc = rng.normal(), rng.uniform(0.05, 3.0), rng.normal()
            draws = np.maximum(mean + std * rng.standard_normal(1_000_000) - inc, 0.0)
            se = draws.std() / math.sqrt(draws.size)
            assert abs(expected_improvement(mean, std, inc) - draws.mean()) <= 3 * se + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(
        mean=st.floats(-1e3, 1e3),
        std=st.floats(0, 1e3),
        inc=st.floats(-1e3, 1e3),
    )
    def test_non_negative(self, mean, std, inc):
        assert expected_improvement(mean, std, inc) >= 0.0


class TestMES:
    def test_zero_std(self):
        assert mes_value(0.3, 0.0, [1.0, 2.0]) == 0.0

    def test_single_sample_at_mean(self):
        assert mes_value(0.0, 1.0, [0.0]) == pytest.approx(math.log(2), abs=1e-12)

    def test_far_sample_vanishes(self):
        assert mes_value(0.0, 1.0, [40.0]) < 1e-12

    def test_deep_tail_is_finite(self):
        # f* far below the mean: Phi(gamma) underflows in linear space
        v = mes_value(0.0, 1.0, [-40.0])
        assert np.isfinite(v) and v > 0

    def test_average_over_samples(self):
        a, b = mes_value(0.0, 1.0, [0.0]), mes_value(0.0, 1.0, [1.0])
        assert mes_value(0.0, 1.0, [0.0, 1.0]) == pytest.approx((a + b) / 2)

    @settings(max_examples=200, deadline=None)
    @given(
        mean=st.floats(-50, 50),
        std=st.floats(0, 50),
        samples=st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        corr=st.floats(0, 1),
    )
    def test_non_negative(self, mean, std, samples, corr):
        assert mes_value(mean, std, samples) >= 0.0
        assert mes_value_mf(mean, std, samples, corr) >= 0.0

    def test_uncorrelated_observation_is_worthless(self):
        assert mes_value_mf(0.0, 1.0, [0.5, 1.5], 0.0) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("gamma,r", [(0.0, 0.5), (1.3, 0.8), (-1.0, 0.3), (2.5, 0.95)])
    def test_correlated_gain_matches_numerical_mutual_information(self, gamma, r):
        # information about f <= f* carried by a jointly normal observation u with corr r
        phi_g = stats.norm.cdf(gamma)

        def trunc_density_u(u):
            return stats.norm.pdf(u) * stats.norm.cdf((gamma - r * u) / math.sqrt(1 - r * r)) / phi_g

        def neg_plogp(u):
            p = trunc_density_u(u)
            return -p * math.log(p) if p > 0 else 0.0

        # entropy reduction of the observation once f <= f* is known
        h_trunc, _ = integrate.quad(neg_plogp, -12, 12, limit=200)
        oracle = 0.5 * math.log(2 * math.pi * math.e) - h_trunc
        assert mes_value_mf(0.0, 1.0, [gamma], r) == pytest.approx(oracle, abs=1e-6)

    def test_correlated_gain_increases_with_correlation(self):
        values = mes_value_mf(np.zeros(5), np.ones(5), [0.7], np.array([0.0, 0.2, 0.5, 0.8, 0.99]))
        assert np.all(np.diff(values) > 0)
        assert values[-1] < mes_value(0.0, 1.0, [0.7])


class TestMaxValueSampling:
    def test_degenerate_posterior_returns_best(self):
        p = KernelParams(np.array([0.3]), noise_variance=0.0)
        gp = MultiFidelityGP([[0.0], [0.5], [1.0]], np.ones(3), [0.2, 0.9, 0.1], p)
        grid = np.array([[0.0], [0.5], [1.0]])
        np.testing.assert_array_equal(sample_max_values(gp, grid, 8, RngStream(0), 0.9), np.full(8, 0.9))

    def test_clamped_at_best(self):
        _, gp, obs = branin_state()
        best = max(o.y for o in obs if o.fidelity == HF)
        samples = sample_max_values(gp, RngStream(1).uniform(size=(500, 2)), 64, RngStream(2), best)
        assert samples.min() >= best

    def test_mean_exceeds_posterior_mean_max(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(6, 1))
        y = np.sin(6 * X[:, 0])
        gp = MultiFidelityGP(X, np.ones(6), y, KernelParams(np.array([0.05]), noise_variance=1e-4))
        grid = np.linspace(0, 1, 400)[:, None]
        samples = sample_max_values(gp, grid, 2000, RngStream(4), y.max())
        mean, _ = gp.posterior(grid, HF)
        assert samples.mean() >= mean.max()
        # Monte Carlo maxima of joint posterior draws on the same grid
        p = gp.params
        Kxx = gram(gp.X, gp.fidelities, gp.X, gp.fidelities, p) + p.noise_variance * np.eye(6)
        Kqx = gram(grid, np.ones(400), gp.X, gp.fidelities, p)
        Kqq = gram(grid, np.ones(400), grid, np.ones(400), p)
        cov = gp.y_scale**2 * (Kqq - Kqx @ np.linalg.solve(Kxx, Kqx.T))
        draws = rng.multivariate_normal(mean, cov, size=4000, method="eigh")
        mc_max = np.maximum(draws.max(axis=1), y.max())
        assert samples.mean() == pytest.approx(mc_max.mean(), abs=0.1 * mc_max.std() + 0.05)


class TestCostAwareArgmax:
    def test_cheap_fidelity_wins_on_equal_raw(self):
        # columns are fidelities in ascending order (LF, HF)
        i, j = cost_aware_argmax(np.array([[0.4, 0.4]]), [0.1, 1.0])
        assert j == 0

    def test_example_two_candidates(self):
        raw = np.array([[0.0, 0.4], [0.4, 0.0]])  # candidate 0 best at HF, candidate 1 at LF
        assert cost_aware_argmax(raw, [0.1, 1.0]) == (1, 0)

    def test_ties_lowest_candidate_then_lowest_fidelity(self):
        assert cost_aware_argmax(np.ones((3, 2)), [1.0, 1.0]) == (0, 0)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
    def test_common_cost_scaling(self, seed, scale):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(size=(20, 2))
        costs = np.array([rng.uniform(0.01, 1.0), 1.0])
        assert cost_aware_argmax(raw, costs) == cost_aware_argmax(raw, costs * scale)


class TestNextQuery:
    def test_single_fidelity_mode_never_returns_lf(self):
        problem, gp, obs = branin_state()
        spec = AcquisitionSpec("EI", mode="single_fidelity", candidate_grid_size=256)
        for s in range(3):
            d = next_query(gp, problem.space, problem.fidelity_model, spec, obs, RngStream(s))
            assert d.fidelity == HF
            assert d.acquisition_value == d.raw_value

    @pytest.mark.parametrize("family", ["EI", "MES"])
    def test_value_is_raw_over_cost(self, family):
        problem, gp, obs = branin_state()
        spec = AcquisitionSpec(family, candidate_grid_size=256)
        d = next_query(gp, problem.space, problem.fidelity_model, spec, obs, RngStream(0))
        assert d.acquisition_value == pytest.approx(d.raw_value / problem.fidelity_model.cost(d.fidelity))
        assert problem.space.contains(d.x)

    @pytest.mark.parametrize("family", ["EI", "MES"])
    def test_deterministic(self, family):
        problem, gp, obs = branin_state()
        spec = AcquisitionSpec(family, candidate_grid_size=256)
        a = next_query(gp, problem.space, problem.fidelity_model, spec, obs, RngStream(5))
        b = next_query(gp, problem.space, problem.fidelity_model, spec, obs, RngStream(5))
        np.testing.assert_array_equal(a.x, b.x)
        assert (a.fidelity, a.acquisition_value) == (b.fidelity, b.acquisition_value)

    @pytest.mark.parametrize("mode", ["single_fidelity", "multi_fidelity"])
    def test_audit_grid(self, mode):
        problem, gp, obs = branin_state()
        space, fm = problem.space, problem.fidelity_model
        spec = AcquisitionSpec("EI", mode=mode)
        rng = RngStream(7)
        d = next_query(gp, space, fm, spec, obs, rng)
        acq = build_acquisition(gp, space, spec, obs, RngStream(7))
        audit = np.random.default_rng(11).uniform(size=(10_000, 2))
        levels = [HF] if mode == "single_fidelity" else [LF, HF]
        audit_best = max(float(np.max(acq.raw(audit, lv))) / fm.cost(lv) for lv in levels)
        assert d.acquisition_value >= audit_best - 1e-6

    def test_discrete_excludes_queried_pairs(self):
        cands = np.linspace(0, 1, 4)[:, None]
        space = SearchSpace.discrete(cands)
        fm = FidelityModel.two_level(0.5)
        obs = [
            Observation(cands[i], lv, float(i) * 0.1 + lv, fm.cost(lv), index=i)
            for i in range(4)
            for lv in (LF, HF)
            if (i, lv) != (2, HF)
        ]
        gp = fit(cands[[o.index for o in obs]], [o.fidelity for o in obs], [o.y for o in obs], restarts=2, rng=RngStream(0))
        d = next_query(gp, space, fm, AcquisitionSpec("EI"), obs, RngStream(0))
        assert (d.index, d.fidelity) == (2, HF)
        obs.append(Observation(cands[2], HF, 1.2, 1.0, index=2))
        with pytest.raises(ExhaustionError):
            next_query(gp, space, fm, AcquisitionSpec("EI"), obs, RngStream(0))

    def test_restricting_fidelities(self):
        problem, gp, obs = branin_state()
        d = next_query(
            gp, problem.space, problem.fidelity_model, AcquisitionSpec("EI", candidate_grid_size=128), obs, RngStream(0), fidelities=[LF]
        )
        assert d.fidelity == LF


class TestSpec:
    def test_rejects_unknown_family(self):
        with pytest.raises(ConfigError):
            AcquisitionSpec("UCB")

    def test_family_case_insensitive(self):
        assert AcquisitionSpec("mes").family == "MES"

    def test_needs_samples(self):
        with pytest.raises(ConfigError):
            AcquisitionSpec("MES", mes_max_samples=0)
