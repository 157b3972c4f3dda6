import numpy as np
import pytest

from mfbo.acquisition import AcquisitionSpec
from mfbo.campaign import (
    CampaignConfig,
    SuiteError,
    initial_design_counts,
    read_trace_csv,
    run_campaign,
    run_suite,
    write_trace_csv,
)
from mfbo.core import HF, LF, FidelityModel, SearchSpace
from mfbo.errors import ConfigError
from mfbo.problems import SyntheticProblem, TabularProblem

FAST = AcquisitionSpec("EI", candidate_grid_size=128, refine_top=2)
FAST_MES = AcquisitionSpec("MES", candidate_grid_size=128, refine_top=2, mes_grid_size=200, mes_max_samples=8)


def small_table(n=12, rho=0.25, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    hf = -np.sum((X - 0.6) ** 2, axis=1)
    return TabularProblem(SearchSpace.discrete(X), hf, 0.8 * hf + 0.1, FidelityModel.two_level(rho), name="toy")


class TestInitialDesign:
    def test_sfbo_counts(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, mode="SFBO", total_budget=50)
        assert initial_design_counts(cfg) == (5, 0)

    def test_mfbo_counts(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, mode="MFBO", total_budget=50)
        assert initial_design_counts(cfg) == (2, 25)

    def test_minimum_hf_points(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, mode="MFBO", total_budget=10)
        assert initial_design_counts(cfg)[0] == 2

    def test_budget_below_initial_design(self):
        with pytest.raises(ConfigError):
            CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, mode="MFBO", total_budget=1.5)

    @pytest.mark.parametrize(
        "kwargs", [{"init_fraction": 0.0}, {"init_fraction": 1.0}, {"mode": "XFBO"}, {"total_budget": -1}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, **kwargs)

    def test_acquisition_mode_follows_campaign(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.5), FAST, mode="sfbo")
        assert cfg.mode == "SFBO" and cfg.acquisition.mode == "single_fidelity"


class TestRunCampaign:
    def test_sfbo_run(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.5, 0.1), FAST, mode="SFBO", total_budget=8)
        res = run_campaign(cfg, 0)
        assert res.terminated_reason == "budget_exhausted"
        assert len(res.trace) == 8 and res.trace.n_initial == 2  # floor(0.8) raised to the HF minimum
        assert np.all(res.trace.fidelities == HF)
        assert res.total_cost_spent == 8.0

    @pytest.mark.parametrize("spec", [FAST, FAST_MES], ids=["EI", "MES"])
    def test_mfbo_run(self, spec):
        problem = SyntheticProblem.create("branin", 0.8, 0.1)
        cfg = CampaignConfig(problem, spec, mode="MFBO", total_budget=6)
        res = run_campaign(cfg, 1)
        trace = res.trace
        fids = trace.fidelities
        # HF initial points precede LF initial points
        assert fids[:2].tolist() == [HF, HF] and np.all(fids[2 : trace.n_initial] == LF)
        assert res.total_cost_spent <= 6 + 1e-9
        assert res.best_hf_value == trace.ys[fids == HF].max()
        assert res.best_hf_value <= problem.optimum
        assert all(problem.space.contains(o.x) for o in trace.observations)

    def test_budget_safety_and_exhaustion(self):
        problem = small_table(n=6, rho=0.3)
        cfg = CampaignConfig(problem, FAST, mode="MFBO", total_budget=4.1)
        res = run_campaign(cfg, 2)
        remaining = 4.1 - res.total_cost_spent
        assert remaining >= -1e-9
        assert remaining < 0.3 + 1e-9 or res.terminated_reason == "space_exhausted"
        # every prefix stays within budget
        assert np.all(res.trace.costs <= 4.1 + 1e-9)

    def test_discrete_space_exhausted(self):
        problem = small_table(n=3)
        cfg = CampaignConfig(problem, FAST, mode="SFBO", total_budget=100)
        res = run_campaign(cfg, 0)
        assert res.terminated_reason == "space_exhausted"
        assert len(res.trace) == 3
        assert sorted(o.index for o in res.trace.observations) == [0, 1, 2]
        assert res.best_hf_value == problem.optimum

    def test_discrete_pairs_never_repeat(self):
        res = run_campaign(CampaignConfig(small_table(n=8), FAST, mode="MFBO", total_budget=12), 3)
        pairs = [(o.index, o.fidelity) for o in res.trace.observations]
        assert len(pairs) == len(set(pairs))

    def test_incumbent_monotone(self):
        res = run_campaign(CampaignConfig(small_table(n=10), FAST, mode="MFBO", total_budget=8), 4)
        hf = res.trace.ys[res.trace.fidelities == HF]
        assert np.all(np.diff(np.maximum.accumulate(hf)) >= 0)

    def test_equal_costs_still_runs(self):
        problem = small_table(n=8, rho=1.0)
        res = run_campaign(CampaignConfig(problem, FAST, mode="MFBO", total_budget=6), 0)
        assert res.total_cost_spent <= 6


class TestSuite:
    def test_same_seed_identical(self):
        cfg = CampaignConfig(SyntheticProblem.create("branin", 0.8, 0.1), FAST, mode="MFBO", total_budget=5)
        a, b = run_suite(cfg, seeds=[7, 7])
        assert a.trace.ys.tolist() == b.trace.ys.tolist()
        assert np.array_equal(np.vstack([o.x for o in a.trace.observations]), np.vstack([o.x for o in b.trace.observations]))

    def test_order_and_count(self):
        cfg = CampaignConfig(small_table(n=4), FAST, mode="SFBO", total_budget=3)
        results = run_suite(cfg, seeds=range(20))
        assert [r.seed for r in results] == list(range(20))

    def test_empty_seeds(self):
        with pytest.raises(ConfigError):
            run_suite(CampaignConfig(small_table(n=4), FAST, mode="SFBO", total_budget=3), seeds=[])

    def test_failure_attribution(self):
        class Flaky(TabularProblem):
            def evaluate(self, index, fidelity):
                if self.name == "flaky" and index == 1:
                    raise RuntimeError("instrument offline")
                return super().evaluate(index, fidelity)

        base = small_table(n=3)
        flaky = Flaky(base.candidates, base.hf_values, base.lf_values, base.fidelity_model, name="flaky")
        cfg = CampaignConfig(flaky, FAST, mode="SFBO", total_budget=3)
        with pytest.raises(SuiteError) as info:
            run_suite(cfg, seeds=[0, 1])
        # candidate 1 is always evaluated on exhaustion, so every seed fails with its seed named
        assert set(info.value.failures) == {0, 1}
        assert "seed 0" in str(info.value)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        res = run_campaign(CampaignConfig(small_table(n=8), FAST, mode="MFBO", total_budget=5), 0)
        path = write_trace_csv(res.trace, tmp_path / "trace.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["step", "fidelity", "cost", "cumulative_cost", "y", "best_hf", "x_0", "x_1", "phase", "candidate"]
        back = read_trace_csv(path)
        assert back.ys.tolist() == res.trace.ys.tolist()
        assert back.costs.tolist() == res.trace.costs.tolist()
        assert back.n_initial == res.trace.n_initial
        assert [o.index for o in back.observations] == [o.index for o in res.trace.observations]
