import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mfbo.experiments as experiments
from mfbo.acquisition import AcquisitionSpec
from mfbo.core import HF, LF, CampaignTrace, Observation
from mfbo.errors import ConfigError, ModeError
from mfbo.experiments import (
    SweepCell,
    SweepGrid,
    advise,
    estimate_r2_by_alpha,
    fidelity_query_ratio,
    paired_config,
    read_heatmap_csv,
    run_paired,
    run_sweep,
    write_heatmap_csv,
)
from mfbo.problems import SyntheticProblem

FAST = AcquisitionSpec("EI", candidate_grid_size=128, refine_top=2)


def trace_with(initial, sequential):
    trace = CampaignTrace(seed=0)
    for l in list(initial) + list(sequential):
        trace.append(Observation(np.zeros(2), l, 0.0, 1.0 if l == HF else 0.1))
    trace.n_initial = len(initial)
    return trace


class TestAdvise:
    @pytest.mark.parametrize(
        "rho, r2, verdict",
        [(0.1, 0.9, "run_MFBO"), (0.5, 0.99, "run_SFBO"), (0.1, 0.5, "run_SFBO"), (0.065, 0.98, "run_MFBO"), (0.5, 0.49, "run_SFBO")],
    )
    def test_examples(self, rho, r2, verdict):
        assert advise(rho, r2).verdict == verdict

    def test_thresholds_are_strict(self):
        assert advise(0.2, 0.9).verdict == "run_SFBO"
        assert advise(0.1, 0.75).verdict == "run_SFBO"

    def test_explain_names_both_tests(self):
        text = advise(0.5, 0.99).explain()
        assert "tau1" in text and "tau2" in text and "run_SFBO" in text

    @pytest.mark.parametrize("rho", [0.0, -0.1])
    def test_rejects_non_positive_rho(self, rho):
        with pytest.raises(ConfigError):
            advise(rho, 0.9)

    @settings(max_examples=200, deadline=None)
    @given(rho=st.floats(1e-6, 10), r2=st.floats(-1, 1))
    def test_verdict_rule(self, rho, r2):
        v = advise(rho, r2)
        assert v.verdict == ("run_MFBO" if rho < 0.2 and r2 > 0.75 else "run_SFBO")
        assert advise(rho, r2) == v


class TestQueryRatio:
    def test_all_hf(self):
        q = fidelity_query_ratio(trace_with([HF, HF], [HF] * 5))
        assert (q.hf_fraction, q.lf_fraction) == (1.0, 0.0)

    def test_counts(self):
        q = fidelity_query_ratio(trace_with([HF, HF, LF], [HF] * 3 + [LF] * 7))
        assert (q.hf_fraction, q.lf_fraction) == (0.3, 0.7)
        assert (q.n_hf, q.n_lf) == (3, 7)

    def test_initial_design_not_counted(self):
        q = fidelity_query_ratio(trace_with([LF] * 10, [HF]))
        assert q.hf_fraction == 1.0

    def test_no_sequential_queries(self):
        with pytest.raises(ModeError):
            fidelity_query_ratio(trace_with([HF, HF], []))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from([HF, LF]), min_size=1, max_size=50))
    def test_fractions_sum_to_one(self, seq):
        q = fidelity_query_ratio(trace_with([HF, HF], seq))
        assert q.hf_fraction + q.lf_fraction == pytest.approx(1.0)


class TestPaired:
    def test_shared_seeds_and_reports(self):
        cfg = paired_config(SyntheticProblem.create("branin", 0.8, 0.1), "EI", 5.0, FAST)
        run = run_paired(cfg, seeds=[3, 4])
        assert [r.seed for r in run.sf_results] == [r.seed for r in run.mf_results] == [3, 4]
        assert all(r.mode == "SFBO" for r in run.sf_results) and all(r.mode == "MFBO" for r in run.mf_results)
        assert len(run.reports) == 2 and all(r.delta <= 1 for r in run.reports)
        assert run.summary["n"] == 2
        assert 0.0 <= run.mean_hf_fraction <= 1.0


@pytest.fixture(scope="module")
def small_grid():
    return run_sweep("branin", [0.1, 0.5], [0.2, 0.8], families=["EI"], seeds=[0, 1, 2], total_budget=5.0, acquisition=FAST)


class TestSweep:
    def test_cells_and_seeds(self, small_grid):
        assert len(small_grid.cells) == 4
        assert {(c.rho, c.alpha) for c in small_grid.cells} == {(0.1, 0.2), (0.1, 0.8), (0.5, 0.2), (0.5, 0.8)}
        for c in small_grid.cells:
            assert c.ok and c.n_seeds == 3
            assert c.delta_mean == pytest.approx(np.mean(c.deltas))

    def test_r2_once_per_alpha(self, small_grid):
        assert set(small_grid.r_squared) == {0.2, 0.8}
        assert small_grid.r_squared == estimate_r2_by_alpha("branin", [0.2, 0.8])

    def test_deterministic(self, small_grid):
        again = run_sweep("branin", [0.1, 0.5], [0.2, 0.8], families=["EI"], seeds=[0, 1, 2], total_budget=5.0, acquisition=FAST)
        assert again.rows() == small_grid.rows()

    def test_failed_cell_is_flagged(self, monkeypatch):
        real = experiments._run_one

        def flaky(job):
            config, seed = job
            if config.mode == "MFBO" and config.problem.fidelity_model.rho == 0.5:
                return seed, None, RuntimeError("instrument offline")
            return real(job)

        monkeypatch.setattr(experiments, "_run_one", flaky)
        grid = run_sweep("branin", [0.1, 0.5], [0.8], families=["EI"], seeds=[0], total_budget=5.0, acquisition=FAST)
        ok, bad = grid.cell(0.1, 0.8, "EI"), grid.cell(0.5, 0.8, "EI")
        assert ok.ok and ok.n_seeds == 1
        assert not bad.ok and "instrument offline" in bad.error and math.isnan(bad.delta_mean)
        statuses = {(r["rho"], r["status"].split(":")[0]) for r in grid.rows()}
        assert statuses == {(0.1, "ok"), (0.5, "failed")}

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            run_sweep("branin", [], [0.5], seeds=[0])


class TestTrend:
    def grid(self, deltas):
        rhos, alphas = (0.1, 0.3, 0.5), (0.0, 0.5, 1.0)
        cells = [SweepCell(r, a, "EI", (deltas(r, a),)) for r in rhos for a in alphas]
        return SweepGrid("branin", rhos, alphas, ("EI",), {0.0: 0.2, 0.5: 0.6, 1.0: 0.99}, cells)

    def test_signs(self):
        t = self.grid(lambda r, a: a - r).trend("EI")
        assert t["rho"] < 0 and t["r_squared"] > 0 and t["n_cells"] == 9

    def test_perfect_rank_correlation(self):
        # delta depends on rho only, so its rank correlation with rho is -1 up to ties in alpha
        t = self.grid(lambda r, a: -r).trend("EI")
        assert t["rho"] == pytest.approx(-1.0) and t["r_squared"] == pytest.approx(0.0)

    def test_too_few_cells(self):
        grid = SweepGrid("branin", (0.1,), (0.5,), ("EI",), {0.5: 0.5}, [SweepCell(0.1, 0.5, "EI", (0.2,))])
        with pytest.raises(ModeError):
            grid.trend("EI")


class TestHeatmapCsv:
    def test_round_trip(self, tmp_path, small_grid):
        path = write_heatmap_csv(small_grid, tmp_path / "heatmap.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["rho", "alpha", "r_squared", "acqf_family", "delta_mean", "delta_std", "n_seeds", "status"]
        back = read_heatmap_csv(path)
        assert back == small_grid.rows()

    def test_failed_cell_round_trip(self, tmp_path):
        grid = SweepGrid("branin", (0.1,), (0.5,), ("MES",), {0.5: 0.7}, [SweepCell(0.1, 0.5, "MES", error="boom")])
        (row,) = read_heatmap_csv(write_heatmap_csv(grid, tmp_path / "h.csv"))
        assert math.isnan(row["delta_mean"]) and row["n_seeds"] == 0 and row["status"] == "failed: boom"
