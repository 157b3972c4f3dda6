"""Paired SF/MF experiments: scenarios, the cost/informativeness sweep, query ratios and the advisor."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .acquisition import AcquisitionSpec
from .campaign import CampaignConfig, SuiteError, _run_one
from .core import HF, CampaignTrace, RngStream
from .errors import ConfigError, ModeError
from .metrics import aggregate, paired_discounts
from .problems import SyntheticProblem, estimate_informativeness

DEFAULT_RHOS = (0.02, 0.05, 0.1, 0.2, 0.33, 0.5)
DEFAULT_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_SWEEP_SEEDS = tuple(range(10))

# Branin settings whose estimated R^2 sits well above 0.9 and well below 0.75
FAVORABLE = {"rho": 0.1, "alpha": 0.8}
UNFAVORABLE = {"rho": 0.5, "alpha": 0.2}


@dataclass(frozen=True)
class AdvisorVerdict:
    rho: float
    r_squared: float
    verdict: str
    tau1: float = 0.2
    tau2: float = 0.75

    @property
    def cheap_enough(self) -> bool:
        return self.rho < self.tau1

    @property
    def informative_enough(self) -> bool:
        return self.r_squared > self.tau2

    def explain(self) -> str:
        return (
            f"rho = {self.rho:g} {'<' if self.cheap_enough else '>='} tau1 = {self.tau1:g}; "
            f"R^2 = {self.r_squared:g} {'>' if self.informative_enough else '<='} tau2 = {self.tau2:g}; "
            f"verdict: {self.verdict}"
        )


def advise(rho: float, r_squared: float, tau1: float = 0.2, tau2: float = 0.75) -> AdvisorVerdict:
    """MFBO is worth it only for a cheap (rho < tau1) and informative (R^2 > tau2) LF source."""
    if not rho > 0:
        raise ConfigError(f"rho must be positive, got {rho}")
    if not math.isfinite(r_squared):
        raise ConfigError(f"R^2 must be finite, got {r_squared}")
    ok = rho < tau1 and r_squared > tau2
    return AdvisorVerdict(float(rho), float(r_squared), "run_MFBO" if ok else "run_SFBO", tau1, tau2)


@dataclass(frozen=True)
class QueryRatio:
    hf_fraction: float
    lf_fraction: float
    n_hf: int
    n_lf: int


def fidelity_query_ratio(trace: CampaignTrace) -> QueryRatio:
    """Share of HF and LF queries after the initial design."""
    seq = trace.fidelities[trace.n_initial :]
    if seq.size == 0:
        raise ModeError("trace has no sequential queries after the initial design")
    n_hf = int(np.sum(seq == HF))
    n_lf = int(seq.size - n_hf)
    return QueryRatio(n_hf / seq.size, n_lf / seq.size, n_hf, n_lf)


def _run_jobs(jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


@dataclass
class PairedRun:
    """SF and MF suites on one problem with shared seeds, and their per-seed discounts."""

    problem: object
    family: str
    seeds: tuple
    sf_results: list
    mf_results: list
    reports: list
    tau: float = 2.0

    @property
    def summary(self) -> dict:
        return aggregate(self.reports)

    @property
    def query_ratios(self) -> list:
        return [fidelity_query_ratio(r.trace) for r in self.mf_results]

    @property
    def mean_hf_fraction(self) -> float:
        return float(np.mean([q.hf_fraction for q in self.query_ratios]))


def paired_config(problem, family: str = "EI", total_budget: float = 50.0, acquisition: AcquisitionSpec | None = None, **kwargs) -> CampaignConfig:
    spec = replace(acquisition, family=family) if acquisition is not None else AcquisitionSpec(family)
    return CampaignConfig(problem, spec, mode="MFBO", total_budget=total_budget, **kwargs)


def run_paired(config: CampaignConfig, seeds=None, workers: int = 1, tau: float = 2.0) -> PairedRun:
    """Run SFBO and MFBO from the same seeds and compute one discount per seed."""
    seeds = tuple(int(s) for s in (config.seeds if seeds is None else seeds))
    if not seeds:
        raise ConfigError("at least one seed is required")
    sf_cfg, mf_cfg = config.with_mode("SFBO"), config.with_mode("MFBO")
    outcomes = _run_jobs([(sf_cfg, s) for s in seeds] + [(mf_cfg, s) for s in seeds], workers)
    modes = ["SFBO"] * len(seeds) + ["MFBO"] * len(seeds)
    failures = {(m, s): e for m, (s, _, e) in zip(modes, outcomes) if e is not None}
    if failures:
        raise SuiteError(failures, [r for _, r, e in outcomes if e is None])
    sf = [r for _, r, _ in outcomes[: len(seeds)]]
    mf = [r for _, r, _ in outcomes[len(seeds) :]]
    reports = paired_discounts(sf, mf, config.problem.optimum, tau)
    return PairedRun(config.problem, config.acquisition.family, seeds, sf, mf, reports, tau)


def run_scenario(
    rho: float,
    alpha: float,
    family: str = "EI",
    problem_family: str = "branin",
    seeds=DEFAULT_SWEEP_SEEDS,
    total_budget: float = 50.0,
    workers: int = 1,
    **kwargs,
) -> PairedRun:
    """Paired SF/MF run on a synthetic problem at one (rho, alpha) setting."""
    problem = SyntheticProblem.create(problem_family, alpha, rho)
    return run_paired(paired_config(problem, family, total_budget, **kwargs), seeds, workers)


@dataclass(frozen=True)
class SweepCell:
    rho: float
    alpha: float
    family: str
    deltas: tuple = ()
    hf_fractions: tuple = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def delta_mean(self) -> float:
        return float(np.mean(self.deltas)) if self.ok and self.deltas else math.nan

    @property
    def delta_std(self) -> float:
        return float(np.std(self.deltas)) if self.ok and self.deltas else math.nan

    @property
    def n_seeds(self) -> int:
        return len(self.deltas)


@dataclass
class SweepGrid:
    problem_family: str
    rho_values: tuple
    alpha_values: tuple
    families: tuple
    r_squared: dict
    cells: list = field(default_factory=list)

    def cell(self, rho: float, alpha: float, family: str) -> SweepCell:
        for c in self.cells:
            if c.rho == rho and c.alpha == alpha and c.family == family:
                return c
        raise KeyError((rho, alpha, family))

    def rows(self) -> list:
        return [
            {
                "rho": c.rho,
                "alpha": c.alpha,
                "r_squared": self.r_squared[c.alpha],
                "acqf_family": c.family,
                "delta_mean": c.delta_mean,
                "delta_std": c.delta_std,
                "n_seeds": c.n_seeds,
                "status": "ok" if c.ok else f"failed: {c.error}",
            }
            for c in self.cells
        ]

    def trend(self, family: str) -> dict:
        """Spearman correlation of cell-mean discount with rho and with R^2 (failed cells skipped)."""
        cells = [c for c in self.cells if c.family == family and c.ok]
        if len(cells) < 3:
            raise ModeError(f"need at least 3 successful {family} cells for a trend, got {len(cells)}")
        delta = [c.delta_mean for c in cells]
        rho_corr = spearmanr([c.rho for c in cells], delta).statistic
        r2_corr = spearmanr([self.r_squared[c.alpha] for c in cells], delta).statistic
        return {"rho": float(rho_corr), "r_squared": float(r2_corr), "n_cells": len(cells)}


def estimate_r2_by_alpha(problem_family: str, alpha_values, n: int = 100, seed: int = 0) -> dict:
    """One R^2 estimate per alpha, all drawn from the same fixed-seed sample."""
    return {
        float(a): estimate_informativeness(SyntheticProblem.create(problem_family, a), n=n, rng=RngStream(seed)).r_squared
        for a in alpha_values
    }


def run_sweep(
    problem_family: str = "branin",
    rho_values=DEFAULT_RHOS,
    alpha_values=DEFAULT_ALPHAS,
    families=("EI", "MES"),
    seeds=DEFAULT_SWEEP_SEEDS,
    total_budget: float = 50.0,
    acquisition: AcquisitionSpec | None = None,
    workers: int = 1,
    r2_samples: int = 100,
    r2_seed: int = 0,
    tau: float = 2.0,
    progress=None,
    **campaign_kwargs,
) -> SweepGrid:
    """Mean discount for every (rho, alpha, acquisition family) cell.

    SFBO never queries the LF source, so its traces do not depend on rho or
    alpha; one SFBO run per (family, seed) is shared by all cells of that
    family.  Every cell uses the same seed list, so cells are paired with
    one another as well as internally.  A cell whose runs fail is recorded
    with its error and the sweep moves on.
    """
    rho_values = tuple(float(r) for r in rho_values)
    alpha_values = tuple(float(a) for a in alpha_values)
    families = tuple(f.upper() for f in families)
    seeds = tuple(int(s) for s in seeds)
    if not (rho_values and alpha_values and families and seeds):
        raise ConfigError("sweep needs at least one rho, alpha, family and seed")
    r2 = estimate_r2_by_alpha(problem_family, alpha_values, r2_samples, r2_seed)
    grid = SweepGrid(problem_family, rho_values, alpha_values, families, r2)

    configs = {}
    jobs = []
    for fam in families:
        base = SyntheticProblem.create(problem_family, alpha_values[0], rho_values[0])
        sf_cfg = paired_config(base, fam, total_budget, acquisition, **campaign_kwargs).with_mode("SFBO")
        configs[(fam, "SF")] = sf_cfg
        jobs += [((fam, "SF"), (sf_cfg, s)) for s in seeds]
        for rho in rho_values:
            for alpha in alpha_values:
                problem = SyntheticProblem.create(problem_family, alpha, rho)
                cfg = paired_config(problem, fam, total_budget, acquisition, **campaign_kwargs)
                configs[(fam, rho, alpha)] = cfg
                jobs += [((fam, rho, alpha), (cfg, s)) for s in seeds]

    outcomes = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (key, job), out in zip(jobs, pool.map(_run_one, [j for _, j in jobs])):
                outcomes[(key, job[1])] = out
                if progress:
                    progress(key, job[1], out[2])
    else:
        for key, job in jobs:
            out = _run_one(job)
            outcomes[(key, job[1])] = out
            if progress:
                progress(key, job[1], out[2])

    for fam in families:
        sf_out = [outcomes[((fam, "SF"), s)] for s in seeds]
        for rho in rho_values:
            for alpha in alpha_values:
                mf_out = [outcomes[((fam, rho, alpha), s)] for s in seeds]
                errors = [f"SFBO seed {s}: {e}" for s, _, e in sf_out if e is not None]
                errors += [f"MFBO seed {s}: {e}" for s, _, e in mf_out if e is not None]
                if errors:
                    grid.cells.append(SweepCell(rho, alpha, fam, error="; ".join(errors)))
                    continue
                try:
                    problem = configs[(fam, rho, alpha)].problem
                    reports = paired_discounts([r for _, r, _ in sf_out], [r for _, r, _ in mf_out], problem.optimum, tau)
                    fractions = tuple(fidelity_query_ratio(r.trace).hf_fraction for _, r, _ in mf_out)
                except Exception as exc:  # recorded on the cell
                    grid.cells.append(SweepCell(rho, alpha, fam, error=f"{type(exc).__name__}: {exc}"))
                    continue
                grid.cells.append(SweepCell(rho, alpha, fam, tuple(r.delta for r in reports), fractions))
    return grid


HEATMAP_COLUMNS = ("rho", "alpha", "r_squared", "acqf_family", "delta_mean", "delta_std", "n_seeds", "status")


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_heatmap_csv(grid: SweepGrid, path) -> Path:
    """Long-format heatmap table; failed cells have empty statistics and a ``failed: ...`` status."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HEATMAP_COLUMNS)
        w.writeheader()
        for row in grid.rows():
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def read_heatmap_csv(path) -> list:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out = dict(row)
            for k in ("rho", "alpha", "r_squared", "delta_mean", "delta_std"):
                out[k] = float(row[k]) if row[k] != "" else math.nan
            out["n_seeds"] = int(row["n_seeds"])
            rows.append(out)
    return rows


__all__ = [
    "AdvisorVerdict",
    "DEFAULT_ALPHAS",
    "DEFAULT_RHOS",
    "FAVORABLE",
    "PairedRun",
    "QueryRatio",
    "SweepCell",
    "SweepGrid",
    "UNFAVORABLE",
    "advise",
    "estimate_r2_by_alpha",
    "fidelity_query_ratio",
    "paired_config",
    "read_heatmap_csv",
    "run_paired",
    "run_scenario",
    "run_sweep",
    "write_heatmap_csv",
]
