"""Single- and multi-fidelity optimization loops."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionSpec, next_query
from .core import HF, LF, CampaignTrace, Observation, RngStream, latin_hypercube, uniform_sample
from .errors import ConfigError, ExhaustionError, MFBOError
from .surrogate import fit

log = logging.getLogger(__name__)

_COST_TOL = 1e-9
MODES = ("SFBO", "MFBO")


@dataclass(frozen=True)
class CampaignConfig:
    """Everything needed to run one optimization campaign per seed.

    ``total_budget`` is in HF-query units.  ``init_fraction`` of it buys the
    initial design; in MFBO mode ``init_hf_share`` of that goes to HF points
    and the rest to LF points.
    """

    problem: object
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    mode: str = "MFBO"
    total_budget: float = 50.0
    init_fraction: float = 0.10
    init_hf_share: float = 0.5
    seeds: tuple = tuple(range(20))
    restarts: int = 3
    min_init_hf: int = 2

    def __post_init__(self):
        mode = self.mode.upper()
        if mode not in MODES:
            raise ConfigError(f"mode must be SFBO or MFBO, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not 0.0 < self.init_fraction < 1.0:
            raise ConfigError(f"init_fraction must lie in (0, 1), got {self.init_fraction}")
        if not 0.0 < self.init_hf_share <= 1.0:
            raise ConfigError(f"init_hf_share must lie in (0, 1], got {self.init_hf_share}")
        if not self.total_budget > 0:
            raise ConfigError(f"total_budget must be positive, got {self.total_budget}")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        spec_mode = "single_fidelity" if mode == "SFBO" else "multi_fidelity"
        if self.acquisition.mode != spec_mode:
            object.__setattr__(self, "acquisition", replace(self.acquisition, mode=spec_mode))
        n_hf, n_lf = initial_design_counts(self)
        cost = n_hf + n_lf * self.problem.fidelity_model.cost(LF)
        if cost > self.total_budget + _COST_TOL:
            raise ConfigError(
                f"total_budget {self.total_budget} is smaller than the initial design cost {cost:g}"
            )

    def with_mode(self, mode: str) -> "CampaignConfig":
        return replace(self, mode=mode)


@dataclass
class CampaignResult:
    trace: CampaignTrace
    best_hf_value: float
    total_cost_spent: float
    terminated_reason: str
    seed: int
    mode: str
    family: str


def _afford(budget: float, cost: float) -> int:
    return int(math.floor(budget / cost + 1e-9))


def initial_design_counts(config: CampaignConfig) -> tuple:
    """Number of (HF, LF) initial points.

    Counts are floor(allocated budget / fidelity cost), with at least
    ``min_init_hf`` HF points so the incumbent and regret exist, and capped
    by the table size for discrete problems.
    """
    fm = config.problem.fidelity_model
    init_budget = config.total_budget * config.init_fraction
    if config.mode == "SFBO":
        n_hf, n_lf = _afford(init_budget, fm.cost(HF)), 0
    else:
        hf_budget = init_budget * config.init_hf_share
        n_hf = _afford(hf_budget, fm.cost(HF))
        n_lf = _afford(init_budget - hf_budget, fm.cost(LF))
    n_hf = max(n_hf, config.min_init_hf)
    space = config.problem.space
    if space.is_discrete:
        n_hf, n_lf = min(n_hf, space.size), min(n_lf, space.size)
    return n_hf, n_lf


def _initial_points(space, n: int, rng: RngStream) -> list:
    if n == 0:
        return []
    if space.is_discrete:
        return uniform_sample(space, n, rng)
    return latin_hypercube(space, n, rng)


def _observe(problem, point, fidelity: float) -> Observation:
    space = problem.space
    cost = problem.fidelity_model.cost(fidelity)
    if space.is_discrete:
        index = int(point)
        return Observation(space.candidates[index], fidelity, problem.evaluate(index, fidelity), cost, index)
    x = np.asarray(point, dtype=float)
    return Observation(x, fidelity, problem.evaluate(x, fidelity), cost)


def run_campaign(config: CampaignConfig, seed: int) -> CampaignResult:
    """Run one campaign: initial design, then fit / query / evaluate until the budget runs out.

    The initial design lists HF points before LF points.  Each iteration refits
    the surrogate (warm-started from the previous hyperparameters) and only
    offers fidelities whose cost fits in the remaining budget.
    """
    problem = config.problem
    space = problem.space
    fm = problem.fidelity_model
    rng = RngStream(seed)
    init_rng, fit_rng, acq_rng = rng.spawn(0), rng.spawn(1), rng.spawn(2)

    n_hf, n_lf = initial_design_counts(config)
    trace = CampaignTrace(seed=seed)
    for p in _initial_points(space, n_hf, init_rng.spawn(1)):
        trace.append(_observe(problem, p, HF))
    for p in _initial_points(space, n_lf, init_rng.spawn(0)):
        trace.append(_observe(problem, p, LF))
    trace.n_initial = len(trace)

    levels = [HF] if config.mode == "SFBO" else sorted(fm.levels)
    reason = "budget_exhausted"
    params = None
    step = 0
    while True:
        remaining = config.total_budget - trace.total_cost
        admissible = [lv for lv in levels if fm.cost(lv) <= remaining + _COST_TOL]
        if not admissible:
            break
        if space.is_discrete:
            taken = {(o.index, o.fidelity) for o in trace.observations}
            if all((i, lv) in taken for lv in admissible for i in range(space.size)):
                reason = "space_exhausted"
                break
        obs = trace.observations
        X = np.array([space.to_unit(o.x) for o in obs])
        gp = fit(
            X,
            [o.fidelity for o in obs],
            [o.y for o in obs],
            restarts=config.restarts,
            rng=fit_rng.spawn(step),
            warm_start=params,
        )
        params = gp.params
        try:
            decision = next_query(
                gp, space, fm, config.acquisition, obs, acq_rng.spawn(step), fidelities=admissible
            )
        except ExhaustionError:
            reason = "space_exhausted"
            break
        point = decision.index if space.is_discrete else decision.x
        trace.append(_observe(problem, point, decision.fidelity))
        step += 1
        log.debug("seed %d step %d: l=%g y=%.6g cost=%.4g", seed, step, decision.fidelity, trace.observations[-1].y, trace.total_cost)

    return CampaignResult(
        trace=trace,
        best_hf_value=trace.best_hf(),
        total_cost_spent=trace.total_cost,
        terminated_reason=reason,
        seed=seed,
        mode=config.mode,
        family=config.acquisition.family,
    )


class SuiteError(MFBOError, RuntimeError):
    """One or more seeds failed; ``failures`` maps seed to exception, ``results`` holds the rest."""

    def __init__(self, failures: dict, results: list):
        self.failures = failures
        self.results = results
        detail = "; ".join(f"seed {s}: {type(e).__name__}: {e}" for s, e in failures.items())
        super().__init__(f"{len(failures)} seed(s) failed: {detail}")


def _run_one(args):
    config, seed = args
    try:
        return seed, run_campaign(config, seed), None
    except Exception as exc:  # reported per seed by run_suite
        return seed, None, exc


def run_suite(config: CampaignConfig, seeds=None, workers: int = 1) -> list:
    """Run one campaign per seed, in seed order.  Seeds fail independently."""
    seeds = list(config.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    jobs = [(config, int(s)) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]
    failures = {s: e for s, _, e in outcomes if e is not None}
    results = [r for _, r, e in outcomes if e is None]
    if failures:
        raise SuiteError(failures, results)
    return results


TRACE_COLUMNS = ("step", "fidelity", "cost", "cumulative_cost", "y", "best_hf")


def write_trace_csv(trace: CampaignTrace, path, dim: int | None = None) -> Path:
    """Write a trace as CSV.

    Columns: step (1-based), fidelity, cost, cumulative_cost, y, best_hf
    (running best HF value, empty before the first HF row), x_0..x_{d-1},
    phase (``init`` or ``query``) and, for tables, the candidate row index.
    """
    path = Path(path)
    obs = trace.observations
    dim = dim if dim is not None else (len(obs[0].x) if obs else 0)
    discrete = any(o.index is not None for o in obs)
    header = list(TRACE_COLUMNS) + [f"x_{i}" for i in range(dim)] + ["phase"]
    if discrete:
        header.append("candidate")
    best = -math.inf
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, (o, cum) in enumerate(zip(obs, trace.cumulative_costs)):
            if o.fidelity == HF:
                best = max(best, o.y)
            row = [i + 1, repr(float(o.fidelity)), repr(float(o.cost)), repr(float(cum)), repr(float(o.y))]
            row.append(repr(best) if best > -math.inf else "")
            row += [repr(float(v)) for v in np.asarray(o.x, dtype=float)]
            row.append("init" if i < trace.n_initial else "query")
            if discrete:
                row.append(o.index)
            w.writerow(row)
    return path


def read_trace_csv(path, seed: int = 0) -> CampaignTrace:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        xcols = [c for c in reader.fieldnames if c.startswith("x_")]
        trace = CampaignTrace(seed=seed)
        n_init = 0
        for row in reader:
            index = int(row["candidate"]) if row.get("candidate") not in (None, "") else None
            trace.append(
                Observation(
                    x=np.array([float(row[c]) for c in xcols]),
                    fidelity=float(row["fidelity"]),
                    y=float(row["y"]),
                    cost=float(row["cost"]),
                    index=index,
                )
            )
            if row.get("phase") == "init":
                n_init += 1
    trace.n_initial = n_init
    return trace
