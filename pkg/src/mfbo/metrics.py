"""Regret alignment between single- and multi-fidelity runs, and the discount metric."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import HF, CampaignTrace
from .errors import AlignmentError, ConfigError, ModeError

# cumulative costs are sums of floats; a k-th cost within this relative slack counts as "<="
COST_RTOL = 1e-9


def cost_leq(a: float, b: float) -> bool:
    return a <= b + COST_RTOL * max(1.0, abs(b))


@dataclass(frozen=True, eq=False)
class RegretTrace:
    values: np.ndarray
    sf_costs: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DiscountReport:
    delta: float
    r_star_corrected: float
    b_sf: float | None
    b_mf: float
    tau: float = 2.0

    @property
    def sf_unreachable(self) -> bool:
        return self.b_sf is None


def simple_regret_sf(trace: CampaignTrace, f_star: float) -> RegretTrace:
    """Regret of the best HF value after each observation (initial design included)."""
    if not trace.is_single_fidelity():
        raise ModeError("simple_regret_sf needs a trace with high-fidelity observations only")
    if len(trace) == 0:
        raise ModeError("empty trace")
    ys = trace.ys
    return RegretTrace(values=f_star - np.maximum.accumulate(ys), sf_costs=trace.costs)


def simple_regret_mf(trace: CampaignTrace, sf_costs, f_star: float) -> RegretTrace:
    """Align HF regrets of a multi-fidelity trace onto the single-fidelity cost grid.

    Step ``i`` gets the smallest HF regret among observations whose cumulative
    cost does not exceed ``sf_costs[i]``; LF observations are ignored.
    """
    sf_costs = np.asarray(sf_costs, dtype=float)
    fid = trace.fidelities
    hf = fid == HF
    r_hf = f_star - trace.ys[hf]
    c_hf = trace.costs[hf]
    if sf_costs.size == 0:
        return RegretTrace(values=np.empty(0), sf_costs=sf_costs)
    # running minimum over HF observations sorted by cost (costs are already non-decreasing)
    run_min = np.minimum.accumulate(r_hf) if r_hf.size else r_hf
    out = np.empty(sf_costs.size)
    k = 0
    for i, budget in enumerate(sf_costs):
        while k < c_hf.size and cost_leq(c_hf[k], budget):
            k += 1
        if k == 0:
            raise AlignmentError(
                f"no high-fidelity observation within budget {budget:g} (first single-fidelity step {i + 1})"
            )
        out[i] = run_min[k - 1]
    return RegretTrace(values=out, sf_costs=sf_costs)


def _first_budget(regret: RegretTrace, target: float):
    hits = np.nonzero(regret.values <= target)[0]
    return float(regret.sf_costs[hits[0]]) if hits.size else None


def discount(sf: RegretTrace, mf: RegretTrace, tau: float = 2.0) -> DiscountReport:
    """Budget saving of the MF run relative to the SF run at ``tau`` times the best MF regret.

    Both budgets are read on the shared single-fidelity cost grid (earliest
    step reaching the target).  If the SF run never reaches the target the
    discount is 1.
    """
    if len(mf) == 0 or len(sf) == 0:
        raise AlignmentError("empty regret trace")
    r_star = float(np.min(mf.values)) * tau
    b_mf = _first_budget(mf, r_star)
    if b_mf is None:
        raise AlignmentError(
            f"multi-fidelity run never reaches its own corrected regret {r_star:g} (tau={tau} < 1?)"
        )
    b_sf = _first_budget(sf, r_star)
    if b_sf is None:
        return DiscountReport(1.0, r_star, None, b_mf, tau)
    return DiscountReport((b_sf - b_mf) / b_sf, r_star, b_sf, b_mf, tau)


def paired_discounts(sf_results, mf_results, f_star: float, tau: float = 2.0) -> list:
    """Per-seed discounts for SF and MF campaign results that share seeds pairwise."""
    sf_results, mf_results = list(sf_results), list(mf_results)
    if [r.seed for r in sf_results] != [r.seed for r in mf_results]:
        raise ConfigError(
            "discounts compare runs started from the same seed; seed lists differ: "
            f"{[r.seed for r in sf_results]} vs {[r.seed for r in mf_results]}"
        )
    reports = []
    for s, m in zip(sf_results, mf_results):
        sf_r = simple_regret_sf(s.trace, f_star)
        mf_r = simple_regret_mf(m.trace, sf_r.sf_costs, f_star)
        reports.append(discount(sf_r, mf_r, tau))
    return reports


def aggregate(reports) -> dict:
    reports = list(reports)
    if not reports:
        raise ConfigError("cannot aggregate an empty list of discount reports")
    deltas = np.array([r.delta for r in reports], dtype=float)
    return {
        "mean": float(np.mean(deltas)),
        "std": float(np.std(deltas)),
        "min": float(np.min(deltas)),
        "max": float(np.max(deltas)),
        "n": int(deltas.size),
    }


REGRET_COLUMNS = ("step", "sf_cost", "regret_sf_mean", "regret_sf_std", "regret_mf_mean", "regret_mf_std")


def aligned_regret_table(sf_regrets, mf_regrets) -> list:
    """Rows of cross-seed mean/std regret on the common SF cost grid."""
    sf_regrets, mf_regrets = list(sf_regrets), list(mf_regrets)
    if not sf_regrets:
        raise ConfigError("no regret traces")
    n = min(len(r) for r in sf_regrets + mf_regrets)
    grid = sf_regrets[0].sf_costs[:n]
    S = np.array([r.values[:n] for r in sf_regrets])
    M = np.array([r.values[:n] for r in mf_regrets]) if mf_regrets else np.full((1, n), np.nan)
    return [
        {
            "step": i + 1,
            "sf_cost": float(grid[i]),
            "regret_sf_mean": float(S[:, i].mean()),
            "regret_sf_std": float(S[:, i].std()),
            "regret_mf_mean": float(M[:, i].mean()),
            "regret_mf_std": float(M[:, i].std()),
        }
        for i in range(n)
    ]


def write_regret_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REGRET_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def read_regret_csv(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _jsonable(report: DiscountReport) -> dict:
    d = asdict(report)
    d["sf_unreachable"] = report.sf_unreachable
    return d


def write_discount_json(reports, seeds, path, extra: dict | None = None) -> Path:
    reports = list(reports)
    payload = {
        "summary": aggregate(reports),
        "per_seed": [{"seed": int(s), **_jsonable(r)} for s, r in zip(seeds, reports)],
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def read_discount_json(path) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    payload["reports"] = [
        DiscountReport(p["delta"], p["r_star_corrected"], p["b_sf"], p["b_mf"], p["tau"])
        for p in payload["per_seed"]
    ]
    return payload
