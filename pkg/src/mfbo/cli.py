"""Command-line entry point: ``mfbo run | sweep | advise | estimate-r2``.

Configs are YAML files with four sections (problem, campaign, acquisition,
sweep) plus top-level ``seeds``, ``master_seed``, ``output`` and ``tau``.
Unknown keys are rejected.  Exit codes: 0 success, 1 configuration error,
2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .acquisition import AcquisitionSpec
from .campaign import CampaignConfig, SuiteError, run_suite, write_trace_csv
from .core import RngStream
from .errors import ConfigError, DataError, MFBOError
from .experiments import (
    DEFAULT_ALPHAS,
    DEFAULT_RHOS,
    DEFAULT_SWEEP_SEEDS,
    advise,
    fidelity_query_ratio,
    run_paired,
    run_sweep,
    write_heatmap_csv,
)
from .metrics import (
    aligned_regret_table,
    simple_regret_mf,
    simple_regret_sf,
    write_discount_json,
    write_regret_csv,
)
from .problems import (
    SyntheticProblem,
    degrade_lf,
    estimate_informativeness,
    informativeness_from_pairs,
    load_tabular,
)

log = logging.getLogger("mfbo")

OUTPUT_ENV = "MFBO_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

_SECTIONS = {
    "problem": {
        "kind", "family", "alpha", "rho", "path", "feature_cols", "hf_col", "lf_col", "id_col",
        "negate", "name", "degrade_r2", "degrade_seed",
    },
    "campaign": {"mode", "total_budget", "init_fraction", "init_hf_share", "restarts", "min_init_hf"},
    "acquisition": {
        "family", "mes_max_samples", "candidate_grid_size", "mes_grid_size", "refine_top", "lf_rule",
    },
    "sweep": {"rho_values", "alpha_values", "r2_samples", "r2_seed"},
}
_TOP = {"seeds", "master_seed", "output", "tau", "r2_samples"} | set(_SECTIONS)
RUN_MODES = ("SFBO", "MFBO", "PAIRED")


@dataclass
class RunConfig:
    """Validated contents of a config file."""

    problem: dict
    campaign: dict = field(default_factory=dict)
    acquisition: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    seeds: tuple = tuple(range(20))
    output: str = "mfbo-out"
    tau: float = 2.0
    r2_samples: int = 100
    source: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def families(self) -> list:
        fam = self.acquisition.get("family", ["EI", "MES"])
        return [f.upper() for f in ([fam] if isinstance(fam, str) else fam)]

    @property
    def mode(self) -> str:
        return str(self.campaign.get("mode", "paired")).upper()

    def digest(self) -> str:
        canonical = json.dumps(self.source, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()


def parse_seeds(value) -> tuple:
    """``10`` means seeds 0..9; ``"3-5"`` a range; ``"1,4,9"`` or a list an explicit set."""
    try:
        if isinstance(value, bool):
            raise ValueError
        if isinstance(value, int):
            if value < 1:
                raise ConfigError(f"seeds: a count must be at least 1, got {value} (write '0-0' for seed 0 alone)")
            return tuple(range(value))
        if isinstance(value, (list, tuple)):
            seeds = tuple(int(s) for s in value)
        else:
            text = str(value).strip()
            if text.isdigit():
                return parse_seeds(int(text))
            seeds = []
            for part in text.split(","):
                if "-" in part.strip()[1:]:
                    lo, hi = part.split("-", 1)
                    seeds.extend(range(int(lo), int(hi) + 1))
                else:
                    seeds.append(int(part))
            seeds = tuple(seeds)
    except (TypeError, ValueError):
        raise ConfigError(f"seeds: cannot parse {value!r}") from None
    if not seeds:
        raise ConfigError("seeds: empty seed list")
    return seeds


def _check_keys(section: str, data, allowed: set) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    return dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw, base_dir=Path(".")) -> RunConfig:
    raw = _check_keys("config", raw, _TOP)
    if "problem" not in raw:
        raise ConfigError("config: missing required section 'problem'")
    sections = {name: _check_keys(name, raw.get(name), keys) for name, keys in _SECTIONS.items()}
    master = raw.get("master_seed", 0)
    if not isinstance(master, int) or isinstance(master, bool):
        raise ConfigError(f"master_seed: expected an integer, got {master!r}")
    seeds = parse_seeds(raw.get("seeds", 20))
    if "seeds" not in raw or isinstance(raw["seeds"], int):
        seeds = tuple(master + s for s in seeds)
    cfg = RunConfig(
        problem=sections["problem"],
        campaign=sections["campaign"],
        acquisition=sections["acquisition"],
        sweep=sections["sweep"],
        seeds=seeds,
        output=str(raw.get("output", "mfbo-out")),
        tau=_number("tau", raw.get("tau", 2.0)),
        r2_samples=int(_number("r2_samples", raw.get("r2_samples", 100))),
        source=raw,
        base_dir=Path(base_dir),
    )
    if cfg.mode not in RUN_MODES:
        raise ConfigError(f"campaign.mode: expected SFBO, MFBO or paired, got {cfg.campaign.get('mode')!r}")
    if cfg.tau < 1:
        raise ConfigError(f"tau: must be at least 1, got {cfg.tau}")
    for fam in cfg.families:
        if fam not in ("EI", "MES"):
            raise ConfigError(f"acquisition.family: expected EI or MES, got {fam!r}")
    return cfg


def _number(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    return float(value)


def build_problem(cfg: RunConfig) -> tuple:
    """The configured problem and a metadata dict describing it."""
    p = dict(cfg.problem)
    kind = p.pop("kind", "tabular" if "path" in p else "synthetic")
    rho = _number("problem.rho", p.pop("rho", 0.1))
    if kind == "synthetic":
        extra = set(p) - {"family", "alpha"}
        if extra:
            raise ConfigError(f"problem: key(s) {', '.join(sorted(extra))} only apply to tabular problems")
        if "family" not in p:
            raise ConfigError("problem.family: required for synthetic problems")
        problem = SyntheticProblem.create(str(p["family"]), _number("problem.alpha", p.get("alpha", 1.0)), rho)
        return problem, _problem_meta(problem)
    if kind != "tabular":
        raise ConfigError(f"problem.kind: expected synthetic or tabular, got {kind!r}")
    if "path" not in p:
        raise ConfigError("problem.path: required for tabular problems")
    if "alpha" in p or "family" in p:
        raise ConfigError("problem: alpha/family only apply to synthetic problems")
    csv_path = Path(p["path"])
    if not csv_path.is_absolute():
        csv_path = cfg.base_dir / csv_path
    problem = load_tabular(
        csv_path,
        feature_cols=p.get("feature_cols"),
        hf_col=p.get("hf_col", "hf"),
        lf_col=p.get("lf_col", "lf"),
        rho=rho,
        id_col=p.get("id_col", "id"),
        name=p.get("name"),
        negate=bool(p.get("negate", False)),
    )
    meta = _problem_meta(problem)
    if p.get("degrade_r2") is not None:
        target = _number("problem.degrade_r2", p["degrade_r2"])
        problem, meta["lf_degradation"] = degrade_lf(problem, target, RngStream(int(p.get("degrade_seed", 0))))
        meta["problem"] = problem.name
    return problem, meta


def build_campaign(cfg: RunConfig, problem, family: str) -> CampaignConfig:
    acq = {k: v for k, v in cfg.acquisition.items() if k != "family"}
    camp = {k: v for k, v in cfg.campaign.items() if k != "mode"}
    mode = "SFBO" if cfg.mode == "SFBO" else "MFBO"
    try:
        spec = AcquisitionSpec(family, **acq)
        return CampaignConfig(problem, spec, mode=mode, seeds=cfg.seeds, **camp)
    except TypeError as exc:
        raise ConfigError(f"campaign/acquisition: {exc}") from None


def resolve_output(cfg: RunConfig, flag: str | None) -> Path:
    """``--out`` beats the environment variable, which beats the config file."""
    out = flag or os.environ.get(OUTPUT_ENV) or cfg.output
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.digest(),
        "config": cfg.source,
        "seeds": list(cfg.seeds),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _problem_meta(problem) -> dict:
    return {"problem": problem.name, "optimum": problem.optimum, "rho": problem.fidelity_model.rho}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg.seeds = parse_seeds(args.seeds)
    problem, meta = build_problem(cfg)
    out = resolve_output(cfg, args.out)
    summary = {}
    for fam in cfg.families:
        config = build_campaign(cfg, problem, fam)
        fam_dir = out / fam.lower()
        fam_dir.mkdir(exist_ok=True)
        dim = problem.space.dim
        if cfg.mode == "PAIRED":
            paired = run_paired(config, cfg.seeds, args.workers, cfg.tau)
            for r in paired.sf_results:
                write_trace_csv(r.trace, fam_dir / f"trace_sfbo_seed{r.seed}.csv", dim)
            for r in paired.mf_results:
                write_trace_csv(r.trace, fam_dir / f"trace_mfbo_seed{r.seed}.csv", dim)
            sf_reg = [simple_regret_sf(r.trace, problem.optimum) for r in paired.sf_results]
            mf_reg = [simple_regret_mf(r.trace, s.sf_costs, problem.optimum) for r, s in zip(paired.mf_results, sf_reg)]
            write_regret_csv(aligned_regret_table(sf_reg, mf_reg), fam_dir / "regret.csv")
            ratios = paired.query_ratios
            write_discount_json(
                paired.reports,
                paired.seeds,
                fam_dir / "discount.json",
                extra={
                    "family": fam,
                    "tau": cfg.tau,
                    "hf_fraction_per_seed": [q.hf_fraction for q in ratios],
                    "hf_fraction_mean": paired.mean_hf_fraction,
                    **meta,
                },
            )
            summary[fam] = {**paired.summary, "hf_fraction_mean": paired.mean_hf_fraction}
            print(f"{fam}: mean discount {paired.summary['mean']:.3f} (std {paired.summary['std']:.3f}, n={paired.summary['n']}), "
                  f"sequential HF fraction {paired.mean_hf_fraction:.2f}")
        else:
            results = run_suite(config, cfg.seeds, args.workers)
            tag = cfg.mode.lower()
            for r in results:
                write_trace_csv(r.trace, fam_dir / f"trace_{tag}_seed{r.seed}.csv", dim)
            per_seed = [
                {
                    "seed": r.seed,
                    "best_hf_value": r.best_hf_value,
                    "regret": problem.optimum - r.best_hf_value,
                    "total_cost_spent": r.total_cost_spent,
                    "terminated_reason": r.terminated_reason,
                    **({"hf_fraction": fidelity_query_ratio(r.trace).hf_fraction} if cfg.mode == "MFBO" and len(r.trace) > r.trace.n_initial else {}),
                }
                for r in results
            ]
            (fam_dir / "summary.json").write_text(
                json.dumps({"family": fam, "mode": cfg.mode, **meta, "per_seed": per_seed}, indent=2) + "\n",
                encoding="utf-8",
            )
            summary[fam] = {"final_regrets": [p["regret"] for p in per_seed]}
            print(f"{fam}: {len(results)} {cfg.mode} runs written to {fam_dir}")
    write_manifest(out, cfg, "run", {"mode": cfg.mode, "summary": summary, **meta})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg.seeds = parse_seeds(args.seeds)
    elif "seeds" not in cfg.source:
        # sweeps default to fewer seeds than single runs
        master = cfg.source.get("master_seed", 0)
        cfg.seeds = tuple(master + s for s in DEFAULT_SWEEP_SEEDS)
    p = cfg.problem
    if p.get("kind", "synthetic") != "synthetic" or "family" not in p:
        raise ConfigError("problem: a sweep needs a synthetic problem with a family")
    extra = set(p) - {"kind", "family", "alpha", "rho"}
    if extra:
        raise ConfigError(f"problem: key(s) {', '.join(sorted(extra))} do not apply to a sweep")
    sw = cfg.sweep
    acq = {k: v for k, v in cfg.acquisition.items() if k != "family"}
    camp = {k: v for k, v in cfg.campaign.items() if k != "mode"}
    total_budget = camp.pop("total_budget", 50.0)
    out = resolve_output(cfg, args.out)

    def progress(key, seed, error):
        if error is not None:
            log.warning("cell %s seed %s failed: %s", key, seed, error)

    grid = run_sweep(
        problem_family=str(p["family"]),
        rho_values=sw.get("rho_values", DEFAULT_RHOS),
        alpha_values=sw.get("alpha_values", DEFAULT_ALPHAS),
        families=cfg.families,
        seeds=cfg.seeds,
        total_budget=total_budget,
        acquisition=AcquisitionSpec(**acq) if acq else None,
        workers=args.workers,
        r2_samples=int(sw.get("r2_samples", 100)),
        r2_seed=int(sw.get("r2_seed", 0)),
        tau=cfg.tau,
        progress=progress,
        **camp,
    )
    write_heatmap_csv(grid, out / "heatmap.csv")
    trends = {}
    for fam in cfg.families:
        try:
            trends[fam] = grid.trend(fam)
        except MFBOError as exc:
            trends[fam] = {"error": str(exc)}
    failed = [r for r in grid.rows() if r["status"] != "ok"]
    write_manifest(out, cfg, "sweep", {"r_squared_by_alpha": grid.r_squared, "trend": trends, "failed_cells": len(failed)})
    for fam, t in trends.items():
        print(f"{fam}: {t}")
    if failed:
        print(f"{len(failed)} cell(s) failed; see the status column of heatmap.csv", file=sys.stderr)
    return EXIT_OK


def read_pairs(path) -> tuple:
    """Paired HF/LF values from a CSV with ``hf`` and ``lf`` columns (or two unnamed columns)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pairs file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [c.strip().lower() for c in rows[0]]
    if "hf" in header and "lf" in header:
        i, j = header.index("hf"), header.index("lf")
        body, first = rows[1:], 2
    else:
        try:
            [float(c) for c in rows[0][:2]]
        except ValueError:
            raise DataError(f"{path}: header needs 'hf' and 'lf' columns") from None
        i, j, body, first = 0, 1, rows, 1
    hf, lf = [], []
    for n, row in enumerate(body, start=first):
        try:
            hf.append(float(row[i]))
            lf.append(float(row[j]))
        except (ValueError, IndexError):
            raise DataError(f"{path}: row {n}: expected two numeric values") from None
    return hf, lf


def cmd_advise(args) -> int:
    if args.rho is None:
        raise ConfigError("--rho is required")
    if (args.r2 is None) == (args.pairs is None):
        raise ConfigError("give exactly one of --r2 or --pairs")
    if args.pairs is not None:
        report = informativeness_from_pairs(*read_pairs(args.pairs))
        r2 = report.r_squared_clamped
        print(f"estimated R^2 = {report.r_squared:.4f} from {report.n_samples} pairs")
    else:
        r2 = args.r2
    verdict = advise(args.rho, r2)
    print(verdict.explain())
    return EXIT_OK


def cmd_estimate_r2(args) -> int:
    if args.pairs is not None:
        report = informativeness_from_pairs(*read_pairs(args.pairs))
    else:
        if args.config is None:
            raise ConfigError("give --config or --pairs")
        cfg = load_config(args.config)
        problem, _ = build_problem(cfg)
        n = cfg.r2_samples
        if problem.space.is_discrete:
            n = min(n, problem.space.size)
        report = estimate_informativeness(problem, n=n, rng=RngStream(cfg.seeds[0]))
    print(json.dumps({"r_squared": report.r_squared, "n_samples": report.n_samples, "slope": report.slope,
                      "intercept": report.intercept, "degenerate": report.degenerate}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfbo", description="Multi-fidelity Bayesian optimization experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="YAML config file")
        p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
        p.add_argument("--seeds", help="seed count, range (0-9) or list (1,2,5); overrides the config")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel worker processes")

    p = sub.add_parser("run", help="run SFBO/MFBO campaigns and write traces, regrets and discounts")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="rho x alpha discount heatmap on a synthetic problem")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("advise", help="should MFBO be used for this LF source?")
    p.add_argument("--rho", type=float, help="LF/HF cost ratio")
    p.add_argument("--r2", type=float, help="informativeness R^2 of the LF source")
    p.add_argument("--pairs", help="CSV of paired hf,lf values to estimate R^2 from")
    p.set_defaults(func=cmd_advise)
    p = sub.add_parser("estimate-r2", help="estimate LF informativeness for a configured problem or paired values")
    p.add_argument("--config", help="YAML config file (problem section is used)")
    p.add_argument("--pairs", help="CSV of paired hf,lf values")
    p.set_defaults(func=cmd_estimate_r2)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SuiteError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (MFBOError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
