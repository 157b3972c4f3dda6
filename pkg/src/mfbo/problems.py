"""Benchmark problems: biased synthetic functions and CSV-backed candidate tables.

All problems expose the maximization convention: ``evaluate`` returns a value
to be maximized and ``optimum`` is its known maximum.  The synthetic
functions are minimization problems and are negated here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import HF, LF, FidelityModel, RngStream, SearchSpace, uniform_sample
from .errors import ConfigError, DataError

BRANIN_BOUNDS = ((-5.0, 10.0), (0.0, 15.0))
PARK_BOUNDS = ((0.0, 1.0),) * 4
PARK_X1_FLOOR = 1e-6
_BOUNDS_TOL = 1e-9


def _check_fidelity(l):
    if l not in (LF, HF):
        raise ValueError(f"fidelity must be 0 or 1, got {l!r}")


def _check_bounds(x, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if x.shape != lo.shape:
        raise ValueError(f"expected a {lo.size}-vector, got shape {x.shape}")
    if np.any(x < lo - _BOUNDS_TOL) or np.any(x > hi + _BOUNDS_TOL):
        raise ValueError(f"input {x} is outside the domain")


def branin(x, l: float, alpha: float) -> float:
    """Branin with an LF bias on the quadratic coefficient; HF ignores ``alpha``."""
    x = np.asarray(x, dtype=float)
    _check_bounds(x, BRANIN_BOUNDS)
    _check_fidelity(l)
    a = 1.0 if l == HF else alpha
    x1, x2 = x
    b = 5.1 / (4 * math.pi**2) - 0.1 * (1 - a)
    return float(
        (x2 - b * x1**2 + 5 / math.pi * x1 - 6) ** 2 + 10 * (1 - 1 / (8 * math.pi)) * math.cos(x1) + 10
    )


def park(x, l: float, alpha: float) -> float:
    """Park function with an LF bias on the x4 coefficient; x1 is floored at 1e-6."""
    x = np.asarray(x, dtype=float)
    _check_bounds(x, PARK_BOUNDS)
    _check_fidelity(l)
    a = 1.0 if l == HF else alpha
    x1, x2, x3, x4 = x
    x1 = max(x1, PARK_X1_FLOOR)
    first = x1 / 2 * (math.sqrt(1 + (x2 + x3**2) * x4 / x1**2) - 1)
    second = (x1 + (3 - 1.5 * (1 - a)) * x4) * math.exp(1 + math.sin(x3))
    return first + second


# Known minima of the HF functions.
BRANIN_MIN = branin((math.pi, 2.275), HF, 1.0)
PARK_MIN = park((0.0, 0.0, 0.0, 0.0), HF, 1.0)

_FAMILIES = {
    "branin": (branin, BRANIN_BOUNDS, BRANIN_MIN),
    "park": (park, PARK_BOUNDS, PARK_MIN),
}


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    family: str
    alpha: float
    fidelity_model: FidelityModel = field(default_factory=lambda: FidelityModel.two_level(0.1))

    def __post_init__(self):
        family = self.family.lower().replace("2d", "").replace("4d", "").strip("-_ ")
        if family not in _FAMILIES:
            raise ConfigError(f"unknown synthetic family {self.family!r} (expected branin or park)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "space", SearchSpace.continuous(_FAMILIES[family][1]))

    @classmethod
    def create(cls, family: str, alpha: float, rho: float = 0.1) -> "SyntheticProblem":
        return cls(family, float(alpha), FidelityModel.two_level(rho))

    @property
    def name(self) -> str:
        return f"{self.family}(alpha={self.alpha:g})"

    @property
    def optimum(self) -> float:
        return -_FAMILIES[self.family][2]

    def evaluate(self, x, fidelity: float) -> float:
        fn = _FAMILIES[self.family][0]
        return -fn(x, float(fidelity), self.alpha)

    def with_rho(self, rho: float) -> "SyntheticProblem":
        return replace(self, fidelity_model=FidelityModel.two_level(rho))

    def with_alpha(self, alpha: float) -> "SyntheticProblem":
        return replace(self, alpha=float(alpha))


@dataclass(frozen=True, eq=False)
class TabularProblem:
    """Candidate table with one HF and one LF value per row (row order is the candidate index)."""

    candidates: SearchSpace
    hf_values: np.ndarray
    lf_values: np.ndarray
    fidelity_model: FidelityModel
    name: str = "table"

    def __post_init__(self):
        hf = np.asarray(self.hf_values, dtype=float)
        lf = np.asarray(self.lf_values, dtype=float)
        if not self.candidates.is_discrete:
            raise ConfigError("a tabular problem needs a discrete search space")
        if not (hf.shape == lf.shape == (self.candidates.size,)):
            raise DataError("hf_values, lf_values and candidates must have equal length")
        hf.setflags(write=False)
        lf.setflags(write=False)
        object.__setattr__(self, "hf_values", hf)
        object.__setattr__(self, "lf_values", lf)

    @property
    def space(self) -> SearchSpace:
        return self.candidates

    @property
    def optimum(self) -> float:
        return float(np.max(self.hf_values))

    def evaluate(self, index, fidelity: float) -> float:
        _check_fidelity(float(fidelity))
        table = self.hf_values if float(fidelity) == HF else self.lf_values
        return float(table[int(index)])

    def with_rho(self, rho: float) -> "TabularProblem":
        return replace(self, fidelity_model=FidelityModel.two_level(rho))

    def with_lf(self, lf_values, name: str | None = None) -> "TabularProblem":
        return replace(self, lf_values=np.asarray(lf_values, dtype=float), name=name or self.name)


def normalize_features(X) -> np.ndarray:
    """Per-column min-max scaling to [0, 1]; constant columns map to 0."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return (X - lo) / span


def load_tabular(
    path,
    feature_cols=None,
    hf_col: str = "hf",
    lf_col: str = "lf",
    rho: float = 0.1,
    id_col: str | None = "id",
    name: str | None = None,
    negate: bool = False,
) -> TabularProblem:
    """Read a comma-separated table into a :class:`TabularProblem`.

    ``feature_cols=None`` uses every column except the value and id columns.
    ``id_col`` is optional in the file; when absent, row numbers are ids.
    Set ``negate`` for tables whose objective is to be minimized.  Row
    numbers in error messages count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = list(reader)

    for col in (hf_col, lf_col):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    has_id = id_col is not None and id_col in header
    if feature_cols is None:
        skip = {hf_col, lf_col} | ({id_col} if has_id else set())
        feature_cols = [h for h in header if h not in skip]
    feature_cols = list(feature_cols)
    if not feature_cols:
        raise DataError(f"{path}: no feature columns")
    for col in feature_cols:
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")

    pos = {h: i for i, h in enumerate(header)}
    used = feature_cols + [hf_col, lf_col]
    data = np.empty((len(rows), len(used)))
    ids = []
    for r, row in enumerate(rows):
        rownum = r + 2
        if not any(cell.strip() for cell in row):
            raise DataError(f"{path}: row {rownum} is empty")
        for c, col in enumerate(used):
            cell = row[pos[col]].strip() if pos[col] < len(row) else ""
            if cell == "":
                raise DataError(f"{path}: row {rownum}, column {col!r}: missing value")
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {rownum}, column {col!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}: row {rownum}, column {col!r}: non-finite value {cell!r}")
            data[r, c] = value
        ids.append(row[pos[id_col]].strip() if has_id and pos[id_col] < len(row) else r)

    if len(rows) == 0:
        raise DataError(f"{path}: no data rows")
    seen = {}
    for r, ident in enumerate(ids):
        if ident in seen:
            raise DataError(f"{path}: duplicate id {ident!r} in rows {seen[ident] + 2} and {r + 2}")
        seen[ident] = r

    features = normalize_features(data[:, : len(feature_cols)])
    sign = -1.0 if negate else 1.0
    return TabularProblem(
        candidates=SearchSpace.discrete(features, ids=ids),
        hf_values=sign * data[:, -2],
        lf_values=sign * data[:, -1],
        fidelity_model=FidelityModel.two_level(rho),
        name=name or path.stem,
    )


@dataclass(frozen=True)
class InformativenessReport:
    r_squared: float
    n_samples: int
    slope: float
    intercept: float
    degenerate: bool = False

    @property
    def r_squared_clamped(self) -> float:
        return max(self.r_squared, 0.0)


def informativeness_from_pairs(hf, lf) -> InformativenessReport:
    """R^2 of the least-squares fit ``hf ~ slope * lf + intercept``."""
    hf = np.asarray(hf, dtype=float)
    lf = np.asarray(lf, dtype=float)
    if hf.shape != lf.shape or hf.ndim != 1 or hf.size < 2:
        raise DataError("need at least two paired HF/LF values of equal length")
    n = hf.size
    lf_c = lf - lf.mean()
    hf_c = hf - hf.mean()
    sxx = float(lf_c @ lf_c)
    syy = float(hf_c @ hf_c)
    if sxx <= 0.0 or syy <= 0.0:
        return InformativenessReport(0.0, n, 0.0, float(hf.mean()), degenerate=True)
    slope = float(lf_c @ hf_c) / sxx
    intercept = float(hf.mean() - slope * lf.mean())
    resid = hf - (slope * lf + intercept)
    r2 = 1.0 - float(resid @ resid) / syy
    return InformativenessReport(r2, n, slope, intercept)


def estimate_informativeness(problem, n: int = 100, rng: RngStream | None = None) -> InformativenessReport:
    """Sample ``n`` inputs uniformly, evaluate both fidelities, and return the fit R^2."""
    rng = rng if rng is not None else RngStream(0)
    points = uniform_sample(problem.space, n, rng)
    hf = [problem.evaluate(p, HF) for p in points]
    lf = [problem.evaluate(p, LF) for p in points]
    return informativeness_from_pairs(hf, lf)


def degrade_lf(
    problem: TabularProblem,
    target_r2: float,
    rng: RngStream,
    n: int = 100,
    step: float = 0.05,
    max_rounds: int = 400,
) -> tuple:
    """Add seeded Gaussian noise to the LF column until estimated R^2 drops below ``target_r2``.

    The noise scale grows in multiples of ``step`` times the LF standard
    deviation.  Returns the degraded problem and a metadata dict describing
    how it was produced.
    """
    base = np.asarray(problem.lf_values, dtype=float)
    sd = float(np.std(base)) or 1.0
    unit_noise = rng.normal(size=base.shape)
    for k in range(1, max_rounds + 1):
        scale = k * step * sd
        lf = base + scale * unit_noise
        candidate = problem.with_lf(lf, name=f"{problem.name}-degraded")
        report = estimate_informativeness(candidate, n=min(n, problem.space.size), rng=rng.spawn(k))
        if report.r_squared < target_r2:
            meta = {
                "method": "additive gaussian noise on LF column",
                "noise_scale": scale,
                "noise_scale_in_lf_sd": k * step,
                "target_r2": target_r2,
                "estimated_r2": report.r_squared,
                "seed": rng.seed,
            }
            return candidate, meta
    raise DataError(f"could not push R^2 below {target_r2} within {max_rounds} noise increments")
