"""Domain types, search spaces and seeded randomness shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, UnsupportedSpaceError

HF = 1.0
LF = 0.0


class RngStream:
    """Seeded counter-based random stream (Philox).

    Philox output depends only on (key, counter), so draws are identical
    across platforms for a given seed.  ``spawn`` derives independent child
    streams from the parent seed and an integer path, without consuming the
    parent's counter.
    """

    def __init__(self, seed: int, path: Sequence[int] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.path])
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Continuous box or discrete candidate table.

    Continuous spaces carry ``bounds`` with shape (d, 2).  Discrete spaces
    carry ``candidates`` with shape (n, d) and one identifier per row.
    """

    kind: str
    bounds: np.ndarray | None = None
    candidates: np.ndarray | None = None
    ids: tuple | None = None

    def __post_init__(self):
        if self.kind == "continuous":
            b = np.asarray(self.bounds, dtype=float)
            if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1:
                raise ConfigError("bounds must be a non-empty list of (lo, hi) pairs")
            if not np.all(b[:, 0] < b[:, 1]):
                raise ConfigError("every bound must satisfy lo < hi")
            b.setflags(write=False)
            object.__setattr__(self, "bounds", b)
        elif self.kind == "discrete":
            c = np.asarray(self.candidates, dtype=float)
            if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] == 0:
                raise ConfigError("discrete space needs a non-empty (n, d) candidate array")
            ids = tuple(range(c.shape[0])) if self.ids is None else tuple(self.ids)
            if len(ids) != c.shape[0]:
                raise ConfigError("one identifier per candidate is required")
            if len(set(ids)) != len(ids):
                raise ConfigError("candidate identifiers must be unique")
            c.setflags(write=False)
            object.__setattr__(self, "candidates", c)
            object.__setattr__(self, "ids", ids)
        else:
            raise ConfigError(f"unknown space kind {self.kind!r}")

    @classmethod
    def continuous(cls, bounds) -> "SearchSpace":
        return cls("continuous", bounds=bounds)

    @classmethod
    def discrete(cls, candidates, ids=None) -> "SearchSpace":
        return cls("discrete", candidates=candidates, ids=ids)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def dim(self) -> int:
        if self.is_discrete:
            return self.candidates.shape[1]
        return self.bounds.shape[0]

    @property
    def size(self) -> int:
        if not self.is_discrete:
            raise UnsupportedSpaceError("a continuous space has no finite size")
        return self.candidates.shape[0]

    def to_unit(self, x) -> np.ndarray:
        """Map points into the unit cube used by the surrogate.

        Discrete candidates are assumed pre-scaled and pass through unchanged.
        """
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            return x
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (x - lo) / (hi - lo)

    def from_unit(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.is_discrete:
            return z
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.clip(lo + z * (hi - lo), lo, hi)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            return bool(np.any(np.all(self.candidates == x, axis=1)))
        return x.shape == (self.dim,) and bool(
            np.all(x >= self.bounds[:, 0]) and np.all(x <= self.bounds[:, 1])
        )


@dataclass(frozen=True)
class FidelityModel:
    """Two fidelity levels, LF at l=0 and HF at l=1, with HF cost 1."""

    levels: tuple = (LF, HF)
    costs: tuple = (0.1, 1.0)

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        costs = tuple(float(v) for v in self.costs)
        if levels != (LF, HF):
            raise ConfigError("exactly two fidelity levels (0, 1) are supported")
        if len(costs) != 2 or costs[1] != 1.0:
            raise ConfigError("the high-fidelity cost must be normalized to 1")
        if not 0.0 < costs[0] <= 1.0:
            raise ConfigError(f"cost ratio must lie in (0, 1], got {costs[0]}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "costs", costs)

    @classmethod
    def two_level(cls, rho: float) -> "FidelityModel":
        return cls(levels=(LF, HF), costs=(float(rho), 1.0))

    @property
    def rho(self) -> float:
        return self.costs[0] / self.costs[1]

    def cost(self, fidelity: float) -> float:
        try:
            return self.costs[self.levels.index(float(fidelity))]
        except ValueError:
            raise ConfigError(f"unknown fidelity level {fidelity!r}") from None


@dataclass(frozen=True, eq=False)
class Observation:
    """One evaluated query.  ``index`` is the candidate row for discrete spaces."""

    x: np.ndarray
    fidelity: float
    y: float
    cost: float
    index: int | None = None


@dataclass
class CampaignTrace:
    """Ordered observations of one campaign, initial design first."""

    seed: int
    observations: list = field(default_factory=list)
    cumulative_costs: list = field(default_factory=list)
    n_initial: int = 0

    def __post_init__(self):
        obs = list(self.observations)
        self.observations = []
        self.cumulative_costs = []
        for o in obs:
            self.append(o)

    def append(self, obs: Observation) -> None:
        if not obs.cost > 0:
            raise ConfigError(f"observation cost must be positive, got {obs.cost}")
        self.observations.append(obs)
        # fsum keeps e.g. ten LF costs of 0.1 summing to exactly 1.0
        self.cumulative_costs.append(math.fsum(o.cost for o in self.observations))

    def __len__(self):
        return len(self.observations)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([o.fidelity for o in self.observations], dtype=float)

    @property
    def ys(self) -> np.ndarray:
        return np.array([o.y for o in self.observations], dtype=float)

    @property
    def costs(self) -> np.ndarray:
        return np.array(self.cumulative_costs, dtype=float)

    @property
    def total_cost(self) -> float:
        return self.cumulative_costs[-1] if self.cumulative_costs else 0.0

    def best_hf(self) -> float:
        ys = [o.y for o in self.observations if o.fidelity == HF]
        return max(ys) if ys else -math.inf

    def is_single_fidelity(self) -> bool:
        return all(o.fidelity == HF for o in self.observations)


def latin_hypercube(space: SearchSpace, n: int, rng: RngStream) -> list:
    """Latin hypercube design: one point per equal-width stratum in every dimension."""
    if space.is_discrete:
        raise UnsupportedSpaceError(
            "Latin hypercube sampling needs a continuous space; use uniform_sample"
        )
    if n < 1:
        raise ConfigError("n must be at least 1")
    d = space.dim
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    z = (strata + rng.uniform(size=(n, d))) / n
    return list(space.from_unit(z))


def uniform_sample(space: SearchSpace, n: int, rng: RngStream) -> list:
    """Uniform i.i.d. draws in the box, or draws without replacement from a table.

    Discrete spaces return candidate row indices.
    """
    if n < 0:
        raise ConfigError("n must be non-negative")
    if space.is_discrete:
        if n > space.size:
            raise CapacityError(f"cannot draw {n} distinct points from {space.size} candidates")
        return [int(i) for i in rng.choice(space.size, size=n, replace=False)]
    if n == 0:
        return []
    lo, hi = space.bounds[:, 0], space.bounds[:, 1]
    return list(lo + rng.uniform(size=(n, space.dim)) * (hi - lo))


def as_matrix(points: Iterable) -> np.ndarray:
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        return np.empty((0, 0))
    return np.vstack(pts)
