"""Expected improvement and max-value entropy search, single- and multi-fidelity.

Everything follows the maximization convention.  In multi-fidelity mode the
score of a query ``(x, l)`` is ``raw(x, l) / cost(l)``; the raw value of a
high-fidelity query is the plain acquisition, the raw value of a
low-fidelity query is weighted by how much that observation says about the
high-fidelity objective at ``x`` (posterior correlation between the two).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr
from scipy.stats import qmc

from .core import HF, FidelityModel, RngStream, SearchSpace
from .errors import ConfigError, ExhaustionError
from .surrogate import MultiFidelityGP

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# correlations are clipped below 1 so the conditional density stays smooth on the quadrature grid
_MAX_CORR = 0.995
_QUAD_POINTS = 96
_QUAD_HALF_WIDTH = 7.0
_MAX_GAMMA = 1e4


@dataclass(frozen=True)
class AcquisitionSpec:
    family: str = "EI"
    mode: str = "multi_fidelity"
    mes_max_samples: int = 16
    candidate_grid_size: int = 2048
    mes_grid_size: int = 1000
    refine_top: int = 5
    lf_rule: str = "correlated"

    def __post_init__(self):
        family = self.family.upper()
        if family not in ("EI", "MES"):
            raise ConfigError(f"acquisition family must be EI or MES, got {self.family!r}")
        object.__setattr__(self, "family", family)
        if self.mode not in ("single_fidelity", "multi_fidelity"):
            raise ConfigError(f"unknown acquisition mode {self.mode!r}")
        if self.mes_max_samples < 1:
            raise ConfigError("mes_max_samples must be at least 1")
        if self.candidate_grid_size < 1 or self.mes_grid_size < 1:
            raise ConfigError("grid sizes must be positive")
        if self.lf_rule not in ("correlated", "literal"):
            raise ConfigError(f"lf_rule must be 'correlated' or 'literal', got {self.lf_rule!r}")


@dataclass(frozen=True, eq=False)
class QueryDecision:
    x: np.ndarray
    fidelity: float
    acquisition_value: float
    raw_value: float
    index: int | None = None


def _log_pdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def expected_improvement(mean, std, incumbent):
    """Closed-form EI over ``incumbent``; reduces to max(mean - incumbent, 0) at std 0."""
    scalar = np.ndim(mean) == 0 and np.ndim(std) == 0
    mean, std = np.broadcast_arrays(
        np.atleast_1d(np.asarray(mean, dtype=float)), np.atleast_1d(np.asarray(std, dtype=float))
    )
    gap = mean - incumbent
    out = np.maximum(gap, 0.0)
    # for |z| > 40 the closed form equals max(gap, 0) to double precision
    pos = std * 40.0 > np.abs(gap)
    if np.any(pos):
        s = std[pos]
        z = gap[pos] / s
        out[pos] = s * (z * ndtr(z) + np.exp(_log_pdf(z)))
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def mes_value(mean, std, max_samples):
    """Max-value entropy reduction from observing the objective itself.

    Averages ``g*phi(g)/(2*Phi(g)) - log Phi(g)`` with ``g = (f* - mean)/std``
    over the sampled maxima; evaluated with ``log Phi`` so large negative
    ``g`` does not underflow.
    """
    return mes_value_mf(mean, std, max_samples, 1.0)


def mes_value_mf(mean, std, max_samples, correlation):
    """Entropy reduction about the high-fidelity maximum from a correlated observation.

    ``mean``/``std`` describe the high-fidelity posterior at the candidate and
    ``correlation`` is the posterior correlation between the observation
    actually made (e.g. a low-fidelity one) and the high-fidelity value.
    With truncation ``f_hf <= f*`` the gain is

        corr**2 * g*phi(g)/(2*Phi(g)) - log Phi(g) + E[log Phi((g - corr*u)/sqrt(1 - corr**2))]

    where the expectation is over the standardized observation ``u`` under
    the truncated joint law; it is computed by quadrature on a grid centred
    at the truncated mean.  ``correlation == 1`` gives the closed form.
    """
    scalar = np.ndim(mean) == 0 and np.ndim(std) == 0 and np.ndim(correlation) == 0
    mean, std, corr = np.broadcast_arrays(
        np.atleast_1d(np.asarray(mean, dtype=float)),
        np.atleast_1d(np.asarray(std, dtype=float)),
        np.atleast_1d(np.clip(np.abs(np.asarray(correlation, dtype=float)), 0.0, 1.0)),
    )
    samples = np.atleast_1d(np.asarray(max_samples, dtype=float))
    out = np.zeros(mean.shape)
    live = std > 0
    if not np.any(live):
        return float(out[0]) if scalar else out

    mu, sd, r = mean[live], std[live], corr[live]
    with np.errstate(over="ignore"):
        gamma = (samples[None, :] - mu[:, None]) / sd[:, None]  # (m, k)
    # beyond this the gain only grows like log|gamma|; the cap keeps phi/Phi finite
    gamma = np.clip(gamma, -_MAX_GAMMA, _MAX_GAMMA)
    log_cdf = log_ndtr(gamma)
    mills = np.exp(_log_pdf(gamma) - log_cdf)

    exact = r >= 1.0 - 1e-12
    gain = np.empty_like(gamma)
    gain[exact] = gamma[exact] * mills[exact] / 2.0 - log_cdf[exact]
    partial = ~exact
    if np.any(partial):
        rc = np.minimum(r[partial], _MAX_CORR)[:, None, None]
        g = gamma[partial][:, :, None]
        s = np.sqrt(1.0 - rc * rc)
        centre = -rc * mills[partial][:, :, None]
        u = centre + np.linspace(-_QUAD_HALF_WIDTH, _QUAD_HALF_WIDTH, _QUAD_POINTS)
        log_cdf_a = log_ndtr((g - rc * u) / s)
        log_w = _log_pdf(u) + log_cdf_a
        log_w -= log_w.max(axis=-1, keepdims=True)
        w = np.exp(log_w)
        expect = np.sum(w * log_cdf_a, axis=-1) / np.sum(w, axis=-1)
        r2 = rc[:, :, 0] ** 2
        gain[partial] = r2 * gamma[partial] * mills[partial] / 2.0 - log_cdf[partial] + expect
    out[live] = np.maximum(gain.mean(axis=1), 0.0)
    return float(out[0]) if scalar else out


def _fit_gumbel(mean, std, best):
    """Location/scale of a Gumbel matched to three quantiles of prod_i Phi((y - mu_i)/s_i)."""
    live = std > 0

    def log_cdf(y):
        y = np.atleast_1d(y)
        z = (y[:, None] - mean[None, live]) / std[None, live]
        lc = np.sum(log_ndtr(z), axis=1)
        # zero-variance points are step functions
        dead = mean[~live]
        if dead.size:
            lc = np.where(y[:, None] >= dead[None, :], 0.0, -np.inf).sum(axis=1) + lc
        return lc

    targets = np.log(np.array([0.25, 0.5, 0.75]))
    lo = np.full(3, min(float(np.min(mean - 6 * std)), best) - 1.0)
    hi = np.full(3, float(np.max(mean + 8 * std)) + 1.0)
    while np.any(log_cdf(hi) < targets):
        hi = hi + (hi - lo)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = log_cdf(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    q25, q50, q75 = 0.5 * (lo + hi)
    scale = (q75 - q25) / (math.log(-math.log(0.25)) - math.log(-math.log(0.75)))
    scale = max(scale, 1e-12)
    loc = q50 + scale * math.log(-math.log(0.5))
    return loc, scale


def sample_max_values(
    gp: MultiFidelityGP, grid_unit: np.ndarray, n_samples: int, rng: RngStream, best: float
) -> np.ndarray:
    """Gumbel-approximated samples of the high-fidelity maximum, clamped at ``best``."""
    mean, var = gp.posterior(grid_unit, HF)
    std = np.sqrt(var)
    if not np.any(std > 1e-12 * max(1.0, gp.y_scale)):
        return np.full(n_samples, float(best))
    loc, scale = _fit_gumbel(mean, std, best)
    u = rng.uniform(size=n_samples)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    draws = loc - scale * np.log(-np.log(u))
    return np.maximum(draws, best)


class Acquisition:
    """Raw acquisition values for one fitted surrogate at one iteration."""

    def __init__(
        self,
        gp: MultiFidelityGP,
        spec: AcquisitionSpec,
        incumbent: float,
        max_samples: np.ndarray | None = None,
    ):
        self.gp = gp
        self.spec = spec
        self.incumbent = float(incumbent)
        self.max_samples = max_samples

    def raw(self, Z: np.ndarray, fidelity: float) -> np.ndarray:
        Z = np.atleast_2d(Z)
        if fidelity == HF:
            mean, var = self.gp.posterior(Z, HF)
            std = np.sqrt(var)
            if self.spec.family == "EI":
                return expected_improvement(mean, std, self.incumbent)
            return mes_value(mean, std, self.max_samples)

        if self.spec.lf_rule == "literal":
            return self._raw_literal(Z, fidelity)
        m_lo, v_lo, m_hi, v_hi, cov = self.gp.posterior_pair(Z, fidelity, HF)
        s_hi = np.sqrt(v_hi)
        noise = self.gp.noise_std**2
        if self.spec.family == "EI":
            # augmented EI: correlation and noise discounts on the high-fidelity EI
            corr = _safe_corr(cov, v_lo, v_hi)
            noise_factor = 1.0 - np.sqrt(noise) / np.sqrt(v_lo + noise) if noise > 0 else 1.0
            return expected_improvement(m_hi, s_hi, self.incumbent) * corr * noise_factor
        corr = _safe_corr(cov, v_lo + noise, v_hi)
        return mes_value_mf(m_hi, s_hi, self.max_samples, corr)

    def _raw_literal(self, Z, fidelity):
        # EI on the posterior at the queried fidelity; MES at the HF posterior for every fidelity
        if self.spec.family == "EI":
            mean, var = self.gp.posterior(Z, fidelity)
            return expected_improvement(mean, np.sqrt(var), self.incumbent)
        mean, var = self.gp.posterior(Z, HF)
        return mes_value(mean, np.sqrt(var), self.max_samples)


def _safe_corr(cov, va, vb):
    denom = np.sqrt(va * vb)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, np.abs(cov) / denom, 0.0)
    return np.clip(r, 0.0, 1.0)


def cost_aware_argmax(raw: np.ndarray, costs) -> tuple:
    """Index (candidate, fidelity) maximizing raw/cost; ties go to the lowest index."""
    raw = np.atleast_2d(raw)
    scores = raw / np.asarray(costs, dtype=float)[None, :]
    flat = int(np.argmax(np.where(np.isnan(scores), -np.inf, scores)))
    return divmod(flat, raw.shape[1])


def build_acquisition(
    gp: MultiFidelityGP,
    space: SearchSpace,
    spec: AcquisitionSpec,
    observations: list,
    rng: RngStream,
) -> Acquisition:
    hf_ys = [o.y for o in observations if o.fidelity == HF]
    incumbent = max(hf_ys) if hf_ys else float(np.max(gp.posterior(gp.X, HF)[0]))
    samples = None
    if spec.family == "MES":
        if space.is_discrete:
            grid = space.candidates
            if grid.shape[0] > spec.mes_grid_size:
                grid = grid[rng.choice(grid.shape[0], spec.mes_grid_size, replace=False)]
        else:
            grid = rng.uniform(size=(spec.mes_grid_size, space.dim))
        hf_X = np.array([space.to_unit(o.x) for o in observations if o.fidelity == HF]).reshape(-1, space.dim)
        grid = np.vstack([grid, hf_X])
        samples = sample_max_values(gp, grid, spec.mes_max_samples, rng, incumbent)
    return Acquisition(gp, spec, incumbent, samples)


def _admissible(fidelity_model: FidelityModel, spec: AcquisitionSpec, fidelities) -> list:
    if spec.mode == "single_fidelity":
        levels = [HF]
    else:
        levels = list(fidelity_model.levels)
    if fidelities is not None:
        allowed = {float(f) for f in fidelities}
        levels = [lv for lv in levels if lv in allowed]
    if not levels:
        raise ConfigError("no admissible fidelity level")
    return sorted(levels)


def maximize(
    acq: Acquisition,
    space: SearchSpace,
    fidelity_model: FidelityModel,
    rng: RngStream,
    levels: list,
    queried: set | None = None,
    costs=None,
) -> QueryDecision:
    """Maximize raw/cost over (candidate, fidelity).

    Discrete spaces score every unqueried pair.  Continuous spaces score a
    scrambled Sobol grid in the unit cube and polish the best ``refine_top``
    pairs with bounded Nelder-Mead.
    """
    spec = acq.spec
    if costs is None:
        costs = [fidelity_model.cost(lv) for lv in levels]
    costs = np.asarray(costs, dtype=float)

    if space.is_discrete:
        Z = space.candidates
        raw = np.column_stack([acq.raw(Z, lv) for lv in levels])
        for i, lv in queried or ():
            if lv in levels:
                raw[i, levels.index(lv)] = np.nan
        if np.all(np.isnan(raw)):
            raise ExhaustionError("every (candidate, fidelity) pair has already been queried")
        i, j = cost_aware_argmax(raw, costs)
        return QueryDecision(
            x=space.candidates[i],
            fidelity=levels[j],
            acquisition_value=float(raw[i, j] / costs[j]),
            raw_value=float(raw[i, j]),
            index=int(i),
        )

    d = space.dim
    sobol = qmc.Sobol(d, scramble=True, seed=np.random.Generator(np.random.Philox(int(rng.integers(2**63)))))
    n_grid = spec.candidate_grid_size
    Z = sobol.random(n_grid) if n_grid & (n_grid - 1) else sobol.random_base2(int(math.log2(n_grid)))
    raw = np.column_stack([acq.raw(Z, lv) for lv in levels])
    scores = raw / costs[None, :]
    order = np.argsort(-scores, axis=None, kind="stable")[: spec.refine_top]

    best_z, best_j = None, None
    best_score, best_raw = -np.inf, 0.0
    i0, j0 = cost_aware_argmax(raw, costs)
    best_z, best_j, best_raw = Z[i0], j0, raw[i0, j0]
    best_score = scores[i0, j0]
    for flat in order:
        i, j = divmod(int(flat), len(levels))
        lv, cost = levels[j], costs[j]

        def neg(z, lv=lv, cost=cost):
            return -float(acq.raw(np.clip(z, 0.0, 1.0)[None, :], lv)[0]) / cost

        res = minimize(
            neg,
            Z[i],
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * d,
            options={"maxfev": 40 * d + 40, "xatol": 1e-4, "fatol": 1e-12},
        )
        if -res.fun > best_score:
            best_score = -res.fun
            best_z, best_j = np.clip(res.x, 0.0, 1.0), j
            best_raw = best_score * cost
    return QueryDecision(
        x=space.from_unit(best_z),
        fidelity=levels[best_j],
        acquisition_value=float(best_score),
        raw_value=float(best_raw),
    )


def next_query(
    gp: MultiFidelityGP,
    space: SearchSpace,
    fidelity_model: FidelityModel,
    spec: AcquisitionSpec,
    observations: list,
    rng: RngStream,
    fidelities=None,
) -> QueryDecision:
    """Pick the next (x, l) for a fitted surrogate.

    ``fidelities`` optionally restricts the admissible levels (the campaign
    uses this when the remaining budget only affords the cheap source).
    """
    levels = _admissible(fidelity_model, spec, fidelities)
    acq = build_acquisition(gp, space, spec, observations, rng)
    queried = None
    if space.is_discrete:
        queried = {(o.index, float(o.fidelity)) for o in observations if o.index is not None}
    return maximize(acq, space, fidelity_model, rng, levels, queried=queried)


__all__ = [
    "Acquisition",
    "AcquisitionSpec",
    "QueryDecision",
    "build_acquisition",
    "cost_aware_argmax",
    "expected_improvement",
    "maximize",
    "mes_value",
    "mes_value_mf",
    "next_query",
    "sample_max_values",
]
