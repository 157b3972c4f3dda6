"""Multi-fidelity Gaussian-process surrogate.

The covariance between (x, l) and (x', l') is

    s2 * exp(-0.5 * sum_i (x_i - x'_i)**2 / lam_i) * (c + (1 - l)**(1 + delta) * (1 - l')**(1 + delta))

where ``lam`` are squared length scales in the unit cube, ``c`` the fidelity
offset, ``delta`` the fidelity exponent and ``s2`` an output scale.  Outputs
are standardized (pooled over fidelities) before fitting, and fitted models
carry one constant prior mean per observed fidelity level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize

from .core import RngStream
from .errors import FitError

LOG_2PI = math.log(2.0 * math.pi)
DELTA_EPS = 1e-6

# Log-space box for the optimizer (squared length scales live in the unit cube).
_LOG_BOUNDS = {
    "length_scales": (math.log(1e-3), math.log(1e2)),
    "fidelity_offset": (math.log(1e-3), math.log(1e2)),
    "fidelity_exponent": (math.log(DELTA_EPS), math.log(10.0 + DELTA_EPS)),
    "signal_variance": (math.log(1e-3), math.log(1e2)),
    "noise_variance": (math.log(1e-6), math.log(1.0)),
}
_JITTER_START = 1e-8
_JITTER_CAP = 1e-2


@dataclass(frozen=True, eq=False)
class KernelParams:
    length_scales: np.ndarray
    fidelity_offset: float = 1.0
    fidelity_exponent: float = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 1e-2

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        if np.any(lam <= 0):
            raise ValueError("length scales must be positive")
        if self.fidelity_offset < 0 or self.fidelity_exponent < 0:
            raise ValueError("fidelity offset and exponent must be non-negative")
        if self.signal_variance <= 0 or self.noise_variance < 0:
            raise ValueError("signal variance must be positive, noise variance non-negative")
        object.__setattr__(self, "length_scales", lam)

    @classmethod
    def default(cls, dim: int) -> "KernelParams":
        return cls(length_scales=np.full(dim, 0.5))

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.log(self.length_scales),
                [
                    math.log(max(self.fidelity_offset, 1e-300)),
                    math.log(self.fidelity_exponent + DELTA_EPS),
                    math.log(self.signal_variance),
                    math.log(max(self.noise_variance, 1e-300)),
                ],
            ]
        )

    @classmethod
    def from_vector(cls, theta) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(
            length_scales=np.exp(theta[:-4]),
            fidelity_offset=math.exp(theta[-4]),
            fidelity_exponent=max(math.exp(theta[-3]) - DELTA_EPS, 0.0),
            signal_variance=math.exp(theta[-2]),
            noise_variance=math.exp(theta[-1]),
        )

    def log_bounds(self) -> list:
        return [_LOG_BOUNDS["length_scales"]] * self.dim + [
            _LOG_BOUNDS["fidelity_offset"],
            _LOG_BOUNDS["fidelity_exponent"],
            _LOG_BOUNDS["signal_variance"],
            _LOG_BOUNDS["noise_variance"],
        ]


def kernel_input(x, x2, length_scales) -> float:
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    lam = np.asarray(length_scales, dtype=float)
    if x.shape != x2.shape or x.shape != lam.shape:
        raise ValueError(f"dimension mismatch: {x.shape}, {x2.shape}, {lam.shape}")
    return float(np.exp(-0.5 * np.sum((x - x2) ** 2 / lam)))


def _fidelity_weight(l, delta):
    base = np.clip(1.0 - np.asarray(l, dtype=float), 0.0, 1.0)
    return base ** (1.0 + delta)


def kernel_fidelity(l: float, l2: float, c: float, delta: float) -> float:
    return float(c + _fidelity_weight(l, delta) * _fidelity_weight(l2, delta))


def kernel_full(a, b, params: KernelParams) -> float:
    """Covariance between ``a = (x, l)`` and ``b = (x', l')``."""
    (x, l), (x2, l2) = a, b
    return (
        params.signal_variance
        * kernel_input(x, x2, params.length_scales)
        * kernel_fidelity(l, l2, params.fidelity_offset, params.fidelity_exponent)
    )


def _sq_dists(X1, X2) -> np.ndarray:
    # (d, n1, n2) per-dimension squared differences
    return (X1.T[:, :, None] - X2.T[:, None, :]) ** 2


def gram(X1, l1, X2, l2, params: KernelParams) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != params.dim or X2.shape[1] != params.dim:
        raise ValueError(
            f"input dimension {X1.shape[1]}/{X2.shape[1]} does not match kernel dimension {params.dim}"
        )
    sq = np.zeros((X1.shape[0], X2.shape[0]))
    for i, lam in enumerate(params.length_scales):
        sq += np.subtract.outer(X1[:, i], X2[:, i]) ** 2 / lam
    w1 = _fidelity_weight(l1, params.fidelity_exponent)
    w2 = _fidelity_weight(l2, params.fidelity_exponent)
    return params.signal_variance * np.exp(-0.5 * sq) * (params.fidelity_offset + np.outer(w1, w2))


def _prior_diag(l, params: KernelParams) -> np.ndarray:
    w = _fidelity_weight(l, params.fidelity_exponent)
    return params.signal_variance * (params.fidelity_offset + w * w)


def _robust_cholesky(A: np.ndarray):
    """Cholesky with escalating diagonal jitter; returns (L, jitter)."""
    try:
        return cholesky(A, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    scale = float(np.mean(np.diag(A))) if A.size else 1.0
    jitter = _JITTER_START
    eye = np.eye(A.shape[0])
    while jitter <= _JITTER_CAP * (1 + 1e-9):
        try:
            return cholesky(A + jitter * scale * eye, lower=True, check_finite=False), jitter * scale
        except LinAlgError:
            jitter *= 10.0
    raise FitError("kernel matrix is not positive definite even with maximal jitter")


def _level_design(fidelities: np.ndarray):
    """Distinct fidelity levels and their one-hot design, or ``(None, None)`` for one level."""
    levels = np.unique(fidelities)
    if levels.size < 2:
        return None, None
    return levels, (fidelities[:, None] == levels[None, :]).astype(float)


def _gls_residual(L: np.ndarray, H, z: np.ndarray):
    """Generalized least-squares offsets ``beta`` and the residual ``z - H beta``."""
    if H is None:
        return None, z
    AinvH = cho_solve((L, True), H, check_finite=False)
    beta = np.linalg.solve(H.T @ AinvH, AinvH.T @ z)
    return beta, z - H @ beta


class MultiFidelityGP:
    """Exact GP posterior for fixed hyperparameters (immutable after construction).

    With ``fidelity_means=True`` and data at two or more fidelities, each
    observed level gets its own constant prior mean, estimated by generalized
    least squares and plugged in (its uncertainty is not added to the
    variance).  Otherwise the prior mean is zero.
    """

    def __init__(
        self,
        X,
        fidelities,
        y,
        params: KernelParams,
        standardize: bool = True,
        fidelity_means: bool = False,
    ):
        X = np.asarray(X, dtype=float).reshape(-1, params.dim)
        self.X = X
        self.fidelities = np.asarray(fidelities, dtype=float).reshape(-1)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if not (len(self.X) == len(self.fidelities) == len(self.y)):
            raise ValueError("X, fidelities and y must have equal length")
        self.params = params
        n = len(self.y)
        if standardize and n > 0:
            self.y_mean = float(np.mean(self.y))
            sd = float(np.std(self.y))
            self.y_scale = sd if sd > 0 else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self._z = (self.y - self.y_mean) / self.y_scale
        K = gram(X, self.fidelities, X, self.fidelities, params)
        A = K + params.noise_variance * np.eye(n)
        self.L, self.jitter = _robust_cholesky(A)
        self.levels, H = _level_design(self.fidelities) if fidelity_means else (None, None)
        self.beta, self._resid = _gls_residual(self.L, H, self._z)
        self.alpha = cho_solve((self.L, True), self._resid, check_finite=False) if n else np.zeros(0)
        self.fit_info: dict = {}

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def noise_std(self) -> float:
        """Observation noise standard deviation in output units."""
        return math.sqrt(self.params.noise_variance) * self.y_scale

    def _prior_mean(self, lq: np.ndarray) -> np.ndarray:
        if self.beta is None:
            return np.zeros(lq.shape)
        # unobserved levels borrow the offset of the nearest observed one
        idx = np.argmin(np.abs(lq[:, None] - self.levels[None, :]), axis=1)
        return self.beta[idx]

    def _project(self, Xq, lq):
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.params.dim:
            raise ValueError(
                f"query dimension {Xq.shape[1]} does not match model dimension {self.params.dim}"
            )
        lq = np.broadcast_to(np.asarray(lq, dtype=float), (Xq.shape[0],))
        if self.n == 0:
            return Xq, lq, np.zeros((Xq.shape[0], 0)), np.zeros((0, Xq.shape[0]))
        Ks = gram(Xq, lq, self.X, self.fidelities, self.params)
        V = solve_triangular(self.L, Ks.T, lower=True, check_finite=False)
        return Xq, lq, Ks, V

    def posterior(self, Xq, lq):
        """Latent posterior mean and variance at query points ``(Xq, lq)``."""
        _, lq, Ks, V = self._project(Xq, lq)
        mean = self._prior_mean(lq) + Ks @ self.alpha
        var = _prior_diag(lq, self.params) - np.sum(V * V, axis=0)
        var = np.maximum(var, 0.0)
        return mean * self.y_scale + self.y_mean, var * self.y_scale**2

    def posterior_pair(self, Xq, la: float, lb: float):
        """Marginals at fidelities ``la`` and ``lb`` plus their cross-covariance."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        _, lqa, Ka, Va = self._project(Xq, la)
        _, lqb, Kb, Vb = self._project(Xq, lb)
        p = self.params
        wa = _fidelity_weight(lqa, p.fidelity_exponent)
        wb = _fidelity_weight(lqb, p.fidelity_exponent)
        var_a = np.maximum(_prior_diag(lqa, p) - np.sum(Va * Va, axis=0), 0.0)
        var_b = np.maximum(_prior_diag(lqb, p) - np.sum(Vb * Vb, axis=0), 0.0)
        cov = p.signal_variance * (p.fidelity_offset + wa * wb) - np.sum(Va * Vb, axis=0)
        s, s2 = self.y_scale, self.y_scale**2
        return (
            (self._prior_mean(lqa) + Ka @ self.alpha) * s + self.y_mean,
            var_a * s2,
            (self._prior_mean(lqb) + Kb @ self.alpha) * s + self.y_mean,
            var_b * s2,
            cov * s2,
        )

    def log_marginal_likelihood(self) -> float:
        """Log evidence of the (standardized) outputs under the current parameters.

        With fidelity means this is the profile likelihood at the GLS offsets.
        """
        n = self.n
        return float(
            -0.5 * self._resid @ self.alpha - np.sum(np.log(np.diag(self.L))) - 0.5 * n * LOG_2PI
        )


class _Objective:
    """Negative log marginal likelihood and its gradient in log-parameter space."""

    def __init__(self, X, fidelities, z, free: np.ndarray, theta_fixed: np.ndarray, fidelity_means: bool = False):
        self.sq = _sq_dists(X, X)
        self.H = _level_design(fidelities)[1] if fidelity_means else None
        self.l = fidelities
        self.z = z
        self.n = len(z)
        self.free = free
        self.theta_fixed = theta_fixed
        self.eye = np.eye(self.n)
        self.log1m = np.where(fidelities < 1.0, np.log(np.clip(1.0 - fidelities, 1e-300, None)), 0.0)

    def full_theta(self, theta_free):
        theta = self.theta_fixed.copy()
        theta[self.free] = theta_free
        return theta

    def lml_and_grad(self, theta: np.ndarray):
        d = self.sq.shape[0]
        lam = np.exp(theta[:d])
        c = math.exp(theta[d])
        e_delta = math.exp(theta[d + 1])
        delta = max(e_delta - DELTA_EPS, 0.0)
        s2 = math.exp(theta[d + 2])
        sn2 = math.exp(theta[d + 3])

        KI = np.exp(-0.5 * np.tensordot(1.0 / lam, self.sq, axes=1))
        w = _fidelity_weight(self.l, delta)
        KS = c + np.outer(w, w)
        K = s2 * KI * KS
        L, _ = _robust_cholesky(K + sn2 * self.eye)
        # profiling out the offsets leaves the gradient formula unchanged at the GLS optimum
        _, r = _gls_residual(L, self.H, self.z)
        alpha = cho_solve((L, True), r, check_finite=False)
        lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * self.n * LOG_2PI

        Ainv, _ = dpotri(L, lower=1)
        Ainv = np.tril(Ainv) + np.tril(Ainv, -1).T
        W = np.outer(alpha, alpha) - Ainv
        grad = np.empty_like(theta)
        WK = W * K
        grad[:d] = 0.25 * np.tensordot(self.sq, WK, axes=([1, 2], [0, 1])) / lam
        grad[d] = 0.5 * np.sum(W * KI) * s2 * c
        dw = w * self.log1m * e_delta
        dKS = np.outer(dw, w) + np.outer(w, dw)
        grad[d + 1] = 0.5 * np.sum(W * KI * dKS) * s2
        grad[d + 2] = 0.5 * np.sum(WK)
        grad[d + 3] = 0.5 * np.trace(W) * sn2
        return lml, grad

    def __call__(self, theta_free):
        try:
            lml, grad = self.lml_and_grad(self.full_theta(theta_free))
        except (FitError, FloatingPointError, ValueError):
            return 1e25, np.zeros_like(theta_free)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta_free)
        return -lml, -grad[self.free]


def _random_start(theta0: np.ndarray, d: int, rng: RngStream, free: np.ndarray) -> np.ndarray:
    theta = theta0.copy()
    lo, hi = math.log(1e-2), math.log(1e1)
    theta[:d] = rng.uniform(lo, hi, size=d)
    if free[d]:
        theta[d] = rng.uniform(lo, hi)
    return theta


def fit(
    X,
    fidelities,
    y,
    restarts: int = 8,
    rng: RngStream | None = None,
    warm_start: KernelParams | None = None,
    maxiter: int = 200,
    fidelity_means: bool = True,
) -> MultiFidelityGP:
    """Maximum-marginal-likelihood fit with multi-start L-BFGS in log space.

    The first start is the documented default (lam=0.5, c=1, delta=1, s2=1,
    noise=1e-2); ``warm_start`` adds a second start; the rest are drawn
    log-uniformly for lam and c in [1e-2, 1e1].  When every observation is at
    the highest fidelity the offset is pinned to c=1 (it is redundant with
    the output scale there) and the exponent is irrelevant.

    ``fidelity_means`` gives each fidelity level its own constant mean so a
    constant inter-fidelity bias need not be absorbed by the kernel, whose
    length scales are shared between the fidelities.  It has no effect on
    single-fidelity data.
    """
    X = np.asarray(X, dtype=float)
    X = X.reshape(len(X), -1)
    fidelities = np.asarray(fidelities, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if n < 2:
        raise FitError("at least two observations are needed to fit hyperparameters")
    rng = rng if rng is not None else RngStream(0)

    y_mean = float(np.mean(y))
    sd = float(np.std(y))
    y_scale = sd if sd > 0 else 1.0
    z = (y - y_mean) / y_scale

    default = KernelParams.default(d)
    theta0 = default.to_vector()
    single = bool(np.all(fidelities == 1.0))
    free = np.ones_like(theta0, dtype=bool)
    if single:
        free[d] = False
        free[d + 1] = False
    bounds = [b for b, f in zip(default.log_bounds(), free) if f]

    starts = [theta0]
    if warm_start is not None:
        warm = warm_start.to_vector()
        if single:
            warm[d], warm[d + 1] = theta0[d], theta0[d + 1]
        starts.append(np.clip(warm, [b[0] for b in default.log_bounds()], [b[1] for b in default.log_bounds()]))
    while len(starts) < max(restarts, 1):
        starts.append(_random_start(theta0, d, rng, free))

    objective = _Objective(X, fidelities, z, free, theta0, fidelity_means)
    best_theta, best_val = None, np.inf
    init_lmls = []
    for start in starts:
        val0, _ = objective(start[free])
        init_lmls.append(-val0)
        if val0 < best_val:
            best_theta, best_val = start[free].copy(), val0
        res = minimize(
            objective,
            start[free],
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x.copy(), float(res.fun)
    if best_theta is None or best_val >= 1e25:
        raise FitError("no hyperparameter start produced a finite likelihood")

    params = KernelParams.from_vector(objective.full_theta(best_theta))
    gp = MultiFidelityGP(X, fidelities, y, params, standardize=True, fidelity_means=fidelity_means)
    gp.fit_info = {"initial_lmls": init_lmls, "lml": -best_val, "n_starts": len(starts)}
    return gp


def prior(dim: int, params: KernelParams | None = None) -> MultiFidelityGP:
    """Model with no training data (zero mean, prior covariance)."""
    params = params if params is not None else KernelParams.default(dim)
    return MultiFidelityGP(np.empty((0, dim)), np.empty(0), np.empty(0), params, standardize=False)


__all__ = [
    "KernelParams",
    "MultiFidelityGP",
    "fit",
    "gram",
    "kernel_fidelity",
    "kernel_full",
    "kernel_input",
    "prior",
]
