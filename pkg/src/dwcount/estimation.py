"""Maximum-likelihood machinery shared by every model in the package."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import distribution as dist
from .errors import (
    BoundaryError,
    ConvergenceError,
    DataError,
    DegenerateLikelihoodError,
    NumericalError,
)

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "WaldInterval",
    "dw_neg_loglik",
    "fit_dw_mle",
    "numeric_hessian",
    "numeric_gradient",
    "scaled_gradient_norm",
    "minimize_nll",
    "wald_interval",
]


@dataclass(frozen=True)
class OptimizerConfig:
    loglik_tolerance: float = 1e-8
    max_iterations: int = 10_000
    hessian_step: float = 1e-4

    def __post_init__(self):
        if not (self.loglik_tolerance > 0 and self.max_iterations > 0 and self.hessian_step > 0):
            raise DataError("optimizer settings must all be strictly positive")


DEFAULT_CONFIG = OptimizerConfig()


@dataclass(frozen=True)
class FitResult:
    """Outcome of one maximum-likelihood fit.

    ``aic`` and ``bic`` are derived from ``loglik`` at construction and never
    passed in, so the identities ``aic = -2 l + 2 p`` and
    ``bic = -2 l + p log(n)`` hold exactly.
    """

    parameter_names: tuple
    estimates: np.ndarray
    loglik: float
    vcov: np.ndarray
    converged: bool
    n_obs: int
    iterations: int = 0
    message: str = ""
    aic: float = field(init=False)
    bic: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "parameter_names", tuple(self.parameter_names))
        object.__setattr__(self, "estimates", np.asarray(self.estimates, dtype=float))
        vcov = np.asarray(self.vcov, dtype=float)
        object.__setattr__(self, "vcov", (vcov + vcov.T) / 2.0)
        loglik = float(self.loglik)
        object.__setattr__(self, "loglik", loglik)
        object.__setattr__(self, "aic", -2.0 * loglik + 2.0 * self.n_params)
        object.__setattr__(self, "bic", -2.0 * loglik + self.n_params * math.log(self.n_obs))

    @property
    def n_params(self) -> int:
        return len(self.estimates)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def index(self, name: str) -> int:
        return self.parameter_names.index(name)


@dataclass(frozen=True)
class WaldInterval:
    lower: float
    upper: float
    flagged: bool = False

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __iter__(self):
        return iter((self.lower, self.upper))


def numeric_gradient(objective, at, step=1e-6):
    at = np.asarray(at, dtype=float)
    grad = np.empty_like(at)
    for j in range(at.size):
        h = max(step, step * abs(at[j]))
        e = np.zeros_like(at)
        e[j] = h
        grad[j] = (objective(at + e) - objective(at - e)) / (2.0 * h)
    return grad


def scaled_gradient_norm(objective, at, value=None):
    """Infinity norm of the relative gradient ``g_j max(|x_j|, 1) / max(|f|, 1)``."""
    at = np.asarray(at, dtype=float)
    if value is None:
        value = objective(at)
    grad = numeric_gradient(objective, at)
    scale = np.maximum(np.abs(at), 1.0) / max(abs(value), 1.0)
    return float(np.max(np.abs(grad * scale)))


def numeric_hessian(objective, at, step=1e-4):
    """Central-difference Hessian with per-coordinate step ``max(step, step*|x_j|)``."""
    at = np.asarray(at, dtype=float)
    k = at.size
    h = np.maximum(step, step * np.abs(at))
    f0 = objective(at)
    if not np.isfinite(f0):
        raise NumericalError("objective is not finite at the expansion point")

    def f(x):
        value = objective(x)
        if not np.isfinite(value):
            raise NumericalError(f"objective is not finite at {x!r}")
        return value

    hess = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        hess[i, i] = (f(at + ei) - 2.0 * f0 + f(at - ei)) / (h[i] * h[i])
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            hess[i, j] = (
                f(at + ei + ej) - f(at + ei - ej) - f(at - ei + ej) + f(at - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[j, i] = hess[i, j]
    return (hess + hess.T) / 2.0


@dataclass
class _Optimum:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    gradient_norm: float
    message: str


def minimize_nll(objective, x0, config: OptimizerConfig = DEFAULT_CONFIG, gradient_tol=1e-4):
    """Nelder-Mead to find the basin, then BFGS with central differences.

    Non-finite objective values are mapped to ``+inf`` for the simplex stage
    so it can step back from regions where the likelihood degenerates.
    """

    def safe(x):
        try:
            value = objective(x)
        except (NumericalError, FloatingPointError, OverflowError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    x0 = np.asarray(x0, dtype=float)
    if not np.isfinite(safe(x0)):
        raise NumericalError("objective is not finite at the starting values")
    iterations = 0
    nm = optimize.minimize(
        safe,
        x0,
        method="Nelder-Mead",
        options={
            "maxiter": config.max_iterations,
            "maxfev": 4 * config.max_iterations,
            "xatol": 1e-6,
            "fatol": config.loglik_tolerance,
            "adaptive": x0.size > 3,
        },
    )
    iterations += int(nm.nit)
    x, fun = nm.x, nm.fun
    for _ in range(3):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            bf = optimize.minimize(
                safe,
                x,
                method="BFGS",
                jac="3-point",
                options={"maxiter": config.max_iterations, "gtol": 1e-8},
            )
        iterations += int(bf.nit)
        improved = fun - bf.fun
        if np.isfinite(bf.fun) and bf.fun <= fun:
            x, fun = bf.x, bf.fun
        if not improved > config.loglik_tolerance:
            break
    gnorm = scaled_gradient_norm(safe, x, fun) if np.isfinite(fun) else np.inf
    converged = bool(np.isfinite(fun) and gnorm < gradient_tol)
    message = "converged" if converged else f"scaled gradient norm {gnorm:.3g} above {gradient_tol:g}"
    return _Optimum(x, float(fun), iterations, converged, gnorm, message)


def covariance_from_hessian(hess):
    """Inverse of a negative log-likelihood Hessian (observed information)."""
    try:
        vcov = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("observed information matrix is singular") from exc
    return (vcov + vcov.T) / 2.0


def dw_neg_loglik(sample, params: dist.DWParams) -> float:
    """Negative log-likelihood of an i.i.d. discrete Weibull sample."""
    y = np.asarray(sample)
    if y.size == 0:
        raise DataError("sample is empty")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DataError("sample must hold non-negative integers")
    return _dw_nll_terms(y.astype(float), params.log_q, params.beta)


def _dw_nll_terms(y, log_q, beta):
    lp = dist.logpmf(y, log_q, beta)
    if not np.all(np.isfinite(lp)):
        bad = int(np.flatnonzero(~np.isfinite(lp))[0])
        raise DegenerateLikelihoodError(
            f"probability of y={int(y[bad])} underflows to zero (observation {bad})",
            index=bad,
            value=int(y[bad]),
        )
    return -math.fsum(lp)


def fit_dw_mle(sample, config: OptimizerConfig = DEFAULT_CONFIG) -> FitResult:
    """Fit ``(q, beta)`` to an i.i.d. sample.

    The search runs over ``a = log(-log q)`` and ``b = log(beta)``; the
    covariance of ``(q, beta)`` comes from the delta method.
    """
    y = np.asarray(sample)
    if y.size == 0:
        raise DataError("sample is empty")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DataError("sample must hold non-negative integers")
    y = y.astype(float)
    if np.all(y == 0):
        raise BoundaryError("all observations are zero; the likelihood increases as q -> 0")

    # repeated values only need one evaluation each
    values, counts = np.unique(y, return_counts=True)

    def nll(theta):
        lp = dist.logpmf(values, -math.exp(theta[0]), math.exp(theta[1]))
        return -float(np.dot(counts, lp))

    q0 = min(0.95, max(0.05, 1.0 - np.mean(y == 0)))
    opt = minimize_nll(nll, [math.log(-math.log(q0)), 0.0], config)
    if not opt.converged:
        raise ConvergenceError(f"discrete Weibull MLE failed: {opt.message}", opt.iterations)

    a, b = opt.x
    q, beta = math.exp(-math.exp(a)), math.exp(b)
    vcov_ab = covariance_from_hessian(numeric_hessian(nll, opt.x, config.hessian_step))
    jac = np.diag([-math.exp(a) * q, beta])
    return FitResult(
        parameter_names=("q", "beta"),
        estimates=np.array([q, beta]),
        loglik=-opt.fun,
        vcov=jac @ vcov_ab @ jac.T,
        converged=opt.converged,
        n_obs=y.size,
        iterations=opt.iterations,
        message=opt.message,
    )


def wald_interval(fit: FitResult, level: float = 0.95, index: int = 0) -> WaldInterval:
    """``estimate +/- z * se``; flagged when the variance is not positive."""
    if not 0 < level < 1:
        raise DataError("level must lie strictly inside (0, 1)")
    est = float(fit.estimates[index])
    var = float(fit.vcov[index, index])
    if not var > 0 or not np.isfinite(var):
        return WaldInterval(est, est, flagged=True)
    half = stats.norm.ppf((1.0 + level) / 2.0) * math.sqrt(var)
    return WaldInterval(est - half, est + half)
