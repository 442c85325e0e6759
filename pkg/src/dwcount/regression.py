"""Count regression models: discrete Weibull, Poisson and negative binomial.

All three fitted-model classes expose the same conditional-distribution
surface used by the diagnostics: ``linear_predictor``, ``pmf``, ``cdf``,
``sf`` (``P(Y > y)``), their ``log*`` counterparts, ``variance`` and
``sample``, each taking a covariate matrix without the intercept column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import distribution as dist
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateLikelihoodError,
    RankDeficiencyError,
)
from .estimation import (
    DEFAULT_CONFIG,
    FitResult,
    OptimizerConfig,
    covariance_from_hessian,
    minimize_nll,
    numeric_hessian,
)

__all__ = [
    "Dataset",
    "DWRegressionFit",
    "PoissonFit",
    "NBFit",
    "CoefficientEffect",
    "q_from_linear_predictor",
    "fit_dw_regression",
    "fitted_median",
    "fitted_quantile",
    "fitted_mean",
    "interpret_coefficients",
    "fit_poisson_glm",
    "fit_nb_regression",
    "INTERCEPT",
]

INTERCEPT = "(Intercept)"
LOG_LOG_2 = math.log(math.log(2.0))
# ln k beyond this is treated as the Poisson boundary
NB_BOUNDARY_LOG_K = 15.0


def _dependent_columns(design, names):
    dependent = []
    kept = []
    for j in range(design.shape[1]):
        trial = design[:, kept + [j]]
        if np.linalg.matrix_rank(trial) == len(kept) + 1:
            kept.append(j)
        else:
            dependent.append(names[j])
    return dependent


@dataclass(frozen=True)
class Dataset:
    """A count response with its covariates (no intercept column)."""

    response: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    add_intercept: bool = True

    def __post_init__(self):
        y = np.asarray(self.response)
        if y.ndim != 1 or y.size == 0:
            raise DataError("response must be a non-empty vector")
        if not np.all(np.isfinite(y.astype(float))):
            raise DataError("response contains missing values")
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DataError("response must hold non-negative integers")
        x = np.asarray(self.covariates, dtype=float)
        if x.size == 0:
            x = np.zeros((y.size, 0))
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != y.size:
            raise DataError(f"covariates have {x.shape[0]} rows but response has {y.size}")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates contain missing or infinite values")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("one name per covariate column is required")
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        object.__setattr__(self, "response", y.astype(np.int64))
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "covariate_names", names)
        design = self.design
        if design.shape[1] == 0:
            raise DataError("model has no columns; supply covariates or keep the intercept")
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise RankDeficiencyError(_dependent_columns(design, self.design_names))

    @property
    def n_obs(self) -> int:
        return self.response.size

    @property
    def design(self) -> np.ndarray:
        return design_matrix(self.covariates, self.add_intercept)

    @property
    def design_names(self) -> tuple:
        return ((INTERCEPT,) if self.add_intercept else ()) + self.covariate_names


def design_matrix(covariates, add_intercept=True):
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if x.size else np.zeros((1, 0))
    if add_intercept:
        x = np.column_stack([np.ones(x.shape[0]), x])
    return x


def q_from_linear_predictor(eta):
    """``q = exp(-exp(eta))``, the inverse of the log-log link."""
    return np.exp(-np.exp(eta))


@dataclass(frozen=True)
class _RegressionFit:
    """Shared prediction plumbing; subclasses define the conditional law."""

    coefficients: np.ndarray
    result: FitResult
    covariate_names: tuple
    add_intercept: bool

    def _design(self, covariates):
        x = design_matrix(covariates, self.add_intercept)
        if x.shape[1] != self.coefficients.size:
            raise DataError(
                f"expected {self.coefficients.size - self.add_intercept} covariates, "
                f"got {x.shape[1] - self.add_intercept}"
            )
        return x

    def linear_predictor(self, covariates):
        return self._design(covariates) @ self.coefficients

    @property
    def design_names(self):
        return ((INTERCEPT,) if self.add_intercept else ()) + tuple(self.covariate_names)


@dataclass(frozen=True)
class DWRegressionFit(_RegressionFit):
    """Discrete Weibull regression with ``log(-log q_i) = x_i' alpha``."""

    beta: float = 1.0
    model: str = field(default="dw", init=False)

    @property
    def alpha(self):
        return self.coefficients

    def log_q(self, covariates):
        return -np.exp(self.linear_predictor(covariates))

    def q(self, covariates):
        return q_from_linear_predictor(self.linear_predictor(covariates))

    def pmf(self, y, covariates):
        return dist.pmf(y, self.log_q(covariates), self.beta)

    def logpmf(self, y, covariates):
        return dist.logpmf(y, self.log_q(covariates), self.beta)

    def logcdf(self, y, covariates):
        return dist.logcdf(y, self.log_q(covariates), self.beta)

    def logsf(self, y, covariates):
        return dist.logsf(y, self.log_q(covariates), self.beta)

    def cdf(self, y, covariates):
        return dist.cdf(y, self.log_q(covariates), self.beta)

    def sf(self, y, covariates):
        return dist.sf(y, self.log_q(covariates), self.beta)

    def quantile(self, tau, covariates):
        return dist.quantile(tau, self.log_q(covariates), self.beta)

    def mean(self, covariates, policy=dist.DEFAULT_POLICY):
        return np.array([dist.moments(lq, self.beta, policy)[0] for lq in self.log_q(covariates)])

    def variance(self, covariates, policy=dist.DEFAULT_POLICY):
        return np.array([dist.moments(lq, self.beta, policy)[1] for lq in self.log_q(covariates)])

    def sample(self, covariates, rng):
        log_q = self.log_q(covariates)
        return dist.quantile(dist.uniform_open(rng, log_q.size), log_q, self.beta)


@dataclass(frozen=True)
class PoissonFit(_RegressionFit):
    model: str = field(default="poisson", init=False)

    def mu(self, covariates):
        return np.exp(self.linear_predictor(covariates))

    def pmf(self, y, covariates):
        return stats.poisson.pmf(y, self.mu(covariates))

    def logpmf(self, y, covariates):
        return stats.poisson.logpmf(y, self.mu(covariates))

    def logcdf(self, y, covariates):
        return stats.poisson.logcdf(y, self.mu(covariates))

    def logsf(self, y, covariates):
        return stats.poisson.logsf(y, self.mu(covariates))

    def cdf(self, y, covariates):
        return stats.poisson.cdf(y, self.mu(covariates))

    def sf(self, y, covariates):
        return stats.poisson.sf(y, self.mu(covariates))

    def mean(self, covariates):
        return self.mu(covariates)

    def variance(self, covariates):
        return self.mu(covariates)

    def sample(self, covariates, rng):
        return rng.poisson(self.mu(covariates))


@dataclass(frozen=True)
class NBFit(_RegressionFit):
    """Negative binomial with mean ``exp(x' gamma)`` and variance ``mu + mu**2 / k``.

    ``at_boundary`` is set when ``k`` ran off towards infinity; the Poisson
    fit on the same data is then kept in ``poisson_reference``.
    """

    k: float = 1.0
    at_boundary: bool = False
    poisson_reference: PoissonFit | None = None
    model: str = field(default="nb", init=False)

    def mu(self, covariates):
        return np.exp(self.linear_predictor(covariates))

    def _p(self, covariates):
        return self.k / (self.k + self.mu(covariates))

    def pmf(self, y, covariates):
        return stats.nbinom.pmf(y, self.k, self._p(covariates))

    def logpmf(self, y, covariates):
        return stats.nbinom.logpmf(y, self.k, self._p(covariates))

    def logcdf(self, y, covariates):
        return stats.nbinom.logcdf(y, self.k, self._p(covariates))

    def logsf(self, y, covariates):
        return stats.nbinom.logsf(y, self.k, self._p(covariates))

    def cdf(self, y, covariates):
        return stats.nbinom.cdf(y, self.k, self._p(covariates))

    def sf(self, y, covariates):
        return stats.nbinom.sf(y, self.k, self._p(covariates))

    def mean(self, covariates):
        return self.mu(covariates)

    def variance(self, covariates):
        mu = self.mu(covariates)
        return mu + mu * mu / self.k

    def sample(self, covariates, rng):
        return rng.negative_binomial(self.k, self._p(covariates))


def _zero_start_q(y):
    return min(0.95, max(0.05, 1.0 - float(np.mean(y == 0))))


def fit_dw_regression(data: Dataset, config: OptimizerConfig = DEFAULT_CONFIG) -> DWRegressionFit:
    """Maximise the discrete Weibull regression likelihood over ``(alpha, log beta)``."""
    x = data.design
    y = data.response.astype(float)
    n, p = x.shape
    if n <= p + 1:
        raise DataError(f"need more than {p + 1} observations for {p + 1} parameters, got {n}")

    def nll(theta):
        log_q = -np.exp(x @ theta[:-1])
        lp = dist.logpmf(y, log_q, math.exp(theta[-1]))
        total = lp.sum()
        return -total if np.isfinite(total) else np.inf

    start = np.zeros(p + 1)
    if data.add_intercept:
        start[0] = math.log(-math.log(_zero_start_q(y)))
    opt = minimize_nll(nll, start, config)
    if not np.isfinite(opt.fun):
        raise DegenerateLikelihoodError("likelihood is zero at every point visited")
    if not opt.converged:
        raise ConvergenceError(f"DW regression failed to converge: {opt.message}", opt.iterations)

    alpha, beta = opt.x[:-1], math.exp(opt.x[-1])
    lp = dist.logpmf(y, -np.exp(x @ alpha), beta)
    if not np.all(np.isfinite(lp)):
        bad = int(np.flatnonzero(~np.isfinite(lp))[0])
        raise DegenerateLikelihoodError(
            f"fitted probability of row {bad} (y={int(y[bad])}) underflows to zero",
            index=bad,
            value=int(y[bad]),
        )
    vcov_log = covariance_from_hessian(numeric_hessian(nll, opt.x, config.hessian_step))
    jac = np.eye(p + 1)
    jac[-1, -1] = beta
    result = FitResult(
        parameter_names=data.design_names + ("beta",),
        estimates=np.append(alpha, beta),
        loglik=-opt.fun,
        vcov=jac @ vcov_log @ jac.T,
        converged=opt.converged,
        n_obs=n,
        iterations=opt.iterations,
        message=opt.message,
    )
    return DWRegressionFit(alpha, result, data.covariate_names, data.add_intercept, beta=beta)


def fitted_median(fit: DWRegressionFit, x):
    return fitted_quantile(fit, x, 0.5)


def fitted_quantile(fit: DWRegressionFit, x, tau):
    out = fit.quantile(tau, x)
    return out[0] if np.ndim(x) == 1 and np.ndim(out) == 1 else out


def fitted_mean(fit: DWRegressionFit, x, policy=dist.DEFAULT_POLICY):
    out = fit.mean(x, policy)
    return float(out[0]) if np.ndim(x) == 1 else out


@dataclass(frozen=True)
class CoefficientEffect:
    name: str
    alpha: float
    median_effect: float


def interpret_coefficients(fit: DWRegressionFit) -> list[CoefficientEffect]:
    """Coefficients on the ``log(M(x) + 1)`` scale, ``M`` the conditional median.

    Slopes become ``-alpha_p / beta``; the intercept row carries
    ``(log log 2 - alpha_0) / beta``.
    """
    rows = []
    for j, name in enumerate(fit.design_names):
        a = float(fit.alpha[j])
        if name == INTERCEPT:
            effect = (LOG_LOG_2 - a) / fit.beta
        else:
            effect = -a / fit.beta
        rows.append(CoefficientEffect(name, a, effect))
    return rows


def _poisson_loglik(y, mu):
    return float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1.0)))


def fit_poisson_glm(data: Dataset, max_iterations: int = 100, tol: float = 1e-12) -> PoissonFit:
    """Log-link Poisson regression by iteratively reweighted least squares."""
    x = data.design
    y = data.response.astype(float)
    mu = y + 0.5
    eta = np.log(mu)
    coef = np.zeros(x.shape[1])
    dev_old = np.inf
    for it in range(1, max_iterations + 1):
        z = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        coef, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        eta = x @ coef
        if np.max(np.abs(eta)) > 700:
            raise ConvergenceError("Poisson IRLS diverged (possible separation)", it)
        mu = np.exp(eta)
        dev = 2.0 * np.sum(special.xlogy(y, y / mu) - (y - mu))
        if abs(dev - dev_old) <= tol * (abs(dev) + 0.1):
            break
        dev_old = dev
    else:
        raise ConvergenceError("Poisson IRLS did not converge", max_iterations)
    # one Newton polish step so the score equations hold to rounding
    score = x.T @ (y - mu)
    info = (x * mu[:, None]).T @ x
    coef = coef + np.linalg.solve(info, score)
    mu = np.exp(x @ coef)
    info = (x * mu[:, None]).T @ x
    result = FitResult(
        parameter_names=data.design_names,
        estimates=coef,
        loglik=_poisson_loglik(y, mu),
        vcov=covariance_from_hessian(info),
        converged=True,
        n_obs=data.n_obs,
        iterations=it + 1,
        message="converged",
    )
    return PoissonFit(coef, result, data.covariate_names, data.add_intercept)


def nb_logpmf(y, mu, k):
    """NB log-mass in the ``(mu, k)`` parameterisation, stable for large ``k``."""
    y = np.asarray(y, dtype=float)
    # log Gamma(y + k) - log Gamma(k) - log y!  ==  -log(y) - betaln(k, y) for y > 0
    with np.errstate(divide="ignore"):
        comb = np.where(y > 0, -np.log(np.where(y > 0, y, 1.0)) - special.betaln(k, np.where(y > 0, y, 1.0)), 0.0)
    return comb - k * np.log1p(mu / k) + special.xlogy(y, mu / (k + mu))


def fit_nb_regression(data: Dataset, config: OptimizerConfig = DEFAULT_CONFIG) -> NBFit:
    """Joint MLE over the log-mean coefficients and ``log k``."""
    x = data.design
    y = data.response.astype(float)
    pois = fit_poisson_glm(data)

    def nll(theta):
        mu = np.exp(x @ theta[:-1])
        total = nb_logpmf(y, mu, math.exp(theta[-1])).sum()
        return -total if np.isfinite(total) else np.inf

    mu0 = pois.mu(data.covariates)
    excess = np.sum((y - mu0) ** 2 - mu0)
    k0 = float(np.sum(mu0**2) / excess) if excess > 0 else 1e4
    log_k0 = float(np.clip(math.log(k0), -5.0, 10.0))
    opt = minimize_nll(nll, np.append(pois.coefficients, log_k0), config)
    theta = opt.x
    at_boundary = theta[-1] > NB_BOUNDARY_LOG_K
    if not (opt.converged or at_boundary):
        raise ConvergenceError(f"NB regression failed to converge: {opt.message}", opt.iterations)
    k = math.exp(theta[-1])
    if at_boundary:
        # information about k vanishes; report the coefficient block only
        p = x.shape[1]
        vcov = np.full((p + 1, p + 1), np.nan)
        vcov[:p, :p] = pois.result.vcov
        vcov[p, p] = np.inf
    else:
        vcov_log = covariance_from_hessian(numeric_hessian(nll, theta, config.hessian_step))
        jac = np.eye(theta.size)
        jac[-1, -1] = k
        vcov = jac @ vcov_log @ jac.T
    result = FitResult(
        parameter_names=data.design_names + ("k",),
        estimates=np.append(theta[:-1], k),
        loglik=-opt.fun,
        vcov=vcov,
        converged=bool(opt.converged and not at_boundary),
        n_obs=data.n_obs,
        iterations=opt.iterations,
        message="k diverges; data are not over-dispersed" if at_boundary else opt.message,
    )
    return NBFit(
        theta[:-1],
        result,
        data.covariate_names,
        data.add_intercept,
        k=k,
        at_boundary=bool(at_boundary),
        poisson_reference=pois if at_boundary else None,
    )
