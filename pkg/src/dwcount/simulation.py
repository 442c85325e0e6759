"""Simulation experiments: parameter recovery and dispersion maps.

Every replicate (and every map cell) draws from its own child of the master
seed, keyed by its index, so results do not depend on execution order or on
how many worker processes share the work.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import distribution as dist
from .errors import DataError, DWCountError
from .estimation import DEFAULT_CONFIG, OptimizerConfig, wald_interval
from .regression import NB_BOUNDARY_LOG_K, Dataset, fit_dw_regression, nb_logpmf

__all__ = [
    "SimulationStudyConfig",
    "ParameterSummary",
    "StudyResult",
    "DispersionMap",
    "replicate_rng",
    "simulate_regression_data",
    "run_simulation_study",
    "fit_nb_sample",
    "dispersion_map",
]

_SAMPLERS = {
    "normal": lambda rng, a, b, n: rng.normal(a, b, n),
    "uniform": lambda rng, a, b, n: rng.uniform(a, b, n),
}


@dataclass(frozen=True)
class SimulationStudyConfig:
    n_obs: int = 300
    replicate_count: int = 1000
    true_alpha: tuple = (0.5, 0.4, -0.3)
    true_beta: float = 1.6
    # (distribution, first arg, second arg) per covariate
    covariates: tuple = (("normal", 0.0, 1.0), ("uniform", 0.0, 10.0))
    master_seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "true_alpha", tuple(float(a) for a in self.true_alpha))
        object.__setattr__(self, "covariates", tuple(tuple(c) for c in self.covariates))
        if len(self.true_alpha) != len(self.covariates) + 1:
            raise DataError("true_alpha needs an intercept plus one entry per covariate")
        if self.n_obs <= len(self.true_alpha) + 1:
            raise DataError("n_obs must exceed the number of parameters")
        if self.replicate_count < 1:
            raise DataError("replicate_count must be at least 1")
        if not self.true_beta > 0:
            raise DataError("true_beta must be positive")
        for spec in self.covariates:
            if spec[0] not in _SAMPLERS:
                raise DataError(f"unknown covariate distribution {spec[0]!r}")

    @property
    def parameter_names(self) -> tuple:
        return ("alpha0",) + tuple(f"alpha{j + 1}" for j in range(len(self.covariates))) + ("beta",)

    @property
    def truth(self) -> np.ndarray:
        return np.array(self.true_alpha + (self.true_beta,))


def replicate_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def simulate_regression_data(config: SimulationStudyConfig, replicate_index: int) -> Dataset:
    rng = replicate_rng(config.master_seed, replicate_index)
    n = config.n_obs
    x = np.column_stack([_SAMPLERS[kind](rng, a, b, n) for kind, a, b in config.covariates])
    eta = config.true_alpha[0] + x @ np.array(config.true_alpha[1:])
    y = dist.quantile(dist.uniform_open(rng, n), -np.exp(eta), config.true_beta)
    names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    return Dataset(np.atleast_1d(y), x, names)


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    truth: float
    mean_estimate: float
    bias: float
    mse: float
    mean_ci_length: float
    mc_standard_error: float


@dataclass(frozen=True)
class StudyResult:
    config: SimulationStudyConfig
    parameters: tuple
    estimates: np.ndarray  # (successful replicates, parameters)
    ci_lengths: np.ndarray
    replicate_indices: np.ndarray
    failures: tuple = field(default=())  # (replicate index, message)

    @property
    def failed_count(self) -> int:
        return len(self.failures)

    def summary(self, name: str) -> ParameterSummary:
        return next(p for p in self.parameters if p.name == name)


def _run_replicate(args):
    config, index, opt_config = args
    data = simulate_regression_data(config, index)
    try:
        fit = fit_dw_regression(data, opt_config)
    except DWCountError as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"
    r = fit.result
    lengths = [wald_interval(r, config.level, j).length for j in range(r.n_params)]
    return index, r.estimates, np.array(lengths), None


def run_simulation_study(
    config: SimulationStudyConfig,
    workers: int = 1,
    optimizer: OptimizerConfig = DEFAULT_CONFIG,
) -> StudyResult:
    """Fit the DW regression on every replicate and aggregate bias, MSE and CI length.

    Failed fits are excluded from the averages and listed in ``failures``.
    """
    jobs = [(config, i, optimizer) for i in range(config.replicate_count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [_run_replicate(job) for job in jobs]
    outcomes.sort(key=lambda o: o[0])

    ok = [o for o in outcomes if o[3] is None]
    failures = tuple((o[0], o[3]) for o in outcomes if o[3] is not None)
    k = len(config.truth)
    est = np.array([o[1] for o in ok]).reshape(len(ok), k)
    lengths = np.array([o[2] for o in ok]).reshape(len(ok), k)
    truth = config.truth
    params = []
    for j, name in enumerate(config.parameter_names):
        if not ok:
            params.append(ParameterSummary(name, truth[j], *([math.nan] * 5)))
            continue
        dev = est[:, j] - truth[j]
        sd = float(np.std(est[:, j], ddof=1)) if len(ok) > 1 else math.nan
        params.append(
            ParameterSummary(
                name,
                float(truth[j]),
                float(np.mean(est[:, j])),
                float(np.mean(dev)),
                float(np.mean(dev * dev)),
                float(np.mean(lengths[:, j])),
                sd / math.sqrt(len(ok)),
            )
        )
    return StudyResult(config, tuple(params), est, lengths, np.array([o[0] for o in ok]), failures)


def fit_nb_sample(sample):
    """Intercept-only NB fit: returns ``(mean, k, at_boundary)``.

    The mean MLE is the sample mean; ``k`` solves a one-dimensional problem
    over ``log k``. Samples with variance not above the mean have no finite
    ``k`` and are reported at the boundary with ``k = inf``.
    """
    y = np.asarray(sample)
    mean = float(np.mean(y))
    var = float(np.var(y, ddof=1))
    if not var > mean or mean == 0:
        return mean, math.inf, True
    values, counts = np.unique(y, return_counts=True)

    def nll(log_k):
        return -float(np.dot(counts, nb_logpmf(values, mean, math.exp(log_k))))

    k_mom = mean * mean / (var - mean)
    lo = math.log(k_mom) - 10.0
    hi = max(math.log(k_mom) + 10.0, NB_BOUNDARY_LOG_K + 1.0)
    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    at_boundary = bool(res.x > NB_BOUNDARY_LOG_K)
    return mean, (math.inf if at_boundary else math.exp(res.x)), at_boundary


@dataclass(frozen=True)
class DispersionMap:
    q_grid: np.ndarray
    beta_grid: np.ndarray
    vr_poisson: np.ndarray  # shape (len(beta_grid), len(q_grid))
    vr_nb: np.ndarray
    nb_boundary: np.ndarray
    n_per_cell: int
    seed: int


def dispersion_map(q_grid, beta_grid, n_per_cell: int, seed: int) -> DispersionMap:
    """Variance ratio of DW samples against fitted Poisson and NB variances.

    Rows follow ``beta_grid`` and columns ``q_grid``. Poisson's variance is
    the sample mean; NB's is ``mean + mean**2 / k``. Cells where NB has no
    finite ``k`` fall back to the Poisson variance and are flagged.
    """
    q_grid = np.asarray(q_grid, dtype=float)
    beta_grid = np.asarray(beta_grid, dtype=float)
    if np.any((q_grid <= 0) | (q_grid >= 1)) or np.any(beta_grid <= 0):
        raise DataError("q must lie in (0, 1) and beta must be positive")
    if n_per_cell < 2:
        raise DataError("n_per_cell must be at least 2")
    shape = (beta_grid.size, q_grid.size)
    vr_p = np.empty(shape)
    vr_nb = np.empty(shape)
    boundary = np.zeros(shape, dtype=bool)
    for i, beta in enumerate(beta_grid):
        for j, q in enumerate(q_grid):
            rng = replicate_rng(seed, i, j)
            y = dist.dw_sample(dist.DWParams(q, beta), rng, n_per_cell)
            var = float(np.var(y, ddof=1))
            mean, k, at_boundary = fit_nb_sample(y)
            if mean == 0:
                vr_p[i, j] = vr_nb[i, j] = math.nan
                boundary[i, j] = True
                continue
            vr_p[i, j] = var / mean
            vr_nb[i, j] = var / (mean if at_boundary else mean + mean * mean / k)
            boundary[i, j] = at_boundary
    return DispersionMap(q_grid, beta_grid, vr_p, vr_nb, boundary, n_per_cell, seed)
