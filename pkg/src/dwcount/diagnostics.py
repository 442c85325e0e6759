"""Goodness-of-fit tooling for fitted count regressions.

Every function accepts any fit from :mod:`dwcount.regression`; they only rely
on the shared conditional-distribution methods (``cdf``, ``sf``, ``pmf``,
``variance``, ``sample``, ``linear_predictor``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import DataError, NumericalError
from .estimation import FitResult
from .regression import Dataset

__all__ = [
    "ResidualReport",
    "QQEnvelope",
    "GroupDispersion",
    "DispersionReport",
    "FrequencyRow",
    "LRTest",
    "KSResult",
    "normal_ppf",
    "residuals_from_draws",
    "randomized_quantile_residuals",
    "kolmogorov_sf",
    "ks_normality_test",
    "qq_envelope",
    "dispersion_ratio_report",
    "frequency_table",
    "likelihood_ratio_test",
    "information_criteria",
]


def normal_ppf(p):
    """Inverse standard normal cdf (Cephes ``ndtri``, accurate to ~1e-15)."""
    return special.ndtri(p)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float

    def __iter__(self):
        return iter((self.statistic, self.p_value))


@dataclass(frozen=True)
class ResidualReport:
    residuals: np.ndarray
    uniforms: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ks_statistic: float
    ks_p_value: float
    seed: int
    degenerate: np.ndarray  # indices where the probability interval has zero width


def residuals_from_draws(lower, upper, draws):
    """Map draws ``v`` in (0, 1] to ``u = lower + (upper - lower) v`` and return ``(Phi^-1(u), u)``."""
    lower = np.asarray(lower, dtype=float)
    u = lower + (np.asarray(upper, dtype=float) - lower) * np.asarray(draws, dtype=float)
    return normal_ppf(u), u


_LOG_HALF = math.log(0.5)


def randomized_quantile_residuals(fit, data: Dataset, seed: int | np.random.SeedSequence = 0) -> ResidualReport:
    """Randomised quantile residuals with a KS normality check.

    ``u`` is formed in log space from the model's ``logcdf``/``logpmf``/``logsf``,
    and values above one half go through ``log(1 - u)``, so observations far
    in either tail keep finite residuals even when their probability
    underflows. Those observations are listed in ``degenerate``. Draws that
    land exactly on the excluded lower endpoint are redrawn.
    """
    rng = np.random.default_rng(seed)
    y = data.response
    x = data.covariates
    log_below = fit.logcdf(y - 1, x)
    log_above = fit.logsf(y, x)
    log_mass = fit.logpmf(y, x)
    if not np.all(np.isfinite(log_mass)):
        bad = np.flatnonzero(~np.isfinite(log_mass))
        raise NumericalError(f"zero fitted probability at observations {bad[:10].tolist()}")
    degenerate = np.flatnonzero(~(np.exp(log_mass) > 0))
    v = 1.0 - rng.random(y.size)  # (0, 1]
    for _ in range(100):
        with np.errstate(divide="ignore"):
            log_u = np.logaddexp(log_below, log_mass + np.log(v))
            log_uc = np.logaddexp(log_above, log_mass + np.log1p(-v))
        on_edge = (log_u <= log_below) & (log_u < _LOG_HALF)
        if not np.any(on_edge):
            break
        v[on_edge] = 1.0 - rng.random(int(on_edge.sum()))
    res = np.where(log_u <= _LOG_HALF, special.ndtri_exp(log_u), -special.ndtri_exp(np.minimum(log_uc, 0.0)))
    if not np.all(np.isfinite(res)):
        bad = np.flatnonzero(~np.isfinite(res))
        raise NumericalError(f"non-finite residuals at observations {bad[:10].tolist()}")
    ks = ks_normality_test(res)
    return ResidualReport(
        res, np.exp(log_u), fit.cdf(y - 1, x), fit.cdf(y, x), ks.statistic, ks.p_value, seed, degenerate
    )


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Limiting ``P(sqrt(n) D > lam)`` for the one-sample KS statistic.

    Uses ``2 sum (-1)**(j-1) exp(-2 j**2 lam**2)`` for ``lam >= 1`` and the
    Jacobi-transformed series ``sqrt(2 pi)/lam sum exp(-(2j-1)**2 pi**2 / (8 lam**2))``
    for the cdf below that, where the alternating form converges slowly.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        j = np.arange(1, terms + 1)
        cdf = math.sqrt(2.0 * math.pi) / lam * np.sum(np.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8.0 * lam * lam)))
        return float(min(1.0, max(0.0, 1.0 - cdf)))
    j = np.arange(1, terms + 1)
    sf = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam * lam))
    return float(min(1.0, max(0.0, sf)))


def ks_normality_test(sample) -> KSResult:
    """One-sample Kolmogorov-Smirnov test against N(0, 1), asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 5:
        raise DataError("KS test needs at least 5 observations")
    cdf = special.ndtr(x)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - cdf)), float(np.max(cdf - (i - 1) / n)))
    return KSResult(d, kolmogorov_sf(math.sqrt(n) * d))


@dataclass(frozen=True)
class QQEnvelope:
    theoretical: np.ndarray
    residuals: np.ndarray  # sorted
    lower: np.ndarray
    upper: np.ndarray
    band_level: float
    replicate_count: int
    seed: int

    @property
    def outside_fraction(self) -> float:
        out = (self.residuals < self.lower) | (self.residuals > self.upper)
        return float(np.mean(out))


def envelope_ranks(replicate_count: int, band_level: float) -> tuple[int, int]:
    """1-based order statistics bounding the band (3 and 97 for 99 at 0.95)."""
    tail = (1.0 - band_level) / 2.0
    lo = math.ceil(tail * (replicate_count + 1) - 1e-9)
    hi = math.floor((1.0 - tail) * (replicate_count + 1) + 1e-9)
    return max(lo, 1), min(hi, replicate_count)


def qq_envelope(fit, data: Dataset, replicate_count: int = 99, band_level: float = 0.95, seed: int = 0) -> QQEnvelope:
    """Simulated Q-Q envelope under the fitted parameters (no refitting).

    The observed residuals are exactly those of
    ``randomized_quantile_residuals(fit, data, seed)``. Each replicate draws a
    response vector at the observed covariates from its own child stream of
    ``seed``, computes its randomised residuals under the same fit and sorts
    them. Band edges are order statistics per position (see
    :func:`envelope_ranks`).
    """
    if replicate_count < 19:
        raise DataError("replicate_count must be at least 19")
    if not 0 < band_level < 1:
        raise DataError("band_level must lie strictly inside (0, 1)")
    children = np.random.SeedSequence(seed).spawn(replicate_count)
    x = data.covariates
    observed = np.sort(randomized_quantile_residuals(fit, data, seed).residuals)
    sims = np.empty((replicate_count, data.n_obs))
    for r, child in enumerate(children):
        sim_seq, res_seq = child.spawn(2)
        y_sim = np.asarray(fit.sample(x, np.random.default_rng(sim_seq)))
        sims[r] = np.sort(randomized_quantile_residuals(fit, _with_response(data, y_sim), res_seq).residuals)
    sims.sort(axis=0)
    lo_rank, hi_rank = envelope_ranks(replicate_count, band_level)
    n = data.n_obs
    theoretical = normal_ppf((np.arange(1, n + 1) - 0.5) / n)
    return QQEnvelope(theoretical, observed, sims[lo_rank - 1], sims[hi_rank - 1], band_level, replicate_count, seed)


def _with_response(data: Dataset, y) -> Dataset:
    # bypass re-validation: covariates were already checked
    new = object.__new__(Dataset)
    object.__setattr__(new, "response", np.asarray(y, dtype=np.int64))
    object.__setattr__(new, "covariates", data.covariates)
    object.__setattr__(new, "covariate_names", data.covariate_names)
    object.__setattr__(new, "add_intercept", data.add_intercept)
    return new


@dataclass(frozen=True)
class GroupDispersion:
    group: int
    size: int
    eta_min: float
    eta_max: float
    observed_mean: float
    observed_variance: float
    mean_theoretical_variance: float
    vr: float


@dataclass(frozen=True)
class DispersionReport:
    model: str
    group_count: int
    groups: tuple

    @property
    def vr(self) -> np.ndarray:
        return np.array([g.vr for g in self.groups])


def dispersion_ratio_report(fit, data: Dataset, group_count: int = 10, theoretical_variance=None) -> DispersionReport:
    """Observed over theoretical variance within linear-predictor groups.

    Observations are ordered by the fit's linear predictor (stable sort, so
    ties keep input order) and cut into ``group_count`` contiguous groups
    whose sizes differ by at most one.
    """
    n = data.n_obs
    if group_count < 1:
        raise DataError("group_count must be positive")
    if n // group_count < 2:
        raise DataError(
            f"{n} observations cannot fill {group_count} groups of at least 2; use fewer groups"
        )
    eta = fit.linear_predictor(data.covariates)
    if theoretical_variance is None:
        theoretical_variance = fit.variance(data.covariates)
    theoretical_variance = np.asarray(theoretical_variance, dtype=float)
    order = np.argsort(eta, kind="stable")
    y = data.response.astype(float)
    groups = []
    for g, idx in enumerate(np.array_split(order, group_count)):
        obs_var = float(np.var(y[idx], ddof=1))
        theo = float(np.mean(theoretical_variance[idx]))
        if not theo > 0:
            raise NumericalError(f"theoretical variance is zero in group {g}")
        groups.append(
            GroupDispersion(
                g, idx.size, float(eta[idx].min()), float(eta[idx].max()),
                float(np.mean(y[idx])), obs_var, theo, obs_var / theo,
            )
        )
    return DispersionReport(getattr(fit, "model", "?"), group_count, tuple(groups))


@dataclass(frozen=True)
class FrequencyRow:
    value: int
    label: str
    observed: int
    expected: float


def frequency_table(fit, data: Dataset, tail_group_threshold: int | None = None) -> list[FrequencyRow]:
    """Observed and expected counts for ``0 .. threshold - 1`` plus a pooled ``>= threshold`` row.

    Without a threshold it defaults to one past the largest observed value, so
    the last row holds only the expected mass beyond the data.
    """
    y = data.response
    x = data.covariates
    threshold = int(y.max()) + 1 if tail_group_threshold is None else int(tail_group_threshold)
    if threshold < 1:
        raise DataError("tail_group_threshold must be at least 1")
    rows = []
    for v in range(threshold):
        rows.append(FrequencyRow(v, str(v), int(np.sum(y == v)), float(np.sum(fit.pmf(np.full(y.size, v), x)))))
    tail_expected = float(np.sum(fit.sf(np.full(y.size, threshold - 1), x)))
    rows.append(FrequencyRow(threshold, f">={threshold}", int(np.sum(y >= threshold)), tail_expected))
    return rows


@dataclass(frozen=True)
class LRTest:
    statistic: float
    df: int
    p_value: float

    def __iter__(self):
        return iter((self.statistic, self.df, self.p_value))


def likelihood_ratio_test(fit_null: FitResult, fit_alt: FitResult, tolerance: float = 1e-6) -> LRTest:
    """``2 (l_alt - l_null)`` against chi-square with the parameter-count difference.

    The plain chi-square reference is used even when the null sits on the
    boundary of the alternative (e.g. Poisson inside NB as ``k -> inf``).
    """
    if fit_null.n_obs != fit_alt.n_obs:
        raise DataError("models were fitted to different numbers of observations")
    df = fit_alt.n_params - fit_null.n_params
    if df < 1:
        raise DataError("alternative model must have more parameters than the null")
    stat = 2.0 * (fit_alt.loglik - fit_null.loglik)
    if stat < -tolerance:
        raise NumericalError(
            f"negative LR statistic {stat:.3g}: the larger model was not fitted to its optimum"
        )
    stat = max(stat, 0.0)
    return LRTest(stat, df, float(stats.chi2.sf(stat, df)))


def information_criteria(fits: dict) -> list[dict]:
    """One row per model: log-likelihood, parameter count, AIC and BIC."""
    rows = []
    for name, fit in fits.items():
        r = fit.result if hasattr(fit, "result") else fit
        rows.append({"model": name, "loglik": r.loglik, "n_params": r.n_params, "aic": r.aic, "bic": r.bic})
    return rows
