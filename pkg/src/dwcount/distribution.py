"""Type-1 discrete Weibull distribution.

The distribution has survival function ``P(Y >= y) = q ** (y ** beta)`` for
``y = 0, 1, 2, ...``. Every power is evaluated in log space as
``exp(y**beta * log(q))`` with ``y**beta = exp(beta * log(y))`` so that long
tails (``q`` close to one, small ``beta``) neither overflow nor lose the
tail probabilities to cancellation.

The array-level functions (:func:`pmf`, :func:`cdf`, :func:`sf`,
:func:`quantile`, ...) take ``log_q`` rather than ``q``; regression code
works with ``log_q = -exp(eta)`` directly and never forms ``q`` itself.
The ``dw_*`` functions are the scalar-parameter API built on top of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, TruncationError

__all__ = [
    "DWParams",
    "TruncationPolicy",
    "pmf",
    "logpmf",
    "cdf",
    "sf",
    "logcdf",
    "logsf",
    "quantile",
    "moments",
    "dw_pmf",
    "dw_cdf",
    "dw_quantile",
    "dw_mean",
    "dw_variance",
    "dw_sample",
]

# Values within this distance of an integer are snapped before the ceiling in
# the quantile formula.
_INTEGER_SNAP = 1e-9


@dataclass(frozen=True)
class DWParams:
    """Parameters ``(q, beta)`` of one discrete Weibull distribution."""

    q: float
    beta: float

    def __post_init__(self):
        q = float(self.q)
        beta = float(self.beta)
        if not 0.0 < q < 1.0:
            raise DataError(f"q must lie strictly inside (0, 1), got {self.q!r}")
        if not (beta > 0.0 and math.isfinite(beta)):
            raise DataError(f"beta must be a positive finite number, got {self.beta!r}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "beta", beta)

    @property
    def log_q(self) -> float:
        return math.log(self.q)


@dataclass(frozen=True)
class TruncationPolicy:
    """Stopping rule for the infinite sums behind the moments."""

    term_tolerance: float = 1e-12
    max_terms: int = 10**7

    def __post_init__(self):
        if not self.term_tolerance > 0:
            raise DataError("term_tolerance must be positive")
        if int(self.max_terms) < 1:
            raise DataError("max_terms must be at least 1")


DEFAULT_POLICY = TruncationPolicy()


def _power(y, beta):
    """``y ** beta`` for ``y >= 0`` computed as ``exp(beta * log(y))``."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.exp(beta * np.log(y))


def _log_survival(y, log_q, beta):
    """``log P(Y >= y)``; zero for ``y <= 0``."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        out = log_q * _power(y, beta)
    # 0 * -inf can only arise from y = 0
    return np.where(y == 0, 0.0, out)


def _log_step(y, log_q, beta):
    """``log S(y+1) - log S(y)`` without cancellation for large ``y``.

    Uses ``(y+1)**b - y**b = y**b * expm1(b * log1p(1/y))``.
    """
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    safe = np.where(y > 0, y, 1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        step = log_q * _power(safe, beta) * np.expm1(beta * np.log1p(1.0 / safe))
    return np.where(y == 0, log_q, step)


def sf(y, log_q, beta):
    """Upper tail ``P(Y > y) = q ** ((y + 1) ** beta)``; one for ``y < 0``."""
    y = np.floor(np.asarray(y, dtype=float))
    return np.exp(_log_survival(y + 1.0, log_q, beta))


def logsf(y, log_q, beta):
    y = np.floor(np.asarray(y, dtype=float))
    return _log_survival(y + 1.0, log_q, beta)


def logcdf(y, log_q, beta):
    y = np.floor(np.asarray(y, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.log(-np.expm1(_log_survival(y + 1.0, log_q, beta)))
    return np.where(y < 0, -np.inf, out)


def cdf(y, log_q, beta):
    """``P(Y <= y) = 1 - q ** ((y + 1) ** beta)``; zero for ``y < 0``."""
    y = np.floor(np.asarray(y, dtype=float))
    out = -np.expm1(_log_survival(y + 1.0, log_q, beta))
    return np.where(y < 0, 0.0, out)


def logpmf(y, log_q, beta):
    """Log probability mass, stable far into the tail.

    ``log(q**(y**b) - q**((y+1)**b))`` is rewritten as
    ``log S(y) + log(-expm1(log S(y+1) - log S(y)))``.
    """
    y = np.asarray(y, dtype=float)
    lo = _log_survival(y, log_q, beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lo + np.log(-np.expm1(_log_step(y, log_q, beta)))
    return np.where((y < 0) | (y != np.floor(y)), -np.inf, out)


def pmf(y, log_q, beta):
    """Probability mass ``q**(y**beta) - q**((y+1)**beta)``; zero off support."""
    y = np.asarray(y, dtype=float)
    lo = np.exp(_log_survival(y, log_q, beta))
    with np.errstate(invalid="ignore"):
        out = -lo * np.expm1(_log_step(y, log_q, beta))
    return np.where((y < 0) | (y != np.floor(y)), 0.0, out)


def quantile(tau, log_q, beta):
    """Smallest ``y`` with ``F(y) >= tau`` via the closed-form inverse.

    For ``tau < 1 - q`` the answer is 0 because ``F(0) = 1 - q``.
    Returns an int64 array (or scalar for scalar input).
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(~((tau_arr > 0) & (tau_arr < 1))):
        raise DataError("tau must lie strictly inside (0, 1)")
    log_q = np.asarray(log_q, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        ratio = np.log1p(-tau_arr) / log_q
        value = np.exp(np.log(ratio) / beta) - 1.0
    nearest = np.round(value)
    snapped = np.where(np.abs(value - nearest) <= _INTEGER_SNAP, nearest, np.ceil(value))
    # tau < 1 - q  <=>  ratio < 1, where the formula would go negative
    snapped = np.where(ratio < 1.0, 0.0, np.maximum(snapped, 0.0))
    if np.any(~np.isfinite(snapped)) or np.any(snapped > 2.0**62):
        raise OverflowError("quantile exceeds the int64 range for these parameters")
    out = snapped.astype(np.int64)
    return out if out.ndim else int(out)


def _truncated_sum(log_q, beta, policy, weight_by_y):
    """Sum ``y**w * q**(y**beta)`` over ``y >= 1`` (``w`` is 0 or 1).

    The summand is unimodal in ``y``; summation stops at the first term below
    ``policy.term_tolerance`` that is not followed by a larger term.
    """
    total = 0.0
    start = 1
    block = 1024
    max_terms = int(policy.max_terms)
    while start <= max_terms:
        stop = min(start + block, max_terms + 1)
        # one extra point to test whether the terms are still falling
        y = np.arange(start, stop + 1, dtype=float)
        terms = np.exp(_log_survival(y, log_q, beta))
        if weight_by_y:
            terms = terms * y
        small = (terms[:-1] < policy.term_tolerance) & (terms[1:] <= terms[:-1])
        hits = np.flatnonzero(small)
        if hits.size:
            return total + math.fsum(terms[: hits[0]])
        total += math.fsum(terms[:-1])
        start = stop
        block = min(block * 2, 1 << 20)
    raise TruncationError(
        f"moment series still above {policy.term_tolerance:g} after "
        f"{max_terms} terms (log q={float(log_q):.6g}, beta={beta:.6g})"
    )


def moments(log_q, beta, policy=DEFAULT_POLICY):
    """Return ``(mean, variance)`` by truncated summation."""
    mu = _truncated_sum(log_q, beta, policy, weight_by_y=False)
    s = _truncated_sum(log_q, beta, policy, weight_by_y=True)
    return mu, max(2.0 * s - mu - mu * mu, 0.0)


def dw_pmf(y, params: DWParams):
    return pmf(y, params.log_q, params.beta)


def dw_cdf(y, params: DWParams):
    return cdf(y, params.log_q, params.beta)


def dw_quantile(tau, params: DWParams):
    return quantile(tau, params.log_q, params.beta)


def dw_mean(params: DWParams, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    return _truncated_sum(params.log_q, params.beta, policy, weight_by_y=False)


def dw_variance(params: DWParams, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """Variance ``2 * sum(y q**(y**beta)) - mu - mu**2``.

    Cancellation can push the raw value a hair below zero; such values are
    clipped at zero.
    """
    return moments(params.log_q, params.beta, policy)[1]


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    u = rng.random(size)
    bad = u == 0.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


def dw_sample(params: DWParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` variates by inverse transform of uniform(0, 1) draws."""
    if n < 1:
        raise DataError("n must be at least 1")
    return np.atleast_1d(quantile(uniform_open(rng, n), params.log_q, params.beta))
