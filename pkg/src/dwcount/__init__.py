"""Discrete Weibull regression for count data, with Poisson and NB baselines."""

from .distribution import (
    DWParams,
    TruncationPolicy,
    dw_cdf,
    dw_mean,
    dw_pmf,
    dw_quantile,
    dw_sample,
    dw_variance,
)
from .estimation import FitResult, OptimizerConfig, fit_dw_mle, numeric_hessian, wald_interval
from .regression import (
    Dataset,
    DWRegressionFit,
    NBFit,
    PoissonFit,
    fit_dw_regression,
    fit_nb_regression,
    fit_poisson_glm,
    fitted_mean,
    fitted_median,
    fitted_quantile,
    interpret_coefficients,
    q_from_linear_predictor,
)

__version__ = "0.1.0"
