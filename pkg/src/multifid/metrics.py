"""Prediction-quality metrics: R^2, RMSE, and the mean negative test
log-likelihood of a Gaussian predictive distribution.

MNLL comes in two variants.  The "density" variant is the negative mean
Gaussian log density, -mean log N(y; yhat, var); the "literal" variant
drops the -log(sigma) normalization, i.e. -mean log phi((y - yhat)/sigma)
with phi the standard normal pdf.  They differ exactly by mean(log sigma).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonPositiveVariance
from .linalg import gauss_logpdf

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    rmse: float
    mnll: float
    n_test: int
    mnll_variant: str = "density"


def compute_metrics(y_true, y_pred, var_pred, variant: str = "density") -> MetricsReport:
    """Evaluate R^2 / RMSE / MNLL of a Gaussian predictor on a test set."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    var_pred = np.asarray(var_pred, dtype=float).ravel()
    if not (y_true.shape == y_pred.shape == var_pred.shape):
        raise LengthMismatch("y_true, y_pred and var_pred must have equal lengths")
    if y_true.size < 1:
        raise LengthMismatch("metrics need at least one test point")
    if variant not in ("density", "literal"):
        raise ValueError(f"unknown MNLL variant {variant!r}")
    if np.any(var_pred <= 0.0):
        raise NonPositiveVariance("MNLL requires strictly positive variances")

    resid = y_true - y_pred
    rmse = float(np.sqrt(np.mean(resid**2)))
    denom = float(np.sum((y_true - np.mean(y_true)) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / denom if denom > 0 else (1.0 if rmse == 0 else -np.inf)
    if variant == "density":
        mnll = float(-np.mean(gauss_logpdf(y_true, y_pred, var_pred)))
    else:
        mnll = float(np.mean(_HALF_LOG_2PI + resid**2 / (2.0 * var_pred)))
    return MetricsReport(
        r2=r2, rmse=rmse, mnll=mnll, n_test=y_true.size, mnll_variant=variant
    )
