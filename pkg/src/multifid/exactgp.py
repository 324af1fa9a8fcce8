"""Exact Gaussian-process regression and the closed-form multi-fidelity
baselines: single-fidelity GP, recursive auto-regressive correction,
bias correction through a nominal input mapping, and input-mapping
calibration of a linear map.

Hyperparameters are fit by maximizing the log marginal likelihood with
L-BFGS-B restarts; the constant mean is profiled out in closed form
(generalized least squares), so its gradient contribution vanishes at the
profiled value and the standard trace formula applies unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .data import FidelityDataset, NominalMapping
from .errors import DegenerateData, DimensionMismatch, NotPositiveDefinite
from .kernels import (
    LENGTHSCALE_FLOOR,
    SIGNAL_VARIANCE_FLOOR,
    SeArdParams,
    se_ard_cov,
)
from .linalg import cholesky_psd, chol_solve, logdet_from_chol, tri_solve
from .rng import RngStream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GpFitConfig:
    restarts: int = 5
    noise_floor: float = 1e-8
    fixed_noise: float | None = None
    init_noise: float = 1e-2
    lengthscale_init_range: tuple[float, float] = (1e-1, 1e1)
    max_lengthscale: float = 1e6
    max_variance: float = 1e6
    max_noise: float = 1e3


@dataclass(frozen=True)
class ExactGpModel:
    """A fitted (or directly constructed) exact GP with cached factors.

    The Cholesky factor and solved residual are computed once at
    construction, so the cache can never drift from the parameters; any
    parameter change requires building a new model.
    """

    X: np.ndarray
    y: np.ndarray
    params: SeArdParams
    noise_variance: float
    mean: float
    log_likelihood: float
    applied_jitter: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, X, y, params: SeArdParams, noise_variance: float, mean: float | None = None):
        """Construct with cached factorization; ``mean=None`` profiles it."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        n = X.shape[0]
        k = se_ard_cov(X, X, params) + noise_variance * np.eye(n)
        res = cholesky_psd(k)
        if mean is None:
            ones = np.ones(n)
            kinv_y = chol_solve(res.factor, y)
            kinv_1 = chol_solve(res.factor, ones)
            mean = float(ones @ kinv_y) / float(ones @ kinv_1)
        r = y - mean
        alpha = chol_solve(res.factor, r)
        lml = (
            -0.5 * float(r @ alpha)
            - 0.5 * logdet_from_chol(res.factor)
            - 0.5 * n * _LOG_2PI
        )
        return cls(
            X=X,
            y=y,
            params=params,
            noise_variance=float(noise_variance),
            mean=float(mean),
            log_likelihood=lml,
            applied_jitter=res.jitter,
            chol=res.factor,
            alpha=alpha,
        )

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _nll_and_grad(theta, X, y, dim, fixed_noise):
    """Negative LML and gradient in log-parameter space (mean profiled)."""
    ls = np.exp(theta[:dim])
    var = math.exp(theta[dim])
    noise = fixed_noise if fixed_noise is not None else math.exp(theta[dim + 1])
    n = X.shape[0]
    diff = (X[:, None, :] - X[None, :, :]) / ls
    sq = diff * diff
    k_se = var * np.exp(-0.5 * np.sum(sq, axis=-1))
    k = k_se + noise * np.eye(n)
    try:
        res = cholesky_psd(k)
    except NotPositiveDefinite:
        return np.inf, np.zeros_like(theta)
    L = res.factor
    ones = np.ones(n)
    kinv_y = chol_solve(L, y)
    kinv_1 = chol_solve(L, ones)
    mu = float(ones @ kinv_y) / float(ones @ kinv_1)
    r = y - mu
    alpha = chol_solve(L, r)
    lml = -0.5 * float(r @ alpha) - 0.5 * logdet_from_chol(L) - 0.5 * n * _LOG_2PI

    # dLML/dtheta_j = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta_j)
    q = np.outer(alpha, alpha) - chol_solve(L, np.eye(n))
    grad = np.empty_like(theta)
    for d in range(dim):
        grad[d] = 0.5 * float(np.sum(q * (k_se * sq[:, :, d])))
    grad[dim] = 0.5 * float(np.sum(q * k_se))
    if fixed_noise is None:
        grad[dim + 1] = 0.5 * noise * float(np.trace(q))
    return -lml, -grad


def fit_exact_gp(
    X,
    y,
    config: GpFitConfig | None = None,
    rng: RngStream | None = None,
) -> ExactGpModel:
    """Maximum-likelihood fit of an SE-ARD GP with restarts.

    The first restart starts from unit lengthscales/variance; further
    restarts draw log-uniform lengthscales.  The best run by final log
    marginal likelihood wins.
    """
    config = config or GpFitConfig()
    rng = rng or RngStream(0)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y row counts differ")
    if X.shape[0] < 2:
        raise DegenerateData("need at least two observations to fit a GP")
    dim = X.shape[1]
    fixed = config.fixed_noise
    n_par = dim + 1 + (0 if fixed is not None else 1)

    lo_ls, hi_ls = math.log(LENGTHSCALE_FLOOR), math.log(config.max_lengthscale)
    bounds = [(lo_ls, hi_ls)] * dim
    bounds.append((math.log(SIGNAL_VARIANCE_FLOOR), math.log(config.max_variance)))
    if fixed is None:
        bounds.append((math.log(config.noise_floor), math.log(config.max_noise)))

    best = None
    for restart in range(max(1, config.restarts)):
        theta0 = np.zeros(n_par)
        if restart > 0:
            lo, hi = config.lengthscale_init_range
            theta0[:dim] = rng.uniform(math.log(lo), math.log(hi), dim)
        if fixed is None:
            theta0[dim + 1] = math.log(config.init_noise)
        out = scipy.optimize.minimize(
            _nll_and_grad,
            theta0,
            args=(X, y, dim, fixed),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if best is None or out.fun < best.fun:
            best = out
    theta = np.clip(best.x, [b[0] for b in bounds], [b[1] for b in bounds])
    params = SeArdParams(lengthscales=np.exp(theta[:dim]), variance=math.exp(theta[dim]))
    noise = fixed if fixed is not None else math.exp(theta[dim + 1])
    return ExactGpModel.build(X, y, params, noise)


def predict_exact_gp(model: ExactGpModel, Xstar):
    """Posterior mean and variance at new points, via Cholesky solves only."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != model.dim:
        raise DimensionMismatch(
            f"query points have {Xstar.shape[1]} columns, model expects {model.dim}"
        )
    k_star = se_ard_cov(Xstar, model.X, model.params)
    mean = model.mean + k_star @ model.alpha
    a = tri_solve(model.chol, k_star.T, side="forward")
    var = model.params.variance - np.sum(a * a, axis=0)
    return mean, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# Recursive auto-regressive baseline


@dataclass(frozen=True)
class Ar1Model:
    """Low-fidelity GP, scaling factor, and additive discrepancy GP."""

    lf: ExactGpModel
    rho: float
    discrepancy: ExactGpModel


def fit_ar1_recursive(
    lf: FidelityDataset,
    hf: FidelityDataset,
    config: GpFitConfig | None = None,
    rng: RngStream | None = None,
) -> Ar1Model:
    """Fit the recursive auto-regressive model on a shared input space.

    The low-fidelity GP is fit first; the scaling factor and the
    discrepancy GP hyperparameters are then estimated jointly by maximizing
    the marginal likelihood of y_hf - rho * m_lf(X_hf).
    """
    if lf.dim != hf.dim:
        raise DimensionMismatch("AR1 requires equal input dimensions")
    config = config or GpFitConfig()
    rng = rng or RngStream(0)
    rng_lf, rng_rho, rng_disc = rng.split(3)
    lf_model = fit_exact_gp(lf.X, lf.y, config, rng_lf)
    m_lf, _ = predict_exact_gp(lf_model, hf.X)
    dim = hf.dim
    fixed = config.fixed_noise

    def nll(theta):
        rho = theta[0]
        resid = hf.y - rho * m_lf
        val, grad = _nll_and_grad(theta[1:], hf.X, resid, dim, fixed)
        if not np.isfinite(val):
            return val, np.zeros_like(theta)
        # d(-LML)/drho = -alpha @ m_lf with alpha recomputed for resid
        ls = np.exp(theta[1 : 1 + dim])
        var = math.exp(theta[1 + dim])
        noise = fixed if fixed is not None else math.exp(theta[2 + dim])
        k = se_ard_cov(hf.X, hf.X, SeArdParams(ls, var)) + noise * np.eye(hf.n)
        L = cholesky_psd(k).factor
        ones = np.ones(hf.n)
        mu = float(ones @ chol_solve(L, resid)) / float(ones @ chol_solve(L, ones))
        alpha = chol_solve(L, resid - mu)
        return val, np.concatenate([[-float(alpha @ m_lf)], grad])

    n_par = 1 + dim + 1 + (0 if fixed is not None else 1)
    bounds = [(-10.0, 10.0)]
    bounds += [(math.log(LENGTHSCALE_FLOOR), math.log(config.max_lengthscale))] * dim
    bounds.append((math.log(SIGNAL_VARIANCE_FLOOR), math.log(config.max_variance)))
    if fixed is None:
        bounds.append((math.log(config.noise_floor), math.log(config.max_noise)))

    best = None
    for restart in range(max(1, config.restarts)):
        theta0 = np.zeros(n_par)
        theta0[0] = 1.0 if restart == 0 else float(rng_rho.uniform(-2.0, 2.0))
        if restart > 0:
            lo, hi = config.lengthscale_init_range
            theta0[1 : 1 + dim] = rng_disc.uniform(math.log(lo), math.log(hi), dim)
        if fixed is None:
            theta0[-1] = math.log(config.init_noise)
        out = scipy.optimize.minimize(
            nll, theta0, jac=True, method="L-BFGS-B", bounds=bounds
        )
        if best is None or out.fun < best.fun:
            best = out
    rho = float(best.x[0])
    theta = best.x[1:]
    params = SeArdParams(lengthscales=np.exp(theta[:dim]), variance=math.exp(theta[dim]))
    noise = fixed if fixed is not None else math.exp(theta[dim + 1])
    disc = ExactGpModel.build(hf.X, hf.y - rho * m_lf, params, noise)
    return Ar1Model(lf=lf_model, rho=rho, discrepancy=disc)


def predict_ar1(model: Ar1Model, Xstar):
    m_lf, v_lf = predict_exact_gp(model.lf, Xstar)
    m_g, v_g = predict_exact_gp(model.discrepancy, Xstar)
    return model.rho * m_lf + m_g, model.rho**2 * v_lf + v_g


# ---------------------------------------------------------------------------
# Bias correction through a nominal mapping


@dataclass(frozen=True)
class BcModel:
    """Bias correction: f_hf(x) ~ m_lf(g0(x)) + discrepancy(x).

    The discrepancy GP lives on the high-fidelity input space and is fit on
    the residuals at the nominally mapped training points; predictive
    variances of the two independent GPs add.
    """

    lf: ExactGpModel
    discrepancy: ExactGpModel
    mapping: NominalMapping


def build_bc(
    lf: FidelityDataset,
    hf: FidelityDataset,
    g0: NominalMapping,
    config: GpFitConfig | None = None,
    rng: RngStream | None = None,
) -> BcModel:
    if g0.source_dim != hf.dim or g0.target_dim != lf.dim:
        raise DimensionMismatch("nominal mapping dims do not match the datasets")
    config = config or GpFitConfig()
    rng = rng or RngStream(0)
    rng_lf, rng_disc = rng.split(2)
    lf_model = fit_exact_gp(lf.X, lf.y, config, rng_lf)
    mapped = g0.apply(hf.X)
    m_lf, _ = predict_exact_gp(lf_model, mapped)
    disc = fit_exact_gp(hf.X, hf.y - m_lf, config, rng_disc)
    return BcModel(lf=lf_model, discrepancy=disc, mapping=g0)


def predict_bc(model: BcModel, Xstar):
    """Prediction requires the mapping to be evaluable at new points."""
    mapped = model.mapping.apply(Xstar)
    m_lf, v_lf = predict_exact_gp(model.lf, mapped)
    m_g, v_g = predict_exact_gp(model.discrepancy, Xstar)
    return m_lf + m_g, v_lf + v_g


# ---------------------------------------------------------------------------
# Input-mapping calibration


@dataclass(frozen=True)
class ImcResult:
    """Fitted linear map x -> x @ A + b with its objective diagnostics."""

    A: np.ndarray
    b: np.ndarray
    objective: float
    objective_nominal: float
    regularization: float

    def as_mapping(self) -> NominalMapping:
        return NominalMapping(
            source_dim=self.A.shape[0], target_dim=self.A.shape[1], linear=(self.A, self.b)
        )


def imc_calibrate(
    hf: FidelityDataset,
    lf_exact,
    beta0: tuple[np.ndarray, np.ndarray],
    lam: float = 1e-3,
    lf_bounds=None,
    starts: int = 5,
    rng: RngStream | None = None,
) -> ImcResult:
    """Calibrate a linear input mapping by output mismatch minimization.

    Minimizes sum_i (y_hf_i - f_lf(g_beta(x_i)))^2 + lam * ||beta - beta0||^2
    with multi-start L-BFGS (numerical gradients); mapped points are clamped
    to the low-fidelity bounds before evaluation.  The objective is highly
    multimodal for oscillatory low-fidelity functions, so besides the
    nominal map the starts are dispersed over a wide coefficient box.  The
    nominal map beta0 is always among the candidates, so the fitted
    objective can never exceed the nominal one.
    """
    rng = rng or RngStream(0)
    A0 = np.asarray(beta0[0], dtype=float)
    b0 = np.asarray(beta0[1], dtype=float).ravel()
    d_hf, d_lf = A0.shape
    if hf.dim != d_hf:
        raise DimensionMismatch("beta0 does not match the HF dimension")
    if lf_bounds is not None:
        lf_bounds = np.asarray(lf_bounds, dtype=float).reshape(-1, 2)

    def unpack(beta):
        return beta[: d_hf * d_lf].reshape(d_hf, d_lf), beta[d_hf * d_lf :]

    beta_nom = np.concatenate([A0.ravel(), b0])

    def objective(beta):
        A, b = unpack(beta)
        mapped = hf.X @ A + b
        if lf_bounds is not None:
            mapped = np.clip(mapped, lf_bounds[:, 0], lf_bounds[:, 1])
        pred = np.asarray(lf_exact(mapped), dtype=float).ravel()
        reg = lam * float(np.sum((beta - beta_nom) ** 2))
        return float(np.sum((hf.y - pred) ** 2)) + reg

    a_scale = max(1.0, float(np.max(np.abs(A0))))
    if lf_bounds is not None:
        b_lo, b_hi = lf_bounds[:, 0], lf_bounds[:, 1]
    else:
        b_span = max(1.0, float(np.max(np.abs(b0))))
        b_lo, b_hi = b0 - 2 * b_span, b0 + 2 * b_span

    # the objective is multimodal, so seed the local polish runs from the
    # best points of a random search over the coefficient box (always
    # including the nominal map itself and a zero-slope map)
    n_probe = max(200, 50 * beta_nom.size)
    probes = [beta_nom, np.concatenate([np.zeros(d_hf * d_lf), 0.5 * (b_lo + b_hi) * np.ones(d_lf)])]
    for _ in range(n_probe):
        A_probe = rng.uniform(-1.5 * a_scale, 1.5 * a_scale, (d_hf, d_lf))
        probes.append(np.concatenate([A_probe.ravel(), rng.uniform(b_lo, b_hi)]))
    probes = np.asarray(probes)
    ranked = probes[np.argsort([objective(b) for b in probes])]

    f_nominal = objective(beta_nom)
    best_beta, best_f = beta_nom, f_nominal
    inits = [beta_nom, beta_nom + 0.1 * rng.standard_normal(beta_nom.shape)]
    inits += list(ranked[: max(1, starts)])
    for b_init in inits:
        out = scipy.optimize.minimize(objective, b_init, method="L-BFGS-B")
        if out.fun < best_f:
            best_beta, best_f = out.x, float(out.fun)
    A, b = unpack(best_beta)
    return ImcResult(
        A=A, b=b, objective=best_f, objective_nominal=f_nominal, regularization=lam
    )
