"""Sparse variational GP layers.

A layer carries inducing inputs Z, a Gaussian variational distribution over
the inducing outputs (independent blocks per output column, each stored by
its Cholesky factor), a kernel, and a Gaussian likelihood noise.  The
marginal conditional, reparameterized sampling, the closed-form Gaussian KL
to the prior N(mean(Z), K_ZZ), and natural-gradient updates of the
variational blocks are provided here; the deep multi-fidelity model is
assembled from these pieces.

The ``*_from_parts`` functions are pure array math over a backend namespace
so the training code can trace them with jax; the layer-level wrappers run
them on numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._backend import NUMPY
from .errors import DimensionMismatch, NotPositiveDefinite
from .kernels import CompositeMfParams, SeArdParams, _composite_mf, _se_ard

DEFAULT_LAYER_JITTER = 1e-8


# ---------------------------------------------------------------------------
# Kernel plumbing shared by numpy and jax paths


def gram(bk, kind: str, karr, A, B):
    """Cross-covariance block for kernel ``kind`` with raw parameter arrays.

    ``karr`` is (lengthscales, variance) for "se" and the three such pairs
    (scale, prev_output, bias) for "composite"; composite inputs carry the
    previous-layer output as their last column.
    """
    if kind == "se":
        (ls, var) = karr
        return _se_ard(A, B, ls, var, bk.xp)
    if kind == "composite":
        p_scale, p_prev, p_bias = karr
        return _composite_mf(
            A[:, :-1], B[:, :-1], A[:, -1:], B[:, -1:], p_scale, p_prev, p_bias, bk.xp
        )
    raise ValueError(f"unknown kernel kind {kind!r}")


def gram_diag(bk, kind: str, karr, A):
    """Prior variance along the diagonal (zero-distance covariance) at the
    input rows A; the composite diagonal depends on the previous-output
    column when the linear term is active."""
    n = A.shape[0]
    if kind == "se":
        return karr[1] * bk.xp.ones(n)
    if kind == "composite":
        p_scale, p_prev, p_bias = karr
        prev_diag = p_prev[1] * bk.xp.ones(n)
        if len(p_prev) > 2:
            prev_diag = prev_diag + p_prev[2] * A[:, -1] ** 2
        return p_scale[1] * prev_diag + p_bias[1]
    raise ValueError(f"unknown kernel kind {kind!r}")


def _sym(bk, s):
    return 0.5 * (s + bk.xp.swapaxes(s, -1, -2))


def conditional_from_parts(bk, L, Kzx, kxx, q_mu, q_S, h_x, h_z):
    """Marginal mean/variance of the sparse conditional at query points.

    mean = h(x) + Kxz Kzz^-1 (m - h(Z))
    var  = kxx - diag(Kxz Kzz^-1 (Kzz - S) Kzz^-1 Kzx)

    Shapes: L (M,M) factor of Kzz (+jitter), Kzx (M,N), kxx (N,), q_mu (M,P),
    q_S (P,M,M), h_x (N,P), h_z (M,P).  Returns mean (N,P), var (N,P).
    """
    xp = bk.xp
    A = bk.solve_tri(L, Kzx)                      # L^-1 Kzx
    mean = h_x + A.T @ bk.solve_tri(L, q_mu - h_z)
    W = bk.solve_tri(L, A, trans=True)            # Kzz^-1 Kzx
    base = kxx - xp.sum(A * A, axis=0)
    cols = []
    for p in range(q_mu.shape[1]):
        Sp = _sym(bk, q_S[p])
        cols.append(base + xp.sum(W * (Sp @ W), axis=0))
    var = xp.stack(cols, axis=1)
    return mean, xp.maximum(var, 0.0)


def gaussian_kl_from_parts(bk, L, q_mu, q_S, h_z):
    """Sum over output blocks of KL[ N(m_p, S_p) || N(h_z_p, K_ZZ) ]."""
    xp = bk.xp
    M = q_mu.shape[0]
    logdet_k = 2.0 * xp.sum(xp.log(xp.diagonal(L)))
    total = 0.0
    for p in range(q_mu.shape[1]):
        Ls = bk.cholesky(_sym(bk, q_S[p]))
        a = bk.solve_tri(L, q_mu[:, p] - h_z[:, p])
        c = bk.solve_tri(L, Ls)
        logdet_s = 2.0 * xp.sum(xp.log(xp.diagonal(Ls)))
        total = total + 0.5 * (
            xp.sum(c * c) + xp.sum(a * a) - M + logdet_k - logdet_s
        )
    return total


def expected_gauss_loglik(bk, y, f_mean, f_var, noise):
    """E_q[log N(y | f, noise)] summed over entries, with q = N(f_mean, f_var)."""
    xp = bk.xp
    return xp.sum(
        -0.5 * xp.log(2.0 * math.pi * noise)
        - 0.5 * ((y - f_mean) ** 2 + f_var) / noise
    )


# ---------------------------------------------------------------------------
# Layer object (numpy-facing)


@dataclass(frozen=True)
class SparseVariationalLayer:
    """One sparse GP layer with per-output variational blocks.

    ``Z`` rows live in the layer's input space; for a composite kernel the
    last input column is the previous layer's output.  ``q_chol`` stores the
    lower Cholesky factor of each output block's covariance.
    """

    Z: np.ndarray
    kernel: SeArdParams | CompositeMfParams
    q_mu: np.ndarray
    q_chol: np.ndarray
    noise_variance: float = 1e-2
    mean_function: str = "zero"  # or "previous-output-identity"
    white_variance: float = 0.0
    jitter: float = DEFAULT_LAYER_JITTER

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        q_mu = np.asarray(self.q_mu, dtype=float)
        if q_mu.ndim == 1:
            q_mu = q_mu[:, None]
        q_chol = np.asarray(self.q_chol, dtype=float)
        if q_chol.ndim == 2:
            q_chol = q_chol[None]
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "q_mu", q_mu)
        object.__setattr__(self, "q_chol", q_chol)
        if q_mu.shape[0] != Z.shape[0]:
            raise DimensionMismatch("q_mu rows must match the inducing count")
        if q_chol.shape != (q_mu.shape[1], Z.shape[0], Z.shape[0]):
            raise DimensionMismatch("q_chol must be (outputs, M, M)")
        if self.input_dim != Z.shape[1]:
            raise DimensionMismatch("inducing inputs do not match the kernel dim")
        if self.mean_function not in ("zero", "previous-output-identity"):
            raise ValueError(f"unknown mean function {self.mean_function!r}")

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    @property
    def num_outputs(self) -> int:
        return self.q_mu.shape[1]

    @property
    def input_dim(self) -> int:
        if isinstance(self.kernel, SeArdParams):
            return self.kernel.dim
        return self.kernel.input_dim + 1

    @classmethod
    def initial(cls, Z, kernel, q_mu, s_scale: float = 1e-5, **kw):
        """Layer with variational covariance s_scale * I per output block."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        q_mu = np.asarray(q_mu, dtype=float)
        if q_mu.ndim == 1:
            q_mu = q_mu[:, None]
        m, p = Z.shape[0], q_mu.shape[1]
        q_chol = np.tile(math.sqrt(s_scale) * np.eye(m), (p, 1, 1))
        return cls(Z=Z, kernel=kernel, q_mu=q_mu, q_chol=q_chol, **kw)

    # -- kernel plumbing

    def _kind_and_arrays(self):
        k = self.kernel
        if isinstance(k, SeArdParams):
            return "se", (k.lengthscales, k.variance)
        return "composite", (
            (k.scale.lengthscales, k.scale.variance),
            (k.prev_output.lengthscales, k.prev_output.variance, k.prev_linear_variance),
            (k.bias.lengthscales, k.bias.variance),
        )

    def prior_mean(self, X) -> np.ndarray:
        if self.mean_function == "zero":
            return np.zeros((X.shape[0], self.num_outputs))
        return np.repeat(X[:, -1:], self.num_outputs, axis=1)

    def gram_chol(self) -> np.ndarray:
        kind, karr = self._kind_and_arrays()
        kzz = gram(NUMPY, kind, karr, self.Z, self.Z)
        kzz = kzz + (self.white_variance + self.jitter) * np.eye(self.num_inducing)
        try:
            return np.linalg.cholesky(kzz)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("inducing Gram matrix not PD") from exc

    def q_cov(self) -> np.ndarray:
        return self.q_chol @ np.swapaxes(self.q_chol, -1, -2)


def sparse_conditional(layer: SparseVariationalLayer, X):
    """Per-point marginal means/variances of the layer at inputs X.

    Returns arrays of shape (n, outputs); variances are clamped at zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != layer.input_dim:
        raise DimensionMismatch(
            f"inputs have {X.shape[1]} columns, layer expects {layer.input_dim}"
        )
    kind, karr = layer._kind_and_arrays()
    L = layer.gram_chol()
    kzx = gram(NUMPY, kind, karr, layer.Z, X)
    kxx = gram_diag(NUMPY, kind, karr, X) + layer.white_variance
    return conditional_from_parts(
        NUMPY, L, kzx, kxx, layer.q_mu, layer.q_cov(),
        layer.prior_mean(X), layer.prior_mean(layer.Z),
    )


def sample_layer(layer: SparseVariationalLayer, X, eps):
    """Reparameterized marginal draw: mean + sqrt(var) * eps (deterministic in eps)."""
    mean, var = sparse_conditional(layer, X)
    eps = np.asarray(eps, dtype=float).reshape(mean.shape)
    return mean + np.sqrt(var) * eps


def kl_gaussian(layer: SparseVariationalLayer) -> float:
    """KL from the variational distribution to the layer prior, over blocks."""
    L = layer.gram_chol()
    val = gaussian_kl_from_parts(
        NUMPY, L, layer.q_mu, layer.q_cov(), layer.prior_mean(layer.Z)
    )
    return float(val)


# ---------------------------------------------------------------------------
# Natural-gradient machinery


@dataclass(frozen=True)
class NaturalStepInfo:
    halvings: int = 0
    skipped_blocks: int = 0

    @property
    def skipped(self) -> bool:
        return self.skipped_blocks > 0


def natural_from_moments(m, S):
    """(m, S) -> (theta1, theta2) = (S^-1 m, -1/2 S^-1)."""
    L = np.linalg.cholesky(0.5 * (S + S.T))
    from .linalg import chol_solve

    s_inv = chol_solve(L, np.eye(S.shape[0]))
    s_inv = 0.5 * (s_inv + s_inv.T)
    return s_inv @ m, -0.5 * s_inv


def moments_from_natural(theta1, theta2):
    """(theta1, theta2) -> (m, S); theta2 must be negative definite."""
    prec = -(theta2 + theta2.T)  # = -2 * sym(theta2)
    L = np.linalg.cholesky(prec)
    from .linalg import chol_solve

    S = chol_solve(L, np.eye(prec.shape[0]))
    S = 0.5 * (S + S.T)
    return chol_solve(L, theta1), S


def expectation_grads(m, S, g_m, g_S):
    """Convert moment-space gradients (dL/dm, dL/dS) into gradients with
    respect to the expectation parameters (eta1, eta2) = (m, S + m m^T)."""
    g_S = 0.5 * (g_S + np.swapaxes(g_S, -1, -2))
    return g_m - 2.0 * (g_S @ m), g_S


def natural_step_block(m, S, g_eta1, g_eta2, gamma, max_halvings: int = 10):
    """One natural step on a single Gaussian block; halves the step until the
    updated covariance is positive definite.  Returns (m, S, halvings, ok)."""
    theta1, theta2 = natural_from_moments(m, S)
    step = gamma
    for halving in range(max_halvings + 1):
        try:
            m_new, s_new = moments_from_natural(
                theta1 + step * g_eta1, theta2 + step * g_eta2
            )
            np.linalg.cholesky(s_new)  # must stay factorizable for storage
            return m_new, s_new, halving, True
        except np.linalg.LinAlgError:
            step *= 0.5
    return m, S, max_halvings, False


def natural_step(layer: SparseVariationalLayer, g_eta1, g_eta2, gamma: float):
    """Natural-gradient ascent step theta <- theta + gamma * dL/deta on every
    variational block of the layer.  Blocks whose covariance cannot be kept
    positive definite after 10 halvings are skipped and flagged."""
    g_eta1 = np.asarray(g_eta1, dtype=float).reshape(layer.q_mu.shape)
    g_eta2 = np.asarray(g_eta2, dtype=float).reshape(layer.q_chol.shape)
    if not (np.all(np.isfinite(g_eta1)) and np.all(np.isfinite(g_eta2))):
        raise ValueError("natural_step requires finite gradients")
    if not np.any(g_eta1) and not np.any(g_eta2):
        return layer, NaturalStepInfo()
    S = layer.q_cov()
    new_mu = np.empty_like(layer.q_mu)
    new_chol = np.empty_like(layer.q_chol)
    halvings = 0
    skipped = 0
    for p in range(layer.num_outputs):
        m_new, s_new, h, ok = natural_step_block(
            layer.q_mu[:, p], S[p], g_eta1[:, p], g_eta2[p], gamma
        )
        halvings = max(halvings, h)
        if not ok:
            skipped += 1
            new_mu[:, p] = layer.q_mu[:, p]
            new_chol[p] = layer.q_chol[p]
        else:
            new_mu[:, p] = m_new
            new_chol[p] = np.linalg.cholesky(s_new)
    info = NaturalStepInfo(halvings=halvings, skipped_blocks=skipped)
    return replace(layer, q_mu=new_mu, q_chol=new_chol), info
