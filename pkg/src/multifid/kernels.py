"""Covariance functions and positivity transforms.

The public entry points validate shapes and operate on numpy arrays.  The
underscore-prefixed kernels are pure array formulas parameterized by an
array namespace ``xp`` so the variational models can trace them with
jax.numpy unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeVariance

# Post-step floors guarding against collapse on tiny designs.
LENGTHSCALE_FLOOR = 1e-4
SIGNAL_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class SeArdParams:
    """Squared-exponential ARD kernel parameters (one lengthscale per dim)."""

    lengthscales: np.ndarray
    variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0.0) or self.variance <= 0.0:
            raise ValueError("SE-ARD lengthscales and variance must be positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    @classmethod
    def unit(cls, dim: int) -> "SeArdParams":
        return cls(lengthscales=np.ones(dim), variance=1.0)


@dataclass(frozen=True)
class CompositeMfParams:
    """Parameter blocks of the multi-fidelity composite covariance.

    ``scale`` acts on the original inputs and multiplies the previous-output
    kernel ``prev_output`` (1-D); ``bias`` is an additive input-dependent
    term.  The three blocks are independent.  ``prev_linear_variance`` adds
    a linear kernel v * f * f' to the previous-output factor, which lets the
    layer express an input-dependent rescaling of the previous fidelity
    directly; zero disables it.
    """

    scale: SeArdParams
    prev_output: SeArdParams
    bias: SeArdParams
    prev_linear_variance: float = 0.0

    def __post_init__(self):
        if self.prev_output.dim != 1:
            raise ValueError("previous-output kernel must be one-dimensional")
        if self.scale.dim != self.bias.dim:
            raise ValueError("scale and bias kernels must share the input dimension")
        if self.prev_linear_variance < 0.0:
            raise ValueError("prev_linear_variance must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.scale.dim

    @classmethod
    def unit(cls, input_dim: int, prev_linear_variance: float = 0.0) -> "CompositeMfParams":
        return cls(
            scale=SeArdParams.unit(input_dim),
            prev_output=SeArdParams.unit(1),
            bias=SeArdParams.unit(input_dim),
            prev_linear_variance=prev_linear_variance,
        )


def _se_ard(A, B, lengthscales, variance, xp=np):
    """SE-ARD Gram block: variance * exp(-0.5 * sum_d ((a_d-b_d)/l_d)^2)."""
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    return variance * xp.exp(-0.5 * xp.sum(diff * diff, axis=-1))


def _composite_mf(Xa, Xb, fa, fb, p_scale, p_prev, p_bias, xp=np):
    """k_scale(x,x') * k_prev(f,f') + k_bias(x,x') on stacked inputs.

    ``p_prev`` is (lengthscales, variance) or (lengthscales, variance,
    linear variance); the optional third entry adds v * f * f'.
    """
    k_scale = _se_ard(Xa, Xb, p_scale[0], p_scale[1], xp)
    k_prev = _se_ard(fa, fb, p_prev[0], p_prev[1], xp)
    if len(p_prev) > 2:
        k_prev = k_prev + p_prev[2] * (fa @ xp.swapaxes(fb, 0, 1))
    k_bias = _se_ard(Xa, Xb, p_bias[0], p_bias[1], xp)
    return k_scale * k_prev + k_bias


def se_ard_cov(A, B, params: SeArdParams) -> np.ndarray:
    """Cross-covariance matrix between point sets A (n,d) and B (m,d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.dim or B.shape[1] != params.dim:
        raise DimensionMismatch(
            f"points have {A.shape[1]}/{B.shape[1]} columns, kernel expects {params.dim}"
        )
    return _se_ard(A, B, params.lengthscales, params.variance)


def composite_mf_cov(Xa, Xb, fa, fb, params: CompositeMfParams) -> np.ndarray:
    """Composite multi-fidelity covariance between (x, f_prev) pairs.

    ``fa``/``fb`` are the previous-layer output columns aligned row-wise with
    ``Xa``/``Xb``.
    """
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    fa = np.asarray(fa, dtype=float).reshape(Xa.shape[0], -1)
    fb = np.asarray(fb, dtype=float).reshape(Xb.shape[0], -1)
    if Xa.shape[1] != params.input_dim or Xb.shape[1] != params.input_dim:
        raise DimensionMismatch("input columns do not match the composite kernel")
    if fa.shape[1] != 1 or fb.shape[1] != 1:
        raise DimensionMismatch("previous-output columns must be single-column")
    return _composite_mf(
        Xa,
        Xb,
        fa,
        fb,
        (params.scale.lengthscales, params.scale.variance),
        (
            params.prev_output.lengthscales,
            params.prev_output.variance,
            params.prev_linear_variance,
        ),
        (params.bias.lengthscales, params.bias.variance),
    )


def white_cov(n: int, variance: float) -> np.ndarray:
    """variance * I_n; the cross-block between distinct sets is zero."""
    if variance < 0.0:
        raise NegativeVariance("white kernel variance must be >= 0")
    if n < 0:
        raise ValueError("n must be >= 0")
    return variance * np.eye(n)


def to_unconstrained(positive) -> np.ndarray:
    """Log transform mapping positive parameters to the real line."""
    arr = np.asarray(positive, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("log transform requires strictly positive input")
    return np.log(arr)


def to_constrained(raw) -> np.ndarray:
    """Inverse of :func:`to_unconstrained` (exp)."""
    return np.exp(np.asarray(raw, dtype=float))
