"""Dense linear-algebra primitives.

Everything downstream funnels its matrix work through these routines:
Cholesky factorization with an escalating jitter ladder, triangular solves,
and log-determinants from factors.  No routine ever forms an explicit
matrix inverse; quadratic forms are always evaluated through factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonPositiveVariance, NotPositiveDefinite, SingularTriangular

DEFAULT_JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

_SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class CholeskyResult:
    """Lower-triangular factor plus the diagonal jitter that made it succeed."""

    factor: np.ndarray
    jitter: float


def cholesky_psd(a, jitter_ladder=DEFAULT_JITTER_LADDER) -> CholeskyResult:
    """Factor a symmetric PSD matrix as L @ L.T = a + jitter * I.

    The ladder entries are tried in order; the first jitter for which the
    factorization succeeds is recorded in the result.  Raises
    NotPositiveDefinite once the ladder is exhausted.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if float(np.max(np.abs(a - a.T))) > _SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric within tolerance")
    eye = np.eye(a.shape[0])
    for jitter in jitter_ladder:
        try:
            factor = np.linalg.cholesky(a + jitter * eye if jitter else a)
        except np.linalg.LinAlgError:
            continue
        return CholeskyResult(factor=factor, jitter=float(jitter))
    raise NotPositiveDefinite(
        f"cholesky failed for all jitters {tuple(jitter_ladder)}"
    )


def tri_solve(L, B, side: str = "forward") -> np.ndarray:
    """Solve L @ Y = B ("forward") or L.T @ Y = B ("backward") for Y.

    L must be square lower-triangular with a nonzero diagonal.
    """
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise SingularTriangular(f"expected a square factor, got shape {L.shape}")
    if np.min(np.abs(np.diag(L))) < 1e-300:
        raise SingularTriangular("triangular factor has a zero diagonal entry")
    if side == "forward":
        trans = 0
    elif side == "backward":
        trans = 1
    else:
        raise ValueError(f"side must be 'forward' or 'backward', got {side!r}")
    return scipy.linalg.solve_triangular(L, B, lower=True, trans=trans)


def chol_solve(L, B) -> np.ndarray:
    """Solve (L @ L.T) @ Y = B through two triangular solves."""
    return tri_solve(L, tri_solve(L, B, side="forward"), side="backward")


def logdet_from_chol(L) -> float:
    """log|A| for A = L @ L.T, i.e. 2 * sum(log diag(L))."""
    diag = np.diag(np.asarray(L, dtype=float))
    return float(2.0 * np.sum(np.log(diag)))


def gauss_logpdf(z, mean, variance):
    """Log density of N(mean, variance) at z; broadcasts over arrays."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0.0):
        raise NonPositiveVariance("gauss_logpdf requires variance > 0")
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    out = -0.5 * np.log(2.0 * math.pi * variance) - (z - mean) ** 2 / (2.0 * variance)
    return float(out) if out.ndim == 0 else out
