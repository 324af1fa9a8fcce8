"""First-order optimizers (Adam) over flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient


@dataclass
class AdamState:
    """Adam moment accumulators and step configuration.

    step_size/beta defaults follow the training setup used throughout the
    experiments (gamma=0.003, beta1=0.9, beta2=0.99); epsilon is the usual
    1e-8 stabilizer.
    """

    step_size: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0


def adam_step(state: AdamState, params, grads, *, maximize: bool = False):
    """One bias-corrected Adam update; returns (new_params, state).

    The accumulators inside ``state`` are updated in place and the iteration
    counter is incremented.  ``maximize=True`` ascends the objective instead
    of descending it.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise DimensionMismatch(
            f"params shape {params.shape} != grads shape {grads.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise DimensionMismatch("Adam accumulators do not match parameter shape")

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    step = state.step_size * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_params = params + step if maximize else params - step
    return new_params, state
