"""Design of experiments: Latin hypercube sampling."""
from __future__ import annotations

import numpy as np

from .rng import RngStream


def lhs_sample(n: int, bounds, rng: RngStream) -> np.ndarray:
    """Latin hypercube design of n points in the given box.

    Each dimension gets exactly one point per equal-width stratum, with a
    uniform jitter inside the stratum; strata are assigned by an independent
    permutation per dimension.  Deterministic given the stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    d = bounds.shape[0]
    u01 = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        u01[:, j] = (strata + rng.uniform(size=n)) / n
    return bounds[:, 0] + u01 * (bounds[:, 1] - bounds[:, 0])
