"""Array-namespace shim so the variational layer math runs unchanged on
numpy (eager, raises on failure) and jax.numpy (traceable, NaNs on failure)."""
from __future__ import annotations

import numpy as np
import scipy.linalg


class _NumpyBackend:
    xp = np

    @staticmethod
    def cholesky(a):
        return np.linalg.cholesky(a)

    @staticmethod
    def solve_tri(L, b, trans: bool = False):
        return scipy.linalg.solve_triangular(L, b, lower=True, trans=1 if trans else 0)


NUMPY = _NumpyBackend()

_JAX = None


def jax_backend():
    """Lazily construct the jax backend (enables float64 globally)."""
    global _JAX
    if _JAX is None:
        import jax
        import jax.numpy as jnp
        import jax.scipy.linalg as jsp

        jax.config.update("jax_enable_x64", True)

        class _JaxBackend:
            xp = jnp

            @staticmethod
            def cholesky(a):
                return jnp.linalg.cholesky(a)

            @staticmethod
            def solve_tri(L, b, trans: bool = False):
                return jsp.solve_triangular(L, b, lower=True, trans=1 if trans else 0)

        _JAX = _JaxBackend()
    return _JAX
