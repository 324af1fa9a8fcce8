import math

import numpy as np
import pytest

from multifid.errors import NonPositiveVariance, NotPositiveDefinite, SingularTriangular
from multifid.linalg import (
    cholesky_psd,
    chol_solve,
    gauss_logpdf,
    logdet_from_chol,
    tri_solve,
)


def test_cholesky_identity():
    res = cholesky_psd(np.eye(3))
    assert res.jitter == 0.0
    np.testing.assert_allclose(res.factor, np.eye(3))


def test_cholesky_known_factor():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    res = cholesky_psd(a)
    expected = np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    np.testing.assert_allclose(res.factor, expected, atol=1e-12)
    # derived check: multiply the factor back
    np.testing.assert_allclose(res.factor @ res.factor.T, a, atol=1e-12)


def test_cholesky_rank_deficient_uses_jitter():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    res = cholesky_psd(a)
    assert res.jitter > 0.0
    np.testing.assert_allclose(
        res.factor @ res.factor.T, a + res.jitter * np.eye(2), atol=1e-12
    )


def test_cholesky_rejects_negative_definite():
    with pytest.raises(NotPositiveDefinite):
        cholesky_psd(-np.eye(2))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        cholesky_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_reconstruction_random_psd():
    rng = np.random.default_rng(42)
    for _ in range(10):
        m = rng.standard_normal((10, 10))
        a = m @ m.T + 10 * np.eye(10)
        res = cholesky_psd(a)
        err = np.max(np.abs(res.factor @ res.factor.T - a))
        assert err <= 1e-8 * np.max(np.abs(a))


def test_tri_solve_identity():
    b = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_allclose(tri_solve(np.eye(3), b), b)


def test_tri_solve_forward_known():
    L = np.array([[2.0, 0.0], [1.0, 1.0]])
    b = np.array([[2.0], [3.0]])
    y = tri_solve(L, b, side="forward")
    np.testing.assert_allclose(y, np.array([[1.0], [2.0]]))
    np.testing.assert_allclose(L @ y, b)


def test_tri_solve_backward():
    L = np.array([[2.0, 0.0], [1.0, 1.0]])
    b = np.array([[2.0], [3.0]])
    y = tri_solve(L, b, side="backward")
    np.testing.assert_allclose(L.T @ y, b)


def test_tri_solve_zero_diagonal():
    L = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SingularTriangular):
        tri_solve(L, np.ones((2, 1)))


def test_forward_backward_matches_gauss_elimination_oracle():
    rng = np.random.default_rng(7)

    def gauss_solve(a, b):
        # brute-force elimination with partial pivoting, independent of scipy
        a = a.astype(float).copy()
        b = b.astype(float).copy()
        n = a.shape[0]
        for k in range(n):
            p = k + int(np.argmax(np.abs(a[k:, k])))
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
            for i in range(k + 1, n):
                f = a[i, k] / a[k, k]
                a[i, k:] -= f * a[k, k:]
                b[i] -= f * b[k]
        x = np.zeros_like(b)
        for i in range(n - 1, -1, -1):
            x[i] = (b[i] - a[i, i + 1 :] @ x[i + 1 :]) / a[i, i]
        return x

    for _ in range(100):
        n = int(rng.integers(2, 9))
        m = rng.standard_normal((n, n))
        a = m @ m.T + n * np.eye(n)
        b = rng.standard_normal(n)
        L = cholesky_psd(a).factor
        x = chol_solve(L, b)
        np.testing.assert_allclose(x, gauss_solve(a, b), atol=1e-8)


def test_logdet_identity():
    L = cholesky_psd(np.eye(5)).factor
    assert logdet_from_chol(L) == pytest.approx(0.0, abs=1e-14)


def test_logdet_known_values():
    L = cholesky_psd(np.diag([2.0, 2.0])).factor
    assert logdet_from_chol(L) == pytest.approx(math.log(4.0), abs=1e-12)
    L = cholesky_psd(np.diag([math.e, 1.0])).factor
    assert logdet_from_chol(L) == pytest.approx(1.0, abs=1e-12)


def test_gauss_logpdf_values():
    assert gauss_logpdf(0.0, 0.0, 1.0) == pytest.approx(-0.9189385332046727, abs=1e-9)
    assert gauss_logpdf(1.0, 1.0, 4.0) == pytest.approx(-1.6120857137646181, abs=1e-9)


def test_gauss_logpdf_rejects_zero_variance():
    with pytest.raises(NonPositiveVariance):
        gauss_logpdf(0.0, 0.0, 0.0)


def test_gauss_logpdf_integrates_to_one():
    # trapezoid quadrature over +/- 8 sigma
    for mean, var in [(0.0, 1.0), (2.0, 0.25), (-1.0, 9.0)]:
        sd = math.sqrt(var)
        z = np.linspace(mean - 8 * sd, mean + 8 * sd, 20001)
        total = np.trapezoid(np.exp(gauss_logpdf(z, mean, var)), z)
        assert total == pytest.approx(1.0, abs=1e-4)
