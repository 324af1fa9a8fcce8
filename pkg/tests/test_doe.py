import numpy as np

from multifid.doe import lhs_sample
from multifid.rng import RngStream


def _strata_ok(x, lo, hi, n):
    strata = np.floor((x - lo) / (hi - lo) * n).astype(int)
    strata = np.clip(strata, 0, n - 1)  # exact upper bound lands in last stratum
    return sorted(strata.tolist()) == list(range(n))


def test_one_point_per_stratum_small():
    pts = lhs_sample(4, [[0, 1], [0, 1]], RngStream(0))
    assert pts.shape == (4, 2)
    for j in range(2):
        assert _strata_ok(pts[:, j], 0, 1, 4)


def test_single_point_inside_bounds():
    pts = lhs_sample(1, [[-2, 3]], RngStream(1))
    assert pts.shape == (1, 1)
    assert -2 <= pts[0, 0] <= 3


def test_determinism():
    a = lhs_sample(9, [[0, 1], [2, 5]], RngStream(7))
    b = lhs_sample(9, [[0, 1], [2, 5]], RngStream(7))
    np.testing.assert_array_equal(a, b)


def test_stratification_across_sizes_dims_seeds():
    bounds_pool = [(-1.0, 2.0), (0.0, 1.0), (3.0, 10.0)]
    sizes = [2, 5, 20, 87, 200]
    rng = np.random.default_rng(0)
    for seed in range(50):
        n = sizes[seed % len(sizes)]
        d = int(rng.integers(1, 13))
        bounds = [bounds_pool[i % len(bounds_pool)] for i in range(d)]
        pts = lhs_sample(n, bounds, RngStream(seed))
        for j in range(d):
            lo, hi = bounds[j]
            assert _strata_ok(pts[:, j], lo, hi, n), (seed, n, d, j)
