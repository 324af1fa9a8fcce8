import numpy as np
import pytest

from multifid.errors import DimensionMismatch, NonFiniteGradient
from multifid.optim import AdamState, adam_step


def test_zero_gradient_leaves_params_unchanged():
    state = AdamState()
    params = np.array([1.0, -2.0, 3.0])
    new, state = adam_step(state, params, np.zeros(3))
    np.testing.assert_array_equal(new, params)
    assert state.t == 1


def test_first_step_moves_by_step_size():
    # hand evaluation of the Adam recurrence at t=1 with g=1:
    # m_hat = 1, v_hat = 1 -> step = gamma / (1 + eps)
    state = AdamState(step_size=0.003)
    new, _ = adam_step(state, np.array([0.0]), np.array([1.0]))
    assert new[0] == pytest.approx(-0.003, rel=1e-6)


def test_maximize_flag_flips_direction():
    state = AdamState(step_size=0.01)
    new, _ = adam_step(state, np.array([0.0]), np.array([1.0]), maximize=True)
    assert new[0] == pytest.approx(0.01, rel=1e-6)


def test_two_steps_match_hand_recurrence():
    gamma, b1, b2, eps = 0.1, 0.9, 0.99, 1e-8
    state = AdamState(step_size=gamma, beta1=b1, beta2=b2, epsilon=eps)
    p = np.array([0.5])
    g1, g2 = np.array([0.2]), np.array([-0.4])
    p1, _ = adam_step(state, p, g1)
    p2, _ = adam_step(state, p1, g2)

    m = (1 - b1) * g1
    v = (1 - b2) * g1**2
    exp1 = p - gamma * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2**2
    exp2 = exp1 - gamma * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    np.testing.assert_allclose(p1, exp1, rtol=1e-12)
    np.testing.assert_allclose(p2, exp2, rtol=1e-12)


def test_nan_gradient_raises():
    with pytest.raises(NonFiniteGradient):
        adam_step(AdamState(), np.zeros(2), np.array([1.0, np.nan]))


def test_shape_mismatch_raises():
    with pytest.raises(DimensionMismatch):
        adam_step(AdamState(), np.zeros(2), np.zeros(3))
