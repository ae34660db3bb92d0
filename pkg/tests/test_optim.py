import math

import numpy as np
import pytest

from fragsync.errors import InternalError, NonFiniteError
from fragsync.optim import (
    AdamWState,
    NesterovState,
    adamw_step,
    outer_step,
    warmup_cosine_lr,
)


def adamw_oracle(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Textbook AdamW recurrence in plain Python (independent of the numpy path)."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta * (1 - lr * weight_decay)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_zero_gradient_is_fixed_point():
    state = AdamWState.fresh(3, lr=0.1, weight_decay=0.0)
    params = np.array([1.0, -2.0, 0.5])
    new, state = adamw_step(params, np.zeros(3), state)
    assert np.array_equal(new, params)
    assert np.array_equal(state.first_moment, np.zeros(3))
    # with prior moments, zero gradient decays them toward 0
    state.first_moment = np.array([1.0, 1.0, 1.0])
    state.second_moment = np.array([1.0, 1.0, 1.0])
    _, state2 = adamw_step(params, np.zeros(3), state)
    assert np.all(np.abs(state2.first_moment) < 1.0)
    assert np.all(state2.second_moment < 1.0)


def test_single_step_matches_hand_recurrence():
    # one step from zero state: delta = -lr * mhat / (sqrt(vhat) + eps)
    lr, g = 0.1, 2.0
    expected = adamw_oracle(1.0, [g], lr=lr)
    state = AdamWState.fresh(1, lr=lr)
    new, _ = adamw_step(np.array([1.0]), np.array([g]), state)
    assert new[0] == pytest.approx(expected, rel=1e-12)
    # the closed form of the first step, written out by hand
    m_hat, v_hat = g, g * g
    assert new[0] == pytest.approx(1.0 - lr * m_hat / (math.sqrt(v_hat) + 1e-8), rel=1e-12)


def test_two_steps_match_recurrence_oracle():
    lr, g = 0.05, -1.5
    expected = adamw_oracle(0.3, [g, g], lr=lr, weight_decay=0.1)
    state = AdamWState.fresh(1, lr=lr, weight_decay=0.1)
    params = np.array([0.3])
    for _ in range(2):
        params, state = adamw_step(params, np.array([g]), state)
    assert params[0] == pytest.approx(expected, rel=1e-12)
    assert state.step_count == 2


def test_adamw_is_deterministic():
    rng = np.random.default_rng(0)
    params = rng.standard_normal(16)
    grad = rng.standard_normal(16)
    a, _ = adamw_step(params, grad, AdamWState.fresh(16, lr=0.01))
    b, _ = adamw_step(params, grad, AdamWState.fresh(16, lr=0.01))
    assert np.array_equal(a, b)


def test_adamw_rejects_non_finite_gradient():
    with pytest.raises(NonFiniteError):
        adamw_step(np.zeros(2), np.array([1.0, np.nan]), AdamWState.fresh(2))


def test_descent_on_quadratic():
    # f(theta) = 0.5 theta^2, gradient = theta; |theta| shrinks monotonically
    # (the rate stays below Adam's oscillation zone for this horizon).
    state = AdamWState.fresh(1, lr=0.005)
    params = np.array([1.0])
    previous = abs(params[0])
    for _ in range(100):
        params, state = adamw_step(params, params.copy(), state)
        assert abs(params[0]) < previous
        previous = abs(params[0])


def test_outer_step_mean_update_when_momentum_zero():
    state = NesterovState.fresh(3, outer_lr=1.0, momentum=0.0)
    frag = np.array([1.0, 2.0, 3.0])
    delta = np.array([0.5, -0.5, 0.25])
    new, _ = outer_step(frag, delta, state)
    assert np.array_equal(new, frag + delta)


def test_outer_step_zero_delta_fixed_point():
    state = NesterovState.fresh(2, outer_lr=0.7, momentum=0.9)
    frag = np.array([4.0, -4.0])
    new, state = outer_step(frag, np.zeros(2), state)
    assert np.array_equal(new, frag)
    assert np.array_equal(state.momentum_buffer, np.zeros(2))


def test_outer_step_two_steps_match_recurrence():
    momentum, outer_lr = 0.9, 0.7
    delta = 0.2
    # independent two-iteration evaluation of the stated recurrence
    theta, buf = 1.0, 0.0
    for _ in range(2):
        g = -delta
        buf = momentum * buf + g
        theta = theta - outer_lr * (g + momentum * buf)
    state = NesterovState.fresh(1, outer_lr=outer_lr, momentum=momentum)
    frag = np.array([1.0])
    for _ in range(2):
        frag, state = outer_step(frag, np.array([delta]), state)
    assert frag[0] == pytest.approx(theta, rel=1e-12)


def test_outer_step_length_mismatch():
    with pytest.raises(InternalError):
        outer_step(np.zeros(3), np.zeros(2), NesterovState.fresh(3))


def test_warmup_cosine_shape():
    base = 4e-4
    # linear warmup over the first 10 steps
    assert warmup_cosine_lr(0, base, 10, 100) == pytest.approx(base / 10)
    assert warmup_cosine_lr(9, base, 10, 100) == pytest.approx(base)
    # cosine decay afterward, ending at the floor
    mid = warmup_cosine_lr(55, base, 10, 100)
    assert 0 < mid < base
    assert warmup_cosine_lr(99, base, 10, 100, final_lr_frac=0.1) == pytest.approx(
        0.1 * base, rel=2e-2
    )
    # at and beyond the budget the floor is exact
    assert warmup_cosine_lr(100, base, 10, 100, final_lr_frac=0.1) == pytest.approx(
        0.1 * base, rel=1e-12
    )
    # monotone decay after warmup
    values = [warmup_cosine_lr(s, base, 10, 100) for s in range(10, 100)]
    assert all(a >= b for a, b in zip(values, values[1:]))
