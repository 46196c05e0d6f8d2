import numpy as np
import pytest

from greenshift.optim import OptimizerState, step_optimizer


def one(v):
    return np.array([v], dtype=np.float64)


def test_sgd_plain_step():
    p = one(0.0)
    step_optimizer(OptimizerState("SGD", 0.1), [p], [one(1.0)])
    assert p.tolist() == [pytest.approx(-0.1)]


def test_sgd_momentum_recurrence():
    state = OptimizerState("SGD", 0.1, momentum=0.9)
    p = one(0.0)
    step_optimizer(state, [p], [one(1.0)])
    step_optimizer(state, [p], [one(1.0)])
    # v1 = 1, v2 = 0.9 * 1 + 1 = 1.9; p = -0.1 * (1 + 1.9)
    assert state.slots[("velocity", 0)].tolist() == [pytest.approx(1.9)]
    assert p.tolist() == [pytest.approx(-0.29)]


@pytest.mark.parametrize("g", [1e-3, 0.5, 40.0, -7.0])
def test_adam_first_step_is_lr_sized(g):
    p = one(0.0)
    step_optimizer(OptimizerState("Adam", 0.01), [p], [one(g)])
    # m_hat = g, v_hat = g^2  ->  step = lr * g / (|g| + eps)
    assert p[0] == pytest.approx(-0.01 * g / (abs(g) + 1e-8), rel=1e-12)
    assert abs(p[0]) == pytest.approx(0.01, rel=1e-4)


def test_adagrad_first_step():
    p = one(1.0)
    step_optimizer(OptimizerState("Adagrad", 0.1), [p], [one(3.0)])
    assert p[0] == pytest.approx(0.9)


def test_rmsprop_first_step():
    p = one(0.0)
    step_optimizer(OptimizerState("RMSProp", 0.01), [p], [one(2.0)])
    # square_avg = 0.01 * 4 -> step = 2 / 0.2 = 10
    assert p[0] == pytest.approx(-0.1, rel=1e-6)


def test_adadelta_first_step():
    p = one(0.0)
    step_optimizer(OptimizerState("Adadelta", 1.0), [p], [one(1.0)])
    expected = np.sqrt(1e-6) / np.sqrt(0.1 + 1e-6)
    assert p[0] == pytest.approx(-expected)


def test_weight_decay_added_to_gradient():
    p = one(2.0)
    step_optimizer(OptimizerState("SGD", 0.5, weight_decay=0.1), [p], [one(0.0)])
    assert p[0] == pytest.approx(2.0 - 0.5 * 0.2)


def test_decay_mask():
    a, b = one(2.0), one(2.0)
    step_optimizer(OptimizerState("SGD", 0.5, weight_decay=0.1), [a, b], [one(0.0), one(0.0)], [True, False])
    assert b[0] == 2.0 and a[0] < 2.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        step_optimizer(OptimizerState("SGD", 0.1), [np.zeros(3)], [np.zeros(2)])
    with pytest.raises(ValueError):
        step_optimizer(OptimizerState("SGD", 0.1), [np.zeros(3)], [])


def test_unknown_kind():
    with pytest.raises(ValueError):
        OptimizerState("Ranger", 0.1)
