"""Optimizers over lists of numpy parameter arrays (updated in place)."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    ADAM = "Adam"
    ADAGRAD = "Adagrad"
    ADADELTA = "Adadelta"
    RMSPROP = "RMSProp"


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
ADAGRAD_EPS = 1e-10
ADADELTA_RHO, ADADELTA_EPS = 0.9, 1e-6
RMSPROP_ALPHA, RMSPROP_EPS = 0.99, 1e-8


@dataclass
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    step_count: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = OptimizerKind(self.kind)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def _slot(self, name: str, index: int, like: np.ndarray) -> np.ndarray:
        key = (name, index)
        if key not in self.slots:
            self.slots[key] = np.zeros_like(like)
        return self.slots[key]


def step_optimizer(
    state: OptimizerState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    decay_mask: list[bool] | None = None,
) -> list[np.ndarray]:
    """Apply one update. Weight decay is added to the gradient for params flagged in ``decay_mask``."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i} has shape {p.shape} but gradient {g.shape}")
        if state.weight_decay and (decay_mask is None or decay_mask[i]):
            g = g + state.weight_decay * p
        kind = state.kind
        if kind is OptimizerKind.SGD:
            if state.momentum:
                v = state._slot("velocity", i, p)
                v *= state.momentum
                v += g
                g = v
            p -= lr * g
        elif kind is OptimizerKind.ADAM:
            b1, b2 = ADAM_BETAS
            m = state._slot("m", i, p)
            v = state._slot("v", i, p)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        elif kind is OptimizerKind.ADAGRAD:
            acc = state._slot("sum", i, p)
            acc += g * g
            p -= lr * g / (np.sqrt(acc) + ADAGRAD_EPS)
        elif kind is OptimizerKind.ADADELTA:
            sq = state._slot("square_avg", i, p)
            delta_acc = state._slot("acc_delta", i, p)
            sq *= ADADELTA_RHO
            sq += (1 - ADADELTA_RHO) * g * g
            delta = np.sqrt(delta_acc + ADADELTA_EPS) / np.sqrt(sq + ADADELTA_EPS) * g
            delta_acc *= ADADELTA_RHO
            delta_acc += (1 - ADADELTA_RHO) * delta * delta
            p -= lr * delta
        elif kind is OptimizerKind.RMSPROP:
            sq = state._slot("square_avg", i, p)
            sq *= RMSPROP_ALPHA
            sq += (1 - RMSPROP_ALPHA) * g * g
            step = g / (np.sqrt(sq) + RMSPROP_EPS)
            if state.momentum:
                buf = state._slot("momentum", i, p)
                buf *= state.momentum
                buf += step
                step = buf
            p -= lr * step
    return params
