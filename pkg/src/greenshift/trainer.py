"""Supervised training loop and evaluation for shift networks."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplits, Split
from .energy import EnergyModel, EnergyReport, estimate_energy
from .hpo.space import HyperparameterConfig
from .network import NetworkModel, NumericOverflowError, OpCounts, convert_to_shift
from .optim import OptimizerState, step_optimizer
from .quant import FixedPointFormat

log = logging.getLogger(__name__)

EVAL_BATCH = 500
# A mean cross-entropy this large means the logits have blown up even if still finite.
DIVERGENCE_LOSS = 1e4
_ROUNDING_STREAM = 7919


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainOutcome:
    val_loss: float
    val_accuracy: float
    test_accuracy: float
    energy: EnergyReport
    epochs_run: int
    wall_seconds: float
    diverged: bool = False
    curve: list[EpochStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "val_loss": None if math.isinf(self.val_loss) else self.val_loss,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "energy": self.energy.to_dict(),
            "epochs_run": self.epochs_run,
            "wall_seconds": self.wall_seconds,
            "diverged": self.diverged,
        }


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    n = len(targets)
    loss = float(np.mean(np.log(total[:, 0]) - shifted[np.arange(n), targets]))
    grad = exp / total
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def loss_and_gradients(model: NetworkModel, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], OpCounts]:
    """One forward/backward pass; gradients are ordered like ``model.parameters()``."""
    logits, ops = model.forward(x, train=True)
    loss, grad = softmax_cross_entropy(logits, y)
    ops = ops + model.backward(grad)
    grads = [layer.grads[name] for layer, name in model.parameters()]
    return loss, grads, ops


def evaluate(model: NetworkModel, split: Split, batch_size: int = EVAL_BATCH) -> tuple[float, float, OpCounts]:
    """Mean cross-entropy, top-1 accuracy and the forward op counts. Parameters are not touched."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    total_loss = 0.0
    correct = 0
    ops = OpCounts()
    for start in range(0, len(split), batch_size):
        x = split.x[start : start + batch_size]
        y = split.y[start : start + batch_size]
        logits, batch_ops = model.forward(x, train=False)
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
        ops = ops + batch_ops
    return total_loss / len(split), correct / len(split), ops


def train(
    model: NetworkModel,
    splits: DatasetSplits,
    config: HyperparameterConfig,
    fidelity_depth: int,
    seed: int,
    energy_model: EnergyModel | None = None,
    include_test_energy: bool = False,
    track_curve: bool = False,
) -> tuple[NetworkModel, TrainOutcome]:
    """Convert ``model`` to ``fidelity_depth`` shift layers and train it with ``config``.

    Depths beyond the network's eligible layer count are clamped. A run whose
    loss or activations stop being finite is reported with ``val_loss = inf``
    instead of raising, so a search can carry on past bad configurations.
    """
    start = time.perf_counter()
    depth = min(fidelity_depth, model.eligible_count)
    fmt = FixedPointFormat(config.activation_integer_bits, config.activation_fraction_bits)
    model = convert_to_shift(model, depth, config.shift_type, config.weight_bits, fmt, config.rounding)
    model.rng = np.random.default_rng([seed, _ROUNDING_STREAM])
    opt = OptimizerState(config.optimizer, config.learning_rate, config.momentum, config.weight_decay)
    params = model.parameters()
    arrays = [getattr(layer, name) for layer, name in params]
    decay_mask = [name in ("weight", "bias") for _, name in params]

    train_split = splits.train
    n = len(train_split)
    ops = OpCounts()
    samples = 0
    curve: list[EpochStats] = []
    diverged = False
    epochs_run = 0
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for epoch in range(config.epochs):
                order = np.random.default_rng([seed, epoch]).permutation(n)
                epoch_loss = 0.0
                for lo in range(0, n, config.batch_size):
                    idx = order[lo : lo + config.batch_size]
                    loss, grads, batch_ops = loss_and_gradients(model, train_split.x[idx], train_split.y[idx])
                    ops = ops + batch_ops
                    samples += len(idx)
                    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                        raise FloatingPointError(f"loss {loss} at epoch {epoch}")
                    step_optimizer(opt, arrays, grads, decay_mask)
                    epoch_loss += loss * len(idx)
                epochs_run = epoch + 1
                if track_curve:
                    _, val_acc, _ = evaluate(model, splits.val)
                    curve.append(EpochStats(epochs_run, epoch_loss / n, val_acc))
            val_loss, val_acc, val_ops = evaluate(model, splits.val)
            ops = ops + val_ops
            samples += len(splits.val)
            _, test_acc, test_ops = evaluate(model, splits.test)
            if include_test_energy:
                ops = ops + test_ops
                samples += len(splits.test)
            if not math.isfinite(val_loss):
                raise FloatingPointError("validation loss is not finite")
        except (FloatingPointError, NumericOverflowError) as exc:
            log.info("training diverged: %s", exc)
            diverged = True
            val_loss, val_acc, test_acc = math.inf, 0.0, 0.0

    wall = time.perf_counter() - start
    energy = estimate_energy(ops, samples, energy_model, wall_seconds=wall)
    outcome = TrainOutcome(val_loss, val_acc, test_acc, energy, epochs_run, wall, diverged, curve)
    return model, outcome
