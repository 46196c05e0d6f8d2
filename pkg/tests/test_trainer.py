import hashlib
import math

import numpy as np
import pytest

from greenshift.data import DatasetSplits, Split
from greenshift.hpo.space import default_config, preset, with_values
from greenshift.network import LayerSpec, build_network, desk_cnn, save_checkpoint
from greenshift.trainer import evaluate, softmax_cross_entropy, train


def separable_splits(n=300, seed=0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=36)
    y = rng.integers(0, 2, n)
    X = (2 * y - 1)[:, None] * mu[None] + rng.normal(size=(n, 36))
    margins = (2 * y - 1) * (X @ mu)
    keep = margins > 0
    X, y = X[keep].reshape(-1, 1, 6, 6), y[keep]
    assert ((2 * y - 1) * (X.reshape(len(y), -1) @ mu) > 0).all()  # linearly separable by mu
    return DatasetSplits(Split(X[:200], y[:200]), Split(X[200:250], y[200:250]), Split(X[250:], y[250:]), 2)


LINEAR = [LayerSpec.flatten(), LayerSpec.dense(36, 2)]


def test_softmax_cross_entropy_uniform():
    loss, grad = softmax_cross_entropy(np.zeros((4, 10)), np.array([0, 3, 5, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


class TestEvaluate:
    def test_uniform_logits_baseline(self):
        model = build_network([LayerSpec.flatten(), LayerSpec.dense(4, 10)], (1, 2, 2), 0)
        layer = model.weight_layers[0]
        layer.weight[:] = 0.0
        x = np.random.default_rng(0).normal(size=(100, 1, 2, 2))
        y = np.repeat(np.arange(10), 10)
        loss, acc, _ = evaluate(model, Split(x, y))
        assert loss == pytest.approx(math.log(10), abs=1e-12)
        # all-equal logits pick class 0 for every sample: exactly one class in ten is right
        assert acc == pytest.approx(0.10)

    def test_memorization(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(10, 1, 6, 6))
        y = np.arange(10)
        splits = DatasetSplits(Split(x, y), Split(x, y), Split(x, y), 10)
        model = build_network([LayerSpec.flatten(), LayerSpec.dense(36, 16), LayerSpec.relu(), LayerSpec.dense(16, 10)], (1, 6, 6), 0)
        cfg = with_values(default_config(), optimizer="Adam", learning_rate=0.01, epochs=100, batch_size=32)
        trained, _ = train(model, splits, cfg, 0, 0)
        assert evaluate(trained, splits.train)[1] == 1.0

    def test_pure(self, tmp_path, small_splits):
        model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 0)
        cfg = with_values(preset("pos1"), epochs=5)
        trained, _ = train(model, small_splits, cfg, 2, 0)
        save_checkpoint(trained, tmp_path / "a.npz")
        first = evaluate(trained, small_splits.val)
        second = evaluate(trained, small_splits.val)
        save_checkpoint(trained, tmp_path / "b.npz")
        assert first[:2] == second[:2]
        digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
        assert digest(tmp_path / "a.npz") == digest(tmp_path / "b.npz")

    def test_empty_split(self, small_dense_model):
        with pytest.raises(ValueError):
            evaluate(small_dense_model, Split(np.zeros((0, 6)), np.zeros(0)))


class TestTrain:
    def test_optimization_sanity_default_config(self):
        splits = separable_splits()
        model = build_network(LINEAR, (1, 6, 6), 0)
        cfg = with_values(default_config(), epochs=30)
        trained, outcome = train(model, splits, cfg, cfg.shift_depth, 0)
        assert trained.shift_depth == 1  # depth 20 clamped to the single eligible layer
        assert not outcome.diverged
        assert evaluate(trained, splits.train)[1] >= 0.95

    def test_minimum_epochs_smoke(self):
        x = np.random.default_rng(0).normal(size=(140, 1, 6, 6))
        y = np.random.default_rng(1).integers(0, 3, 140)
        splits = DatasetSplits(Split(x[:100], y[:100]), Split(x[100:120], y[100:120]), Split(x[120:], y[120:]), 3)
        model = build_network([LayerSpec.conv2d(1, 2, 3), LayerSpec.relu(), LayerSpec.flatten(), LayerSpec.dense(32, 3)], (1, 6, 6), 0)
        _, outcome = train(model, splits, with_values(default_config(), epochs=5), 1, 0)
        assert outcome.epochs_run == 5
        assert math.isfinite(outcome.val_loss)
        assert 0 <= outcome.val_accuracy <= 1 and 0 <= outcome.test_accuracy <= 1

    @pytest.mark.parametrize("depth", [0, 5])
    def test_divergence_sentinel(self, small_splits, depth):
        model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 0)
        cfg = with_values(default_config(), learning_rate=1e3, epochs=5)
        _, outcome = train(model, small_splits, cfg, depth, 0)
        assert outcome.diverged
        assert outcome.val_loss == math.inf
        assert outcome.energy.emissions_g >= 0

    @pytest.mark.parametrize("rounding", ["deterministic", "stochastic"])
    def test_seed_determinism(self, small_splits, rounding):
        cfg = with_values(preset("pos2"), epochs=5, rounding=rounding)
        outcomes = []
        for _ in range(2):
            model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 4)
            outcomes.append(train(model, small_splits, cfg, 3, 4)[1])
        a, b = outcomes
        assert (a.val_loss, a.val_accuracy, a.test_accuracy, a.energy.total_joules) == (
            b.val_loss, b.val_accuracy, b.test_accuracy, b.energy.total_joules
        )

    def test_energy_monotone_in_epochs_and_data(self, small_splits):
        model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 0)
        base = with_values(preset("pos1"), epochs=5)
        joules = [train(model, small_splits, with_values(base, epochs=e), 2, 0)[1].energy.total_joules for e in (5, 6, 8)]
        assert joules == sorted(joules) and joules[0] < joules[-1]
        half = DatasetSplits(
            Split(small_splits.train.x[:60], small_splits.train.y[:60]), small_splits.val, small_splits.test, 10
        )
        assert train(model, half, base, 2, 0)[1].energy.total_joules < joules[0]

    def test_test_energy_flag(self, small_splits):
        model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 0)
        cfg = with_values(preset("pos1"), epochs=5)
        without = train(model, small_splits, cfg, 2, 0)[1].energy.total_joules
        with_test = train(model, small_splits, cfg, 2, 0, include_test_energy=True)[1].energy.total_joules
        assert with_test > without

    def test_curve_tracking(self, small_splits):
        model = build_network(desk_cnn(small_splits.input_shape, 10), small_splits.input_shape, 0)
        _, outcome = train(model, small_splits, with_values(preset("pos1"), epochs=5), 1, 0, track_curve=True)
        assert [s.epoch for s in outcome.curve] == [1, 2, 3, 4, 5]

    @pytest.mark.slow
    def test_default_config_desk_benchmark(self):
        from greenshift.data import synthetic_splits

        splits = synthetic_splits(4000, 1000, 1000, seed=0)
        model = build_network(desk_cnn(splits.input_shape, 10), splits.input_shape, 0)
        cfg = default_config()
        assert cfg.epochs == 100
        trained, outcome = train(model, splits, cfg, cfg.shift_depth, 0)
        assert outcome.epochs_run == 100
        assert trained.shift_depth == 5
        assert 0 <= outcome.test_accuracy <= 1
