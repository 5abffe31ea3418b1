import numpy as np
import pytest

from bodyrecon.autodiff import parameter
from bodyrecon.errors import ConfigError, TrainingDiverged
from bodyrecon.mesh import Aabb
from bodyrecon.sampling import Observation
from bodyrecon.train import (
    AdamState,
    CoarseItem,
    DispItem,
    TrainConfig,
    adam_step,
    train_coarse,
    train_disp,
)

H = W = 16
J = 3
DOMAIN = Aabb((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))


def toy_items(n=6, k=24, seed=0):
    """Occupancy of a unit ball; observations encode nothing useful."""
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n):
        obs = Observation((rng.random((H, W)) > 0.5).astype(float),
                          rng.random((H, W, J)))
        points = rng.uniform(-1.5, 1.5, size=(k, 3))
        labels = (np.linalg.norm(points, axis=1) < 1.0).astype(np.float64)
        items.append(CoarseItem(obs, points, labels))
    return items


def toy_disp_items(n=6, m=16, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n):
        obs = Observation((rng.random((H, W)) > 0.5).astype(float),
                          rng.random((H, W, J)))
        verts = rng.standard_normal((m, 3))
        targets = 0.1 * verts[:, 0]
        items.append(DispItem(obs, verts, targets))
    return items


class TestTrainConfig:
    def test_rejects_nonpositive_epochs(self):
        with pytest.raises(ConfigError, match="epochs"):
            TrainConfig(epochs=0)

    def test_rejects_unsorted_schedule(self):
        with pytest.raises(ConfigError, match="increasing"):
            TrainConfig(lr_schedule=((10, 1e-5), (5, 1e-6)))

    def test_lr_at_follows_schedule(self):
        config = TrainConfig(learning_rate=1e-3,
                             lr_schedule=((5, 1e-4), (8, 1e-5)))
        assert config.lr_at(0) == 1e-3
        assert config.lr_at(5) == 1e-4
        assert config.lr_at(7) == 1e-4
        assert config.lr_at(9) == 1e-5


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        params = [parameter(np.array([1.0, -2.0]))]
        state = AdamState.for_params(params)
        adam_step(state, params, [np.zeros(2)], lr=0.1)
        assert np.array_equal(params[0].data, [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        params = [parameter(np.array([1.0, -2.0, 0.3]))]
        grads = [np.array([0.5, -1.2, 3.0])]
        state = AdamState.for_params(params)
        adam_step(state, params, grads, lr=0.01)
        moved = params[0].data - np.array([1.0, -2.0, 0.3])
        # bias-corrected first step is -lr * sign(grad) up to epsilon terms
        assert np.allclose(moved, -0.01 * np.sign(grads[0]), atol=1e-6)

    def test_converges_on_scalar_quadratic(self):
        x = parameter(np.array([0.0]))
        state = AdamState.for_params([x])
        for _ in range(200):
            grad = 2.0 * (x.data - 3.0)
            adam_step(state, [x], [grad], lr=0.1)
        assert abs(float(x.data[0]) - 3.0) < 0.01

    def test_none_gradient_skipped(self):
        params = [parameter(np.ones(2)), parameter(np.ones(3))]
        state = AdamState.for_params(params)
        adam_step(state, params, [None, np.ones(3)], lr=0.1)
        assert np.array_equal(params[0].data, np.ones(2))
        assert not np.array_equal(params[1].data, np.ones(3))


class TestTrainCoarse:
    def test_zero_lr_keeps_initial_parameters(self):
        items = toy_items()
        config = TrainConfig(epochs=2, batch_size=3, learning_rate=0.0,
                             k_points=24, seed=5)
        model, curve = train_coarse(items, config, DOMAIN)
        fresh, _ = train_coarse(items, TrainConfig(epochs=1, batch_size=3,
                                                   learning_rate=0.0,
                                                   k_points=24, seed=5), DOMAIN)
        for a, b in zip(model.parameters(), fresh.parameters()):
            assert np.array_equal(a.data, b.data)
        assert len(curve) == 2

    def test_same_seed_bit_identical(self):
        items = toy_items()
        config = TrainConfig(epochs=3, batch_size=3, learning_rate=1e-3,
                             k_points=24, seed=7)
        model_a, curve_a = train_coarse(items, config, DOMAIN)
        model_b, curve_b = train_coarse(items, config, DOMAIN)
        for a, b in zip(model_a.parameters(), model_b.parameters()):
            assert np.array_equal(a.data, b.data)
        assert [s.mean_loss for s in curve_a] == [s.mean_loss for s in curve_b]

    def test_loss_decreases_on_fixture(self):
        items = toy_items(n=8, k=64)
        config = TrainConfig(epochs=12, batch_size=4, learning_rate=3e-3,
                             pos_weight=1.0, k_points=64, seed=1)
        _, curve = train_coarse(items, config, DOMAIN)
        assert curve[-1].mean_loss < curve[0].mean_loss

    def test_divergence_aborts(self):
        items = toy_items(n=2, k=8)
        config = TrainConfig(epochs=2, batch_size=2, learning_rate=1e-3,
                             k_points=8, seed=3)
        model, _ = train_coarse(items, TrainConfig(epochs=1, batch_size=2,
                                                   learning_rate=0.0,
                                                   k_points=8, seed=3), DOMAIN)
        model.decoder.head.bias.data[:] = np.nan
        with pytest.raises(TrainingDiverged):
            train_coarse(items, config, DOMAIN, model=model)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_coarse([], TrainConfig(epochs=1), DOMAIN)


class TestTrainDisp:
    def test_zero_lr_identity_and_determinism(self):
        items = toy_disp_items()
        config = TrainConfig(epochs=2, batch_size=3, learning_rate=0.0,
                             n_disp_points=16, seed=11)
        model_a, _ = train_disp(items, config)
        model_b, _ = train_disp(items, config)
        for a, b in zip(model_a.parameters(), model_b.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_loss_decreases(self):
        items = toy_disp_items(n=8, m=32)
        config = TrainConfig(epochs=10, batch_size=4, learning_rate=3e-3,
                             n_disp_points=32, seed=2)
        _, curve = train_disp(items, config)
        assert curve[-1].mean_loss < curve[0].mean_loss
