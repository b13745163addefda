import numpy as np
import pytest

from terra.errors import TrainingDivergedError
from terra.sampling import Dataset, InputSpace, lhs_sample
from terra.surrogate import Mlp, Normalization, activations, forward
from terra.training import (
    TrainConfig,
    normal_equation_bytes,
    parameter_gradient,
    parameter_jacobian,
    train,
)


@pytest.fixture
def reference_net():
    space = InputSpace.default()
    return Mlp.initialize([10, 6, 1], np.random.default_rng(123),
                          Normalization.from_bounds(space.lows, space.highs), Normalization.identity(1))


@pytest.fixture
def reference_dataset(reference_net):
    space = InputSpace.default()
    x = lhs_sample(space, 300, seed=21)
    return Dataset(inputs=x, targets=forward(reference_net, x), sample_index=np.arange(len(x)), seed=21,
                   bounds=space.to_dict())


class TestTrainConfig:
    @pytest.mark.parametrize("size", [0, 51])
    def test_ensemble_bounds(self, size):
        with pytest.raises(ValueError, match="Ensemble size"):
            TrainConfig(ensemble_size=size)

    def test_patience(self):
        with pytest.raises(ValueError, match="patience"):
            TrainConfig(patience=0)

    def test_regularization_mode(self):
        with pytest.raises(ValueError, match="Regularization"):
            TrainConfig(regularization="dropout")


class TestParameterDerivatives:
    def test_jacobian_matches_finite_differences(self, reference_net):
        net = Mlp.initialize([10, 4, 3, 2], np.random.default_rng(5), Normalization.identity(10),
                             Normalization.identity(2))
        xn = np.random.default_rng(6).uniform(-1, 1, (7, 10))
        J = parameter_jacobian(net, activations(net, xn))
        theta = net.flat_parameters()
        h = 1e-6
        for j in range(0, theta.size, 5):
            step = np.zeros_like(theta)
            step[j] = h
            plus = activations(net.with_parameters(theta + step), xn)[-1].ravel()
            minus = activations(net.with_parameters(theta - step), xn)[-1].ravel()
            np.testing.assert_allclose(J[:, j], (plus - minus) / (2 * h), atol=1e-7)

    def test_gradient_is_jacobian_transpose_residual(self):
        net = Mlp.initialize([10, 5, 1], np.random.default_rng(8), Normalization.identity(10),
                             Normalization.identity(1))
        xn = np.random.default_rng(9).uniform(-1, 1, (12, 10))
        layers = activations(net, xn)
        residual = layers[-1] - 0.3
        J = parameter_jacobian(net, layers)
        np.testing.assert_allclose(parameter_gradient(net, layers, residual), J.T @ residual.ravel(), atol=1e-12)

    def test_normal_equation_bytes(self):
        assert normal_equation_bytes(7000, 2851) == 8 * (7000 * 2851 + 2 * 2851 ** 2)


class TestTrain:
    def test_recovers_generating_network(self, reference_dataset):
        cfg = TrainConfig(hidden_layers=(6,), max_epochs=200, ensemble_size=3, patience=30, seed=0, max_workers=3)
        model, report = train(reference_dataset, cfg)
        variance = float(np.var(reference_dataset.targets))
        assert report.best.test_mse < 1e-3 * variance
        assert report.split_sizes == {"train": 210, "validation": 45, "test": 45}
        assert model.manifest["layer_sizes"] == [10, 6, 1]
        np.testing.assert_array_equal(model.input_bounds[0], InputSpace.default().lows)

    def test_single_member(self, reference_dataset):
        model, report = train(reference_dataset, TrainConfig(hidden_layers=(4,), max_epochs=5, ensemble_size=1))
        assert len(report.members) == 1
        assert report.selected == 0
        assert model.manifest["selected_member"] == 0

    def test_selects_lowest_validation_error(self, reference_dataset):
        cfg = TrainConfig(hidden_layers=(3,), max_epochs=10, ensemble_size=4, seed=2)
        model, report = train(reference_dataset, cfg)
        assert all(report.best.val_mse <= m.val_mse for m in report.members)
        frame = report.to_frame()
        assert len(frame) == 4
        assert frame["selected"].sum() == 1
        assert model.manifest["val_mse"] == report.best.val_mse

    def test_seeded(self, reference_dataset):
        cfg = TrainConfig(hidden_layers=(3,), max_epochs=8, ensemble_size=2, seed=4)
        first, _ = train(reference_dataset, cfg)
        second, _ = train(reference_dataset, cfg)
        np.testing.assert_array_equal(first.flat_parameters(), second.flat_parameters())

    def test_adam_fallback(self, reference_dataset):
        cfg = TrainConfig(max_epochs=3, ensemble_size=1, memory_budget_mb=1e-3, batch_size=64)
        model, report = train(reference_dataset, cfg)
        assert report.best.method == "adam"
        assert model.manifest["layer_sizes"] == [10, 35, 35, 35, 1]
        assert np.isfinite(report.best.val_mse)

    def test_fixed_regularization(self, reference_dataset):
        cfg = TrainConfig(hidden_layers=(4,), max_epochs=10, ensemble_size=1, regularization="fixed")
        _, report = train(reference_dataset, cfg)
        assert report.best.final_lambda == pytest.approx(cfg.initial_lambda)

    def test_all_members_diverged(self, reference_dataset):
        targets = reference_dataset.targets.copy()
        targets[3, 0] = np.nan
        broken = Dataset(reference_dataset.inputs, targets, reference_dataset.sample_index)
        with pytest.raises(TrainingDivergedError):
            train(broken, TrainConfig(hidden_layers=(3,), max_epochs=5, ensemble_size=2))
