import numpy as np
import pytest

from terra.bicycle import surrogate_rows, terrain_vector
from terra.evaluation import benchmark, force_rmse, horizon_mse
from terra.ukf import UkfConfig


@pytest.fixture
def self_log(make_log, analytic_model):
    return make_log(analytic_model, n=0.5, duration=10.0)


class TestHorizonMse:
    def test_self_prediction_is_exact(self, self_log, analytic_model, clay):
        result = horizon_mse(self_log, analytic_model, 0.5, clay, horizon=1.0, stride=0.1, substeps=2)
        assert np.all(result.mse < 1e-10)
        assert result.windows == 91
        assert result.as_dict()["y"] == result.mse[1]

    def test_wrong_exponent_predicts_worse(self, self_log, analytic_model, clay):
        right = horizon_mse(self_log, analytic_model, 0.5, clay, horizon=1.0, substeps=2)
        wrong = horizon_mse(self_log, analytic_model, 0.9, clay, horizon=1.0, substeps=2)
        assert wrong.mse[4] > 1e-6
        assert wrong.mse[1] > right.mse[1]

    def test_speed_error_independent_of_exponent(self, self_log, analytic_model, clay):
        low = horizon_mse(self_log, analytic_model, 0.4, clay, horizon=1.0)
        high = horizon_mse(self_log, analytic_model, 1.1, clay, horizon=1.0)
        assert low.mse[3] == high.mse[3]

    def test_kept_trajectories(self, self_log, analytic_model, clay):
        result = horizon_mse(self_log, analytic_model, 0.5, clay, horizon=1.0, keep=(0, 5, 7))
        assert set(result.trajectories) == {0, 5}
        assert result.trajectories[5].shape == (51, 6)

    def test_filtered_initial_states(self, self_log, analytic_model, clay):
        truth = horizon_mse(self_log, analytic_model, 0.5, clay, horizon=1.0, substeps=2)
        offset = self_log.states + np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
        shifted = horizon_mse(self_log, analytic_model, 0.5, clay, horizon=1.0, substeps=2, initial_states=offset)
        assert shifted.mse[0] == pytest.approx(0.25, rel=1e-6)
        assert shifted.mse[1] == pytest.approx(truth.mse[1], abs=1e-10)

    def test_horizon_longer_than_log(self, self_log, analytic_model, clay):
        with pytest.raises(ValueError, match="shorter"):
            horizon_mse(self_log, analytic_model, 0.5, clay, horizon=20.0)

    def test_rejects_non_positive_stride(self, self_log, analytic_model, clay):
        with pytest.raises(ValueError):
            horizon_mse(self_log, analytic_model, 0.5, clay, stride=0.0)


class TestForceRmse:
    def test_requires_ground_truth(self, self_log, analytic_model, clay):
        with pytest.raises(ValueError, match="ground-truth"):
            force_rmse(self_log, analytic_model, clay)

    def test_matching_model(self, self_log, analytic_model, clay, geometry, vehicle):
        rows = surrogate_rows(self_log.states, self_log.inputs, terrain_vector(clay, geometry), vehicle)
        per_tire = analytic_model.lateral_force(rows.reshape(-1, 10)).reshape(2, -1).T
        self_log.forces[:, [1, 4]] = 2.0 * per_tire
        comparison = force_rmse(self_log, analytic_model, clay, vehicle, geometry)
        assert comparison.rmse == pytest.approx(0.0, abs=1e-9)
        assert list(comparison.to_frame().columns) == [
            "time", "fy_front_true", "fy_front_model", "fy_rear_true", "fy_rear_model"]

    def test_offset_model(self, self_log, zero_model, clay):
        self_log.forces[:, [1, 4]] = 2.0 * 300.0
        assert force_rmse(self_log, zero_model, clay).rmse == pytest.approx(300.0)


class TestBenchmark:
    def test_restarts_over_short_logs(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, duration=0.2)
        stats = benchmark(log, analytic_model, clay, UkfConfig(), n0=0.7, steps=25)
        assert stats["steps"] == 25
        assert 0.0 < stats["mean_ms"] <= stats["peak_ms"]
        assert stats["p95_ms"] <= stats["peak_ms"]
        assert stats["batched_forward_us"] > 0.0

    def test_rejects_single_sample(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, duration=0.2)
        log.time = log.time[:1]
        with pytest.raises(ValueError):
            benchmark(log, analytic_model, clay, steps=5)
