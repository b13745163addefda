import numpy as np
import pytest

from terra.errors import FilterError
from terra.bicycle import rollout
from terra.ukf import (
    Belief,
    EstimateTrace,
    SinkageEstimator,
    TerrainNominals,
    UkfConfig,
    default_measurement_noise,
    default_process_noise,
    predict,
    run_estimator,
    sigma_points,
    unscented_moments,
    update,
)


@pytest.fixture
def nominals(clay, geometry):
    return TerrainNominals.from_params(clay, geometry)


def _belief(n=0.5, cov=None):
    mean = np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.0, n])
    return Belief(mean, np.diag([1e-2, 1e-2, 1e-4, 1e-2, 1e-3, 1e-4, 0.04]) if cov is None else cov)


class TestUkfConfig:
    def test_defaults(self):
        cfg = UkfConfig()
        assert cfg.spread == pytest.approx(7e-6)
        assert cfg.process_noise[6, 6] == 1e-6
        np.testing.assert_allclose(np.sqrt(np.diag(cfg.measurement_noise)), [1.2, 1.2, 0.0175, 0.25, 0.25, 0.0175])

    @pytest.mark.parametrize("alpha", [0.0, 1.5])
    def test_rejects_alpha(self, alpha):
        with pytest.raises(ValueError, match="alpha"):
            UkfConfig(alpha=alpha)

    def test_rejects_indefinite_process_noise(self):
        q = default_process_noise()
        q[0, 0] = -1.0
        with pytest.raises(ValueError, match="semidefinite"):
            UkfConfig(process_noise=q)

    def test_rejects_singular_measurement_noise(self):
        r = default_measurement_noise()
        r[5, 5] = 0.0
        with pytest.raises(ValueError, match="definite"):
            UkfConfig(measurement_noise=r)

    def test_zero_process_noise_allowed(self):
        assert not UkfConfig(process_noise=np.zeros((7, 7))).process_noise.any()


class TestSigmaPoints:
    def test_weights(self):
        sp = sigma_points(np.zeros(7), np.eye(7), UkfConfig())
        assert sp.points.shape == (15, 7)
        assert sp.mean_weights.sum() == pytest.approx(1.0)
        assert sp.mean_weights[0] == pytest.approx(1.0 - 1e6)
        assert sp.cov_weights[0] == pytest.approx(sp.mean_weights[0] + 3.0 - 1e-6)
        assert sp.jitter == 0.0

    def test_moments_reconstruct_belief(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((7, 7))
        cov = a @ a.T + 0.1 * np.eye(7)
        mean = 0.1 * rng.standard_normal(7)
        sp = sigma_points(mean, cov, UkfConfig())
        m, p = unscented_moments(sp.points, sp.mean_weights, sp.cov_weights)
        np.testing.assert_allclose(m, mean, atol=1e-10)
        np.testing.assert_allclose(p, cov, atol=1e-10)

    def test_symmetric_about_mean(self):
        sp = sigma_points(np.arange(7.0), np.diag(np.arange(1.0, 8.0)), UkfConfig(alpha=0.5))
        np.testing.assert_allclose(sp.points[1:8] + sp.points[8:], 2 * sp.points[0])

    def test_jitter_on_singular_covariance(self):
        cov = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0])
        sp = sigma_points(np.zeros(7), cov, UkfConfig())
        assert sp.jitter == 1e-12
        assert np.all(np.isfinite(sp.points))

    def test_indefinite_covariance(self):
        cov = np.eye(7)
        cov[3, 3] = -1.0
        with pytest.raises(FilterError):
            sigma_points(np.zeros(7), cov, UkfConfig())


class TestPredict:
    def test_process_noise_added_once(self, analytic_model, nominals, vehicle):
        belief = _belief()
        inp = np.array([0.1, 0.05, 0.2, 0.0, 0.0])
        bare = predict(belief, inp, UkfConfig(process_noise=np.zeros((7, 7))), analytic_model, nominals, vehicle)
        noisy = predict(belief, inp, UkfConfig(), analytic_model, nominals, vehicle)
        np.testing.assert_allclose(noisy.cov - bare.cov, UkfConfig().process_noise, atol=1e-15)
        np.testing.assert_array_equal(noisy.mean, bare.mean)

    def test_carries_sinkage_exponent(self, analytic_model, nominals, vehicle):
        predicted = predict(_belief(0.8), np.zeros(5), UkfConfig(), analytic_model, nominals, vehicle)
        assert predicted.mean[6] == pytest.approx(0.8)
        assert predicted.points.shape == (15, 7)

    def test_single_batched_force_call(self, analytic_model, nominals, vehicle):
        cfg = UkfConfig(substeps=2)
        predict(_belief(), np.zeros(5), cfg, analytic_model, nominals, vehicle)
        assert analytic_model.calls == 2
        assert analytic_model.rows_seen[0].shape == (30, 10)

    def test_position_variance_matches_monte_carlo(self, zero_model, nominals, vehicle):
        cov = np.diag([1e-4, 1e-4, 1e-6, 0.25, 1e-6, 1e-6, 0.01])
        belief = Belief(np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.5]), cov)
        cfg = UkfConfig(process_noise=np.zeros((7, 7)))
        predicted = predict(belief, np.zeros(5), cfg, zero_model, nominals, vehicle)

        rng = np.random.default_rng(1)
        samples = rng.multivariate_normal(belief.mean, cov, size=20000)
        moved = rollout(samples[:, :6], np.zeros((20000, 1, 5)), nominals.with_n(samples[:, 6]), zero_model,
                        vehicle, cfg.dt, cfg.substeps)[:, -1]
        assert predicted.cov[0, 0] == pytest.approx(2e-4, rel=1e-2)
        assert predicted.cov[0, 0] == pytest.approx(np.var(moved[:, 0]), rel=5e-2)


class TestUpdate:
    def test_zero_innovation_keeps_mean(self):
        belief = _belief()
        posterior, _ = update(belief, belief.mean[:6], UkfConfig())
        np.testing.assert_allclose(posterior.mean, belief.mean, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_reduces_uncertainty(self, seed):
        rng = np.random.default_rng(seed)
        factor = rng.standard_normal((7, 7)) * 0.1
        cov = factor @ factor.T + 1e-4 * np.eye(7)
        belief = _belief(0.8, cov)
        posterior, diagnostics = update(belief, belief.mean[:6] + rng.normal(0.0, 0.1, 6), UkfConfig())
        assert np.trace(posterior.cov) <= np.trace(belief.cov)
        np.testing.assert_array_equal(posterior.cov, posterior.cov.T)
        assert diagnostics["jitter"] == 0.0

    def test_uninformative_measurement(self):
        belief = _belief()
        cfg = UkfConfig(measurement_noise=1e12 * np.eye(6))
        posterior, diagnostics = update(belief, belief.mean[:6] + 5.0, cfg)
        assert diagnostics["gain_norm"] < 1e-6
        np.testing.assert_allclose(posterior.mean, belief.mean, atol=1e-5)

    def test_clamps_sinkage_exponent(self):
        cov = np.diag([1.0, 1e-2, 1e-4, 1e-2, 1e-3, 1e-4, 1.0])
        cov[0, 6] = cov[6, 0] = 0.9
        belief = _belief(1.25, cov)
        measurement = belief.mean[:6].copy()
        measurement[0] += 10.0
        posterior, diagnostics = update(belief, measurement, UkfConfig())
        assert posterior.mean[6] == 1.3
        assert diagnostics["clamped"] is True

    def test_rejects_bad_measurement(self):
        with pytest.raises(ValueError):
            update(_belief(), np.zeros(5), UkfConfig())
        with pytest.raises(ValueError):
            update(_belief(), np.full(6, np.nan), UkfConfig())


class TestSinkageEstimator:
    def test_initial_belief(self, analytic_model, clay):
        estimator = SinkageEstimator(analytic_model, clay, 0.7, np.array([0, 0, 0, 5.0, 0, 0]))
        assert estimator.n_hat == 0.7
        assert estimator.belief.cov[6, 6] == 0.04
        np.testing.assert_array_equal(estimator.belief.cov[:6, :6], default_measurement_noise())

    def test_rejects_guess_out_of_range(self, analytic_model, clay):
        with pytest.raises(ValueError, match="guess"):
            SinkageEstimator(analytic_model, clay, 1.6, np.zeros(6))

    def test_step_counts(self, analytic_model, clay):
        estimator = SinkageEstimator(analytic_model, clay, 0.7, np.array([0, 0, 0, 5.0, 0, 0]))
        elapsed = estimator.step(np.zeros(5), np.array([0.1, 0, 0, 5.0, 0, 0]))
        assert elapsed > 0.0
        assert estimator.statistics["steps"] == 1


class TestRunEstimator:
    def test_converges_on_self_generated_log(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, n=0.5, duration=20.0)
        trace = run_estimator(log, UkfConfig(), analytic_model, clay, n0=0.9)
        assert len(trace) == len(log)
        assert abs(trace.final_n - 0.5) < 0.005 * 0.5
        assert trace.variances[-1, 6] < 0.1 * trace.variances[0, 6]
        assert trace.statistics["steps"] == len(log) - 1
        assert trace.step_seconds.shape == (len(log) - 1,)

    def test_stays_at_true_value(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, n=0.8, duration=4.0)
        trace = run_estimator(log, UkfConfig(), analytic_model, clay, n0=0.8)
        assert np.max(np.abs(trace.n_hat - 0.8)) < 1e-3

    def test_rejects_rate_mismatch(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, duration=1.0)
        with pytest.raises(ValueError, match="filter runs"):
            run_estimator(log, UkfConfig(dt=0.04), analytic_model, clay, n0=0.7)

    def test_rejects_measurement_shape(self, make_log, analytic_model, clay):
        log = make_log(analytic_model, duration=1.0)
        with pytest.raises(ValueError, match="shape"):
            run_estimator(log, UkfConfig(), analytic_model, clay, n0=0.7, measurements=np.zeros((3, 6)))

    def test_failure_carries_partial_trace(self, make_log, analytic_model, clay, monkeypatch):
        import terra.ukf

        real_update = terra.ukf.update
        calls = {"count": 0}

        def failing_update(belief, measurement, cfg):
            calls["count"] += 1
            if calls["count"] == 3:
                raise FilterError("Innovation covariance is singular")
            return real_update(belief, measurement, cfg)

        monkeypatch.setattr(terra.ukf, "update", failing_update)
        log = make_log(analytic_model, duration=1.0)
        with pytest.raises(FilterError) as excinfo:
            run_estimator(log, UkfConfig(), analytic_model, clay, n0=0.7)
        trace = excinfo.value.trace
        assert len(trace) == 3
        assert np.all(np.isfinite(trace.means))


class TestEstimateTrace:
    def test_save_load(self, make_log, analytic_model, clay, tmp_path):
        log = make_log(analytic_model, duration=1.0)
        trace = run_estimator(log, UkfConfig(), analytic_model, clay, n0=0.7)
        trace.meta["run"] = "unit"
        path = trace.save(tmp_path / "estimate.csv")
        loaded = EstimateTrace.load(path)
        np.testing.assert_array_equal(loaded.means, trace.means)
        np.testing.assert_array_equal(loaded.variances, trace.variances)
        assert loaded.n0 == 0.7
        assert loaded.meta["run"] == "unit"
        assert loaded.final_n == trace.final_n

    def test_empty_trace(self):
        empty = EstimateTrace(np.array([]), np.empty((0, 7)), np.empty((0, 7)), np.array([]))
        with pytest.raises(ValueError):
            empty.final_n
