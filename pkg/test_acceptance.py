"""
Long-running end-to-end experiments on the clay configuration.

    pytest -m slow test_acceptance.py
"""

from pathlib import Path

import numpy as np
import pytest

from terra import pipeline
from terra.bicycle import VehicleParams
from terra.config import load_config
from terra.evaluation import force_rmse, horizon_mse
from terra.plant import Scenario, simulate
from terra.sampling import InputSpace, lhs_sample
from terra.surrogate import hessian_vec, jacobian
from terra.ukf import run_estimator

pytestmark = pytest.mark.slow

CONFIG = Path(__file__).parent / "configs" / "clay.json"


@pytest.fixture(scope="module")
def clay_run(tmp_path_factory):
    cfg = load_config(CONFIG, out=str(tmp_path_factory.mktemp("clay")))
    dataset = pipeline.gen_data(cfg)
    model, report = pipeline.train_model(cfg)
    log, measured = pipeline.simulate_run(cfg)
    trace = pipeline.estimate_run(cfg, "surrogate")
    return cfg, dataset, model, report, log, measured, trace


def test_surrogate_fidelity(clay_run):
    cfg, dataset, model, report, log, _, _ = clay_run
    assert np.sqrt(report.best.test_mse) <= 0.05 * np.std(dataset.targets)
    assert report.elapsed_s <= 30 * 60
    comparison = force_rmse(log, model, cfg.terrain.to_params(), cfg.vehicle.to_params(), cfg.geometry.to_geometry())
    assert comparison.rmse <= 150.0


def test_trained_derivatives(clay_run):
    _, _, model, _, _, _, _ = clay_run
    space = InputSpace.default(normal_load=(500.0, 7000.0))
    points = np.vstack([lhs_sample(space, 998, seed=5), space.lows, space.highs])
    scale = model.input_norm.scale
    rng = np.random.default_rng(6)
    for x in points:
        g = jacobian(model, x)
        numeric = np.array([(model.lateral_force(x + h)[0] - model.lateral_force(x - h)[0]) / (2 * h[i])
                            for i, h in enumerate(np.diag(1e-5 * scale))])
        assert np.max(np.abs(g - numeric)) / np.max(np.abs(g)) < 1e-6
        v = scale * rng.standard_normal(10)
        hv = hessian_vec(model, x, v)
        fd = (jacobian(model, x + 1e-5 * v) - jacobian(model, x - 1e-5 * v)) / 2e-5
        assert np.max(np.abs(hv - fd)) / np.max(np.abs(hv)) < 1e-4


def test_speed_envelope(clay_run):
    _, _, _, _, log, _, _ = clay_run
    assert log.meta["scenario"]["duration"] == 40.0
    u = log.states[:, 3]
    assert 2.0 <= u.min() and u.max() <= 10.0


def test_estimator_convergence(clay_run):
    _, _, _, _, _, _, trace = clay_run
    assert abs(trace.final_n - 0.5) <= 0.05 * 0.5
    assert np.all((trace.n_hat >= 0.3) & (trace.n_hat <= 1.3))
    settled = trace.n_hat[len(trace) // 4:]
    distance = np.abs(settled - 0.5)
    assert distance[-1] <= distance[0]


def test_self_consistency(clay_run):
    cfg, _, model, _, _, _, _ = clay_run
    terrain = cfg.terrain.to_params()
    scn = Scenario(duration=20.0)
    log = simulate(scn, terrain, cfg.geometry.to_geometry(), VehicleParams(), cfg.geometry.mesh, lateral_model=model)
    trace = run_estimator(log, cfg.estimator.to_ukf_config(), model, terrain, cfg.estimator.n0)
    assert abs(trace.final_n - terrain.n) <= 0.005 * terrain.n


def test_prediction_improvement(clay_run):
    cfg, _, model, _, log, _, trace = clay_run
    terrain = cfg.terrain.to_params()
    converged = horizon_mse(log, model, trace.final_n, terrain, horizon=2.5, stride=0.1)
    initial = horizon_mse(log, model, 0.7, terrain, horizon=2.5, stride=0.1)
    for state in (1, 4, 5):
        assert initial.mse[state] >= 3.0 * converged.mse[state]
    assert converged.mse[3] == initial.mse[3]


def test_step_latency(clay_run):
    cfg, *_ = clay_run
    result = pipeline.benchmark_run(cfg)
    assert result["steps"] >= 1000
    assert result["mean_ms"] <= 10.0


def test_report_reproducible(clay_run, tmp_path):
    cfg, *_ = clay_run
    first = pipeline.report_run(cfg)
    tables = {name: path.read_bytes() for name, path in first.tables.items()}
    second = pipeline.report_run(cfg)
    for name, path in second.tables.items():
        assert path.read_bytes() == tables[name]
