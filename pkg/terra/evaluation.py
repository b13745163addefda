"""
Prediction-horizon and force-fidelity evaluation.

Windows start every `stride` seconds, are initialized from the true (or
filtered) state, roll the bicycle model forward through the logged inputs and
are scored against the plant state at the end of the horizon.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .bicycle import STATE_NAMES, ForceModel, VehicleParams, rollout, surrogate_rows, terrain_vector
from .plant import TrajectoryLog
from .terramech import DEFAULT_GEOMETRY, TerrainParams, WheelGeometry
from .ukf import SinkageEstimator, UkfConfig

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 2.5
DEFAULT_STRIDE = 0.1
INIT_MODES = ("truth", "filtered")


@dataclass
class HorizonResult:
    n_value: float
    mse: np.ndarray      # (6,) per-state mean squared error
    windows: int
    horizon: float
    stride: float
    starts: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    trajectories: Dict[int, np.ndarray] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(STATE_NAMES, (float(v) for v in self.mse)))


def horizon_mse(log: TrajectoryLog, model: ForceModel, n_value: float, terrain: TerrainParams,
                vp: VehicleParams = VehicleParams(), geom: WheelGeometry = DEFAULT_GEOMETRY,
                horizon: float = DEFAULT_HORIZON, stride: float = DEFAULT_STRIDE, substeps: int = 1,
                initial_states: Optional[np.ndarray] = None, keep: Sequence[int] = ()) -> HorizonResult:
    """
    Per-state MSE of horizon-long predictions over overlapping windows.

    Args:
        log: Plant truth at a fixed sample interval
        model: Lateral-force model
        n_value: Sinkage exponent the prediction model runs with
        terrain: Nominal terrain; its n is replaced by n_value
        horizon: Prediction length in seconds
        stride: Spacing between window starts
        initial_states: (K, 6) states to start windows from instead of the truth
        keep: Window start indices whose predicted trajectories are returned

    Windows that would run past the end of the log are skipped.
    """
    if horizon <= 0 or stride <= 0:
        raise ValueError(f"Horizon and stride must be positive, got {horizon}, {stride}")
    dt = log.dt
    steps = int(round(horizon / dt))
    stride_steps = max(int(round(stride / dt)), 1)
    starts = np.arange(0, len(log) - steps, stride_steps)
    if len(starts) == 0:
        raise ValueError(f"Log of {len(log)} samples is shorter than the {horizon} s horizon")

    init = log.states if initial_states is None else np.asarray(initial_states, dtype=float)
    window = starts[:, None] + np.arange(steps)[None, :]
    terrain_row = terrain_vector(terrain.with_sinkage_exponent(n_value), geom)
    predicted = rollout(init[starts], log.inputs[window], terrain_row, model, vp, dt, substeps)
    errors = predicted[:, -1, :] - log.states[starts + steps]
    mse = np.mean(errors ** 2, axis=0)

    kept = {int(s): predicted[i] for i, s in enumerate(starts) if int(s) in set(keep)}
    logger.info(f"Horizon {horizon} s with n = {n_value:.4f}: {len(starts)} windows, "
                f"MSE y {mse[1]:.4g} m^2, v {mse[4]:.4g}")
    return HorizonResult(float(n_value), mse, len(starts), horizon, stride, starts, kept)


@dataclass
class ForceComparison:
    time: np.ndarray
    truth: np.ndarray      # (K, 2) per-tire lateral force, front and rear
    predicted: np.ndarray  # (K, 2)

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.predicted - self.truth) ** 2)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time": self.time,
            "fy_front_true": self.truth[:, 0],
            "fy_front_model": self.predicted[:, 0],
            "fy_rear_true": self.truth[:, 1],
            "fy_rear_model": self.predicted[:, 1],
        })


def force_rmse(log: TrajectoryLog, model: ForceModel, terrain: TerrainParams,
               vp: VehicleParams = VehicleParams(), geom: WheelGeometry = DEFAULT_GEOMETRY) -> ForceComparison:
    """Per-tire lateral force of the model against the plant truth at the logged conditions."""
    if np.isnan(log.forces).all():
        raise ValueError("Trajectory log carries no ground-truth forces")
    rows = surrogate_rows(log.states, log.inputs, terrain_vector(terrain, geom), vp)
    predicted = np.asarray(model.lateral_force(rows.reshape(-1, 10))).reshape(2, -1).T
    comparison = ForceComparison(log.time, log.lateral_forces / 2.0, predicted)
    logger.info(f"Lateral force RMSE {comparison.rmse:.2f} N per tire over {len(log)} samples")
    return comparison


def benchmark(log: TrajectoryLog, model: ForceModel, terrain: TerrainParams, cfg: UkfConfig = UkfConfig(),
              n0: float = 0.7, steps: int = 1000, vp: VehicleParams = VehicleParams(),
              geom: WheelGeometry = DEFAULT_GEOMETRY, measurements: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Time predict+update steps over the log, restarting the filter when it runs out.

    Returns:
        Step latency statistics in milliseconds and network call latency in microseconds
    """
    if len(log) < 2:
        raise ValueError("Benchmark needs a log with at least two samples")
    measured = log.states if measurements is None else measurements
    timings = []
    while len(timings) < steps:
        estimator = SinkageEstimator(model, terrain, n0, measured[0], cfg, vp, geom)
        for k in range(1, len(log)):
            timings.append(estimator.step(log.inputs[k - 1], measured[k]))
            if len(timings) == steps:
                break
    timings_ms = 1e3 * np.array(timings)

    rows = surrogate_rows(np.tile(log.states[0], (15, 1)), log.inputs[0], terrain_vector(terrain, geom), vp)
    calls = 200
    started = time.perf_counter()
    for _ in range(calls):
        model.lateral_force(rows.reshape(-1, 10))
    forward_us = 1e6 * (time.perf_counter() - started) / calls

    result = {
        "steps": float(len(timings_ms)),
        "mean_ms": float(timings_ms.mean()),
        "p95_ms": float(np.percentile(timings_ms, 95)),
        "peak_ms": float(timings_ms.max()),
        "batched_forward_us": forward_us,
    }
    logger.info(f"Benchmark: mean {result['mean_ms']:.3f} ms, p95 {result['p95_ms']:.3f} ms, "
                f"peak {result['peak_ms']:.3f} ms per step")
    return result
