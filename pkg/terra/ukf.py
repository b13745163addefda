"""
Sinkage-Exponent Estimator
==========================
Unscented Kalman filter over the bicycle state augmented with the sinkage
exponent n (L = 7, 15 sigma points). The prediction model is the bicycle
model with lateral forces from a force model evaluated at each sigma point's
n; n itself follows a random walk. All six bicycle states are measured.

Features:
1. Scaled unscented transform with Cholesky jitter escalation
2. Moments recombined from deviations about the central point
3. Symmetrized posterior covariance
4. n clamped to [0.3, 1.3] after every update
5. Per-step latency and event counters
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky

from .bicycle import STATE_NAMES, ForceModel, VehicleParams, rollout, terrain_vector
from .errors import FilterError
from .io import read_manifest, read_table, write_manifest, write_table
from .terramech import DEFAULT_GEOMETRY, N_RANGE, TerrainParams, WheelGeometry

logger = logging.getLogger(__name__)

STATE_DIM = 7
MEASUREMENT_DIM = 6
AUGMENTED_NAMES = STATE_NAMES + ("n",)
MEASUREMENT_SIGMA = np.array([1.2, 1.2, 0.0175, 0.25, 0.25, 0.0175])
PROCESS_SCALE = np.array([10.0, 10.0, 1.0, 5.0, 1.0, 0.5])
JITTER_START = 1e-12
JITTER_MAX = 1e-6


def default_process_noise(q_n: float = 1e-6) -> np.ndarray:
    return np.diag(np.append(1e-6 * PROCESS_SCALE ** 2, q_n))


def default_measurement_noise() -> np.ndarray:
    return np.diag(MEASUREMENT_SIGMA ** 2)


def _check_covariance(name: str, matrix: np.ndarray, size: int, definite: bool):
    if matrix.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise ValueError(f"{name} must be symmetric")
    smallest = np.linalg.eigvalsh(matrix).min()
    if smallest < 0.0 or (definite and smallest <= 0.0):
        kind = "positive definite" if definite else "positive semidefinite"
        raise ValueError(f"{name} must be {kind} (smallest eigenvalue {smallest:.3g})")


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    process_noise: np.ndarray = field(default_factory=default_process_noise)
    measurement_noise: np.ndarray = field(default_factory=default_measurement_noise)
    dt: float = 0.02
    substeps: int = 2
    initial_n_variance: float = 0.04

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"UKF alpha must be in (0, 1], got {self.alpha}")
        if STATE_DIM + self.kappa <= 0:
            raise ValueError(f"UKF kappa must satisfy L + kappa > 0, got {self.kappa}")
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError(f"Filter step {self.dt} s with {self.substeps} substeps is invalid")
        if self.initial_n_variance <= 0:
            raise ValueError("Initial n variance must be positive")
        object.__setattr__(self, "process_noise", np.asarray(self.process_noise, dtype=float))
        object.__setattr__(self, "measurement_noise", np.asarray(self.measurement_noise, dtype=float))
        _check_covariance("Process noise Q", self.process_noise, STATE_DIM, definite=False)
        _check_covariance("Measurement noise R", self.measurement_noise, MEASUREMENT_DIM, definite=True)

    @property
    def spread(self) -> float:
        """(L + lambda) = alpha^2 (L + kappa)."""
        return self.alpha ** 2 * (STATE_DIM + self.kappa)


@dataclass(frozen=True)
class SigmaPoints:
    points: np.ndarray        # (2L+1, L)
    mean_weights: np.ndarray  # (2L+1,)
    cov_weights: np.ndarray   # (2L+1,)
    jitter: float = 0.0


def _weights(cfg: UkfConfig, size: int) -> Tuple[np.ndarray, np.ndarray]:
    spread = cfg.alpha ** 2 * (size + cfg.kappa)
    wm = np.full(2 * size + 1, 1.0 / (2.0 * spread))
    wc = wm.copy()
    wm[0] = 1.0 - size / spread
    wc[0] = wm[0] + 1.0 - cfg.alpha ** 2 + cfg.beta
    return wm, wc


def _factor(cov: np.ndarray, scale: float) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of scale * cov, escalating diagonal jitter on failure."""
    jitter = 0.0
    while True:
        try:
            return cholesky(scale * (cov + jitter * np.eye(len(cov))), lower=True), jitter
        except LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX:
                raise FilterError("Covariance is not factorizable even with 1e-6 jitter")


def sigma_points(mean: np.ndarray, cov: np.ndarray, cfg: UkfConfig) -> SigmaPoints:
    """
    Scaled unscented sigma points mean +/- columns of sqrt((L + lambda) cov).

    Raises:
        FilterError: covariance not factorizable after jitter escalation
    """
    mean = np.asarray(mean, dtype=float)
    size = mean.size
    root, jitter = _factor(np.asarray(cov, dtype=float), cfg.alpha ** 2 * (size + cfg.kappa))
    points = np.empty((2 * size + 1, size))
    points[0] = mean
    points[1:size + 1] = mean + root.T
    points[size + 1:] = mean - root.T
    wm, wc = _weights(cfg, size)
    return SigmaPoints(points, wm, wc, jitter)


def unscented_moments(points: np.ndarray, wm: np.ndarray, wc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance, recombined from deviations about points[0]."""
    offsets = points - points[0]
    mean_offset = wm[1:] @ offsets[1:]
    centered = offsets - mean_offset
    cov = (centered * wc[:, None]).T @ centered
    return points[0] + mean_offset, 0.5 * (cov + cov.T)


@dataclass
class Belief:
    mean: np.ndarray
    cov: np.ndarray
    points: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TerrainNominals:
    """Terrain columns held fixed while n is estimated"""
    k_star: float
    k: float
    c: float
    phi: float

    @classmethod
    def from_params(cls, params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY) -> "TerrainNominals":
        k_star, _, k, c, phi = terrain_vector(params, geom)
        return cls(float(k_star), float(k), float(c), float(phi))

    def with_n(self, n: np.ndarray) -> np.ndarray:
        n = np.atleast_1d(np.asarray(n, dtype=float))
        columns = np.empty(n.shape + (5,))
        columns[..., 0], columns[..., 1] = self.k_star, n
        columns[..., 2], columns[..., 3], columns[..., 4] = self.k, self.c, self.phi
        return columns


def predict(belief: Belief, inp: np.ndarray, cfg: UkfConfig, model: ForceModel, terrain: TerrainNominals,
            vp: VehicleParams, loads: Optional[Tuple[float, float]] = None) -> Belief:
    """Propagate every sigma point through the bicycle model; n is carried unchanged."""
    sp = sigma_points(belief.mean, belief.cov, cfg)
    n = sp.points[:, 6]
    states = rollout(sp.points[:, :6], np.broadcast_to(inp, (len(n), 1, 5)),
                     terrain.with_n(np.clip(n, *N_RANGE)), model, vp, cfg.dt, cfg.substeps, loads)[:, -1]
    propagated = np.column_stack([states, n])
    mean, cov = unscented_moments(propagated, sp.mean_weights, sp.cov_weights)
    return Belief(mean, cov + cfg.process_noise, propagated)


def update(belief: Belief, measurement: np.ndarray, cfg: UkfConfig) -> Tuple[Belief, Dict[str, float]]:
    """
    Innovation update on the six measured states.

    Returns:
        (posterior, diagnostics with gain norm, jitter and clamp flag)

    Raises:
        FilterError: singular innovation covariance or unfactorizable posterior
    """
    measurement = np.asarray(measurement, dtype=float)
    if measurement.shape != (MEASUREMENT_DIM,) or not np.all(np.isfinite(measurement)):
        raise ValueError("Measurement must be six finite values")
    sp = sigma_points(belief.mean, belief.cov, cfg)
    offsets = sp.points - sp.points[0]
    mean_offset = sp.mean_weights[1:] @ offsets[1:]
    centered = offsets - mean_offset
    weighted = centered * sp.cov_weights[:, None]
    innovation_cov = weighted[:, :MEASUREMENT_DIM].T @ centered[:, :MEASUREMENT_DIM]
    innovation_cov = 0.5 * (innovation_cov + innovation_cov.T) + cfg.measurement_noise
    cross_cov = weighted.T @ centered[:, :MEASUREMENT_DIM]
    predicted_measurement = sp.points[0, :MEASUREMENT_DIM] + mean_offset[:MEASUREMENT_DIM]

    try:
        gain = cho_solve(cho_factor(innovation_cov), cross_cov.T).T
    except LinAlgError as exc:
        raise FilterError(f"Innovation covariance is singular: {exc}") from exc

    mean = sp.points[0] + mean_offset + gain @ (measurement - predicted_measurement)
    cov = belief.cov - gain @ innovation_cov @ gain.T
    cov = 0.5 * (cov + cov.T)
    _, jitter = _factor(cov, 1.0)
    if jitter:
        cov = cov + jitter * np.eye(STATE_DIM)

    clamped = not N_RANGE[0] <= mean[6] <= N_RANGE[1]
    mean[6] = np.clip(mean[6], *N_RANGE)
    return Belief(mean, cov), {"gain_norm": float(np.linalg.norm(gain)), "jitter": max(jitter, sp.jitter),
                               "clamped": clamped}


class SinkageEstimator:
    """
    Stateful predict/update loop around the functional filter steps.

    Single writer: one step at a time.
    """

    def __init__(self, model: ForceModel, terrain: TerrainParams, n0: float, initial_state: np.ndarray,
                 cfg: UkfConfig = UkfConfig(), vp: VehicleParams = VehicleParams(),
                 geom: WheelGeometry = DEFAULT_GEOMETRY, loads: Optional[Tuple[float, float]] = None):
        if not N_RANGE[0] <= n0 <= N_RANGE[1]:
            raise ValueError(f"Initial n guess {n0} outside {N_RANGE}")
        self.model = model
        self.cfg = cfg
        self.vp = vp
        self.loads = loads
        self.terrain = TerrainNominals.from_params(terrain, geom)
        cov = np.zeros((STATE_DIM, STATE_DIM))
        cov[:6, :6] = cfg.measurement_noise
        cov[6, 6] = cfg.initial_n_variance
        self.belief = Belief(np.append(np.asarray(initial_state, dtype=float), n0), cov)
        self.statistics = {"steps": 0, "jitter_events": 0, "clamp_events": 0}

    @property
    def n_hat(self) -> float:
        return float(self.belief.mean[6])

    def step(self, inp: np.ndarray, measurement: np.ndarray) -> float:
        """One predict + update; returns elapsed seconds."""
        started = time.perf_counter()
        predicted = predict(self.belief, inp, self.cfg, self.model, self.terrain, self.vp, self.loads)
        self.belief, diagnostics = update(predicted, measurement, self.cfg)
        elapsed = time.perf_counter() - started
        self.statistics["steps"] += 1
        if diagnostics["jitter"]:
            self.statistics["jitter_events"] += 1
            logger.warning(f"Covariance jitter {diagnostics['jitter']:.0e} applied at step {self.statistics['steps']}")
        if diagnostics["clamped"]:
            self.statistics["clamp_events"] += 1
        return elapsed


@dataclass
class EstimateTrace:
    """n-hat trajectory with covariance diagonals"""
    time: np.ndarray
    means: np.ndarray        # (K, 7)
    variances: np.ndarray    # (K, 7)
    step_seconds: np.ndarray  # (K - 1,)
    n0: float = float("nan")
    statistics: Dict[str, int] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.time)

    @property
    def n_hat(self) -> np.ndarray:
        return self.means[:, 6]

    @property
    def final_n(self) -> float:
        if len(self) == 0:
            raise ValueError("Estimate trace is empty")
        return float(self.means[-1, 6])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time": self.time, "n_hat": self.n_hat})
        for i, name in enumerate(AUGMENTED_NAMES):
            frame[f"mean_{name}"] = self.means[:, i]
        for i, name in enumerate(AUGMENTED_NAMES):
            frame[f"var_{name}"] = self.variances[:, i]
        frame["step_ms"] = np.append(np.nan, 1e3 * self.step_seconds)[:len(frame)]
        return frame

    def save(self, path: Path) -> Path:
        frame = self.to_frame().drop(columns=["step_ms"])
        path = write_table(frame, path)
        write_manifest(path, {"kind": "estimate", "n0": self.n0, "final_n": self.final_n,
                              "statistics": self.statistics, **self.meta})
        return path

    @classmethod
    def load(cls, path: Path) -> "EstimateTrace":
        frame = read_table(path)
        manifest = read_manifest(path)
        meta = {k: v for k, v in manifest.items()
                if k not in ("kind", "n0", "final_n", "statistics", "artifact", "sha256", "written_at")}
        return cls(
            time=frame["time"].to_numpy(),
            means=frame[[f"mean_{name}" for name in AUGMENTED_NAMES]].to_numpy(),
            variances=frame[[f"var_{name}" for name in AUGMENTED_NAMES]].to_numpy(),
            step_seconds=np.array([]),
            n0=manifest.get("n0", float("nan")),
            statistics=manifest.get("statistics", {}),
            meta=meta,
        )


def run_estimator(log, cfg: UkfConfig, model: ForceModel, terrain: TerrainParams, n0: float,
                  measurements: Optional[np.ndarray] = None, vp: VehicleParams = VehicleParams(),
                  geom: WheelGeometry = DEFAULT_GEOMETRY, loads: Optional[Tuple[float, float]] = None) -> EstimateTrace:
    """
    Filter a whole trajectory log.

    Args:
        log: TrajectoryLog sampled at cfg.dt
        measurements: (K, 6) noisy states; the noiseless log states when omitted
        n0: Initial sinkage-exponent guess

    Returns:
        Trace whose last n-hat is the converged estimate

    Raises:
        FilterError: carries the partial trace in .trace
    """
    if len(log) < 2:
        raise ValueError("Trajectory log needs at least two samples")
    if not np.isclose(log.dt, cfg.dt, rtol=1e-6):
        raise ValueError(f"Log sampled every {log.dt} s but the filter runs at {cfg.dt} s")
    measured = log.states if measurements is None else np.asarray(measurements, dtype=float)
    if measured.shape != log.states.shape:
        raise ValueError(f"Measurements shape {measured.shape} does not match log states {log.states.shape}")

    estimator = SinkageEstimator(model, terrain, n0, measured[0], cfg, vp, geom, loads)
    count = len(log)
    means = np.full((count, STATE_DIM), np.nan)
    variances = np.full((count, STATE_DIM), np.nan)
    step_seconds = np.zeros(count - 1)
    means[0], variances[0] = estimator.belief.mean, np.diag(estimator.belief.cov)

    def trace_upto(k: int) -> EstimateTrace:
        return EstimateTrace(log.time[:k], means[:k], variances[:k], step_seconds[:max(k - 1, 0)], n0,
                             dict(estimator.statistics))

    logger.info(f"Estimating n over {count} samples from n0 = {n0}")
    for k in range(1, count):
        try:
            step_seconds[k - 1] = estimator.step(log.inputs[k - 1], measured[k])
        except FilterError as exc:
            logger.error(f"Filter failed at t = {log.time[k]:.2f} s: {exc}")
            raise FilterError(str(exc), trace=trace_upto(k)) from exc
        means[k], variances[k] = estimator.belief.mean, np.diag(estimator.belief.cov)

    trace = trace_upto(count)
    logger.info(f"Final n-hat {trace.final_n:.4f} (mean step {1e3 * step_seconds.mean():.2f} ms, "
                f"statistics {estimator.statistics})")
    return trace
