"""
Shared fixtures: terrain, vehicle, small networks and synthetic trajectory logs.
"""

import math

import numpy as np
import pytest

from terra.bicycle import VehicleParams, rollout, terrain_vector
from terra.plant import TrajectoryLog
from terra.sampling import InputSpace
from terra.surrogate import Mlp, Normalization
from terra.terramech import TERRAIN_PRESETS, WheelGeometry


class AnalyticForceModel:
    """Smooth lateral force whose cornering stiffness depends on the sinkage exponent"""

    def __init__(self):
        self.calls = 0
        self.rows_seen = []

    def lateral_force(self, inputs):
        rows = np.atleast_2d(inputs)
        self.calls += 1
        self.rows_seen.append(rows.copy())
        alpha_eff = rows[:, 1] + 0.1 * rows[:, 4]
        return -(2.0 - rows[:, 6]) * rows[:, 3] * np.tanh(2.0 * alpha_eff)


class ZeroForceModel:
    def lateral_force(self, inputs):
        return np.zeros(np.atleast_2d(inputs).shape[0])


@pytest.fixture
def clay():
    return TERRAIN_PRESETS["clay"]


@pytest.fixture
def geometry():
    return WheelGeometry(0.45, 0.25)


@pytest.fixture
def vehicle():
    return VehicleParams()


@pytest.fixture
def analytic_model():
    return AnalyticForceModel()


@pytest.fixture
def zero_model():
    return ZeroForceModel()


@pytest.fixture
def random_mlp():
    """Small random network over the default input space, output in newtons."""
    space = InputSpace.default()
    rng = np.random.default_rng(42)
    return Mlp.initialize(
        [10, 6, 5, 1], rng,
        Normalization.from_bounds(space.lows, space.highs),
        Normalization(np.array([100.0]), np.array([500.0])),
        input_bounds=np.vstack([space.lows, space.highs]),
    )


@pytest.fixture
def make_log(clay, geometry, vehicle):
    """Factory for trajectory logs generated by rolling the bicycle model itself."""

    def build(model, n=0.5, duration=10.0, dt=0.02, substeps=2, u0=5.0, amplitude=0.1, frequency=0.3):
        count = int(round(duration / dt)) + 1
        t = np.arange(count) * dt
        omega = 2.0 * math.pi * frequency
        inputs = np.zeros((count, 5))
        inputs[:, 0] = 0.05 * np.sin(0.5 * t)
        inputs[:, 1] = amplitude * np.sin(omega * t)
        inputs[:, 2] = amplitude * omega * np.cos(omega * t)
        terrain = terrain_vector(clay.with_sinkage_exponent(n), geometry)
        z0 = np.array([0.0, 0.0, 0.0, u0, 0.0, 0.0])
        states = rollout(z0, inputs[:-1], terrain, model, vehicle, dt, substeps)
        return TrajectoryLog(
            time=t,
            states=states,
            inputs=inputs,
            wheel_speeds=np.full((count, 2), np.nan),
            forces=np.full((count, 6), np.nan),
            meta={"terrain": {"n": n}},
        )

    return build
