import numpy as np
import pandas as pd
import pytest

from terra.errors import SimulationBlowUpError
from terra.plant import (
    NoiseModel,
    Scenario,
    TrajectoryLog,
    add_noise,
    balance_torque,
    longitudinal_acceleration,
    measurements_frame,
    simulate,
    slip_ratio,
)
from terra.terramech import TERRAIN_PRESETS, WheelGeometry


class ConstantForceModel:
    def __init__(self, force):
        self.force = force

    def lateral_force(self, inputs):
        return np.full(np.atleast_2d(inputs).shape[0], self.force)


@pytest.fixture(scope="module")
def short_run():
    scn = Scenario(duration=0.4, dt_plant=2e-3)
    return simulate(scn, TERRAIN_PRESETS["clay"], WheelGeometry(0.45, 0.25), mesh=32)


class TestScenario:
    def test_sample_count(self):
        scn = Scenario()
        assert scn.samples == 2001
        assert scn.substeps == 20

    def test_rejects_fast_steering(self):
        with pytest.raises(ValueError, match="steering rate"):
            Scenario(steer_amplitude=0.4, steer_frequency=0.25)

    def test_rejects_fractional_log_step(self):
        with pytest.raises(ValueError, match="whole number"):
            Scenario(dt_plant=0.008, dt_log=0.02)

    def test_steering_profile(self):
        scn = Scenario(steer_amplitude=0.2, steer_frequency=0.25)
        assert scn.steering(0.0) == (0.0, pytest.approx(0.2 * 2 * np.pi * 0.25))
        assert scn.steering(1.0)[0] == pytest.approx(0.2)


class TestNoiseModel:
    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError, match="six"):
            NoiseModel(sigma=(1.0, 1.0))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            NoiseModel(sigma=(1.0, 1.0, -0.1, 0.25, 0.25, 0.0175))


class TestSlipRatio:
    @pytest.mark.parametrize("wheel_speed, u, expected", [
        (10.0, 4.5, 0.0),
        (20.0, 4.5, 0.5),
        (0.0, 4.5, -1.0),
        (0.0, 0.0, 0.0),
    ])
    def test_values(self, wheel_speed, u, expected):
        assert slip_ratio(wheel_speed, u, 0.45) == pytest.approx(expected)

    def test_bounded(self):
        speeds = np.linspace(-5.0, 30.0, 50)
        assert np.all(np.abs(slip_ratio(speeds, 4.0, 0.45)) <= 2.0)


class TestSimulate:
    def test_log_layout(self, short_run):
        assert len(short_run) == 21
        np.testing.assert_allclose(np.diff(short_run.time), 0.02)
        assert short_run.states.shape == (21, 6)
        assert short_run.inputs.shape == (21, 5)
        assert np.all(np.isfinite(short_run.inputs[:, 0]))
        assert short_run.meta["lateral_model"] == "reference"
        assert short_run.meta["terrain"]["n"] == 0.5

    def test_initial_state(self, short_run):
        np.testing.assert_array_equal(short_run.states[0], [0.0, 0.0, 0.0, 4.0, 0.0, 0.0])
        np.testing.assert_allclose(short_run.wheel_speeds[0], 4.0 / 0.45)

    def test_vertical_forces_carry_load(self, short_run, vehicle):
        front, rear = vehicle.axle_loads
        np.testing.assert_allclose(short_run.forces[:, 2], front, rtol=0.05)
        np.testing.assert_allclose(short_run.forces[:, 5], rear, rtol=0.05)

    def test_acceleration_matches_speed(self, short_run):
        expected = np.diff(short_run.states[:, 3]) / 0.02
        np.testing.assert_allclose(short_run.inputs[:-1, 0], expected, rtol=1e-12)

    def test_straight_without_steering(self, clay, geometry):
        log = simulate(Scenario(duration=0.4, dt_plant=2e-3, steer_amplitude=0.0), clay, geometry, mesh=32)
        assert np.max(np.abs(log.states[:, 1])) < 1e-2
        assert np.max(np.abs(log.states[:, 2])) < 1e-3

    def test_step_halving(self, clay, geometry):
        coarse = simulate(Scenario(duration=1.0, dt_plant=2e-3), clay, geometry, mesh=32)
        fine = simulate(Scenario(duration=1.0, dt_plant=1e-3), clay, geometry, mesh=32)
        gap = np.hypot(*(coarse.states[-1, :2] - fine.states[-1, :2]))
        assert gap < 0.01

    def test_surrogate_lateral_forces(self, clay, geometry):
        log = simulate(Scenario(duration=0.2, dt_plant=2e-3), clay, geometry, mesh=32,
                       lateral_model=ConstantForceModel(100.0))
        assert log.meta["lateral_model"] == "surrogate"
        np.testing.assert_allclose(log.lateral_forces, 200.0)

    def test_blow_up_keeps_partial_log(self, clay, geometry):
        scn = Scenario(duration=3.0, dt_plant=2e-3)
        with pytest.raises(SimulationBlowUpError) as excinfo:
            simulate(scn, clay, geometry, mesh=32, lateral_model=ConstantForceModel(1e4))
        partial = excinfo.value.log
        assert partial is not None
        assert 1 < len(partial) < scn.samples

    def test_coasts_to_rest_without_drive(self, clay, geometry):
        scn = Scenario(duration=3.0, torque_mean=0.0, torque_amplitude=0.0, steer_amplitude=0.0)
        u = simulate(scn, clay, geometry, mesh=64).states[:, 3]
        assert np.all(np.diff(u) <= 0.0)
        assert u.min() >= 0.0
        assert u[-1] == 0.0

    def test_balance_torque(self, clay, geometry, vehicle):
        assert balance_torque(clay, vehicle, geometry, mesh=32) > 0.0


class TestTrajectoryLog:
    def test_save_load(self, short_run, tmp_path):
        path = short_run.save(tmp_path / "trajectory.csv")
        loaded = TrajectoryLog.load(path)
        np.testing.assert_array_equal(loaded.states, short_run.states)
        np.testing.assert_array_equal(loaded.forces, short_run.forces)
        assert loaded.meta["scenario"]["duration"] == 0.4

    def test_from_frame_without_forces(self, short_run):
        frame = short_run.to_frame().drop(columns=["fy_f"])
        log = TrajectoryLog.from_frame(frame)
        assert np.isnan(log.forces).all()
        np.testing.assert_array_equal(log.states, short_run.states)

    def test_from_frame_missing_columns(self):
        with pytest.raises(ValueError, match="missing columns"):
            TrajectoryLog.from_frame(pd.DataFrame({"time": [0.0, 0.02]}))


class TestAddNoise:
    def test_statistics(self, make_log, zero_model):
        log = make_log(zero_model, duration=50.0)
        nm = NoiseModel(seed=3)
        residual = add_noise(log, nm) - log.states
        assert len(log) >= 2000
        np.testing.assert_allclose(residual.var(axis=0), np.square(nm.sigma), rtol=0.1)
        assert np.all(np.abs(residual.mean(axis=0)) < 0.2 * np.asarray(nm.sigma))

    def test_seeded(self, make_log, zero_model):
        log = make_log(zero_model, duration=1.0)
        np.testing.assert_array_equal(add_noise(log, NoiseModel(seed=5)), add_noise(log, NoiseModel(seed=5)))

    def test_zero_sigma(self, make_log, zero_model):
        log = make_log(zero_model, duration=1.0)
        np.testing.assert_array_equal(add_noise(log, NoiseModel(sigma=(0.0,) * 6)), log.states)

    def test_measurements_frame(self, make_log, zero_model):
        log = make_log(zero_model, duration=1.0)
        frame = measurements_frame(log, log.states)
        assert list(frame.columns) == ["time", "x", "y", "psi", "u", "v", "omega_z"]


class TestLongitudinalAcceleration:
    def test_resistance_opposes_travel(self):
        assert longitudinal_acceleration(4.0, 100.0, 500.0, 0.0, 1000.0, 1e-3) == pytest.approx(-0.4)
        assert longitudinal_acceleration(-4.0, -100.0, 500.0, 0.0, 1000.0, 1e-3) == pytest.approx(0.4)

    def test_stops_at_rest(self):
        assert longitudinal_acceleration(1e-4, 0.0, 500.0, 0.0, 1000.0, 1e-3) == pytest.approx(-0.1)

    def test_held_at_rest(self):
        assert longitudinal_acceleration(0.0, 300.0, 500.0, 400.0, 1000.0, 1e-3) == 0.0

    def test_breakaway(self):
        assert longitudinal_acceleration(0.0, 800.0, 500.0, 900.0, 1000.0, 1e-3) == pytest.approx(0.3)
        assert longitudinal_acceleration(0.0, 300.0, 500.0, 900.0, 1000.0, 1e-3) == 0.0

    def test_driven_reversal(self):
        assert longitudinal_acceleration(1e-4, -2000.0, 500.0, -3000.0, 1000.0, 1e-3) == pytest.approx(-2.5)
