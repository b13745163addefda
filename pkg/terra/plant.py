"""
Plant Simulation Harness
========================
Planar double-axle vehicle driven by the reference terramechanics model,
standing in for a full multibody vehicle:

1. Body states of the bicycle model plus one lumped spin state per axle
2. Slip ratio per axle from wheel spin and body speed
3. Reference tire forces per axle (two identical tires); optional surrogate
   lateral forces for self-consistency runs
4. Sinusoidal steering and drive-torque scenario
5. 50 Hz log of states, inputs, slips, a_x and true forces
6. Gaussian sensor simulation
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .bicycle import (
    INPUT_COLUMNS,
    STATE_NAMES,
    ForceModel,
    VehicleParams,
    axle_lateral_forces,
    derivatives,
    guarded_slip_angles,
    guarded_speed,
    terrain_vector,
)
from .errors import SimulationBlowUpError
from .io import read_manifest, read_table, write_manifest, write_table
from .terramech import (
    DEFAULT_GEOMETRY,
    DEFAULT_MESH,
    TerrainParams,
    WheelGeometry,
    WheelState,
    compaction_resistance,
    static_sinkage,
    tire_forces,
)

logger = logging.getLogger(__name__)

MAX_LATERAL_SPEED = 20.0  # m/s
SLIP_EPSILON = 0.1  # m/s
MAX_STEERING_RATE = 0.56  # rad/s
SENSOR_SIGMA = (1.2, 1.2, 0.0175, 0.25, 0.25, 0.0175)
FORCE_COLUMNS = ("fx_f", "fy_f", "fz_f", "fx_r", "fy_r", "fz_r")
WHEEL_COLUMNS = ("omega_wf", "omega_wr")


@dataclass(frozen=True)
class Scenario:
    """
    Sinusoidal steering and drive-torque run.

    torque_mean=None selects the torque that balances the static compaction
    resistance of all four tires.
    """
    duration: float = 40.0
    steer_amplitude: float = 0.35
    steer_frequency: float = 0.25
    torque_mean: Optional[float] = None
    torque_amplitude: float = 450.0
    torque_frequency: float = 0.05
    initial_speed: float = 4.0
    wheel_inertia: float = 15.0
    dt_plant: float = 1e-3
    dt_log: float = 0.02
    seed: int = 0

    def __post_init__(self):
        peak_rate = 2.0 * math.pi * self.steer_frequency * abs(self.steer_amplitude)
        if peak_rate > MAX_STEERING_RATE + 1e-12:
            raise ValueError(f"Peak steering rate {peak_rate:.3f} rad/s exceeds {MAX_STEERING_RATE} rad/s")
        if self.duration <= 0 or self.initial_speed <= 0 or self.wheel_inertia <= 0:
            raise ValueError("Scenario duration, initial speed and wheel inertia must be positive")
        if not 0 < self.dt_plant <= self.dt_log:
            raise ValueError(f"Plant step {self.dt_plant} s must be positive and no longer than the log step")
        ratio = self.dt_log / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"Log step {self.dt_log} s must be a whole number of plant steps ({self.dt_plant} s)")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_log / self.dt_plant))

    @property
    def samples(self) -> int:
        return int(round(self.duration / self.dt_log)) + 1

    def steering(self, t: float) -> Tuple[float, float]:
        """(delta, delta_rate) at time t."""
        omega = 2.0 * math.pi * self.steer_frequency
        return self.steer_amplitude * math.sin(omega * t), self.steer_amplitude * omega * math.cos(omega * t)

    def torque(self, t: float, mean: float) -> float:
        return mean + self.torque_amplitude * math.sin(2.0 * math.pi * self.torque_frequency * t)


@dataclass(frozen=True)
class NoiseModel:
    sigma: Tuple[float, ...] = SENSOR_SIGMA
    seed: int = 0

    def __post_init__(self):
        if len(self.sigma) != 6:
            raise ValueError(f"Noise model needs six standard deviations, got {len(self.sigma)}")
        if any(s < 0 or not math.isfinite(s) for s in self.sigma):
            raise ValueError(f"Noise standard deviations must be finite and non-negative, got {self.sigma}")


@dataclass
class TrajectoryLog:
    """Plant truth sampled at the filter rate"""
    time: np.ndarray
    states: np.ndarray        # (K, 6) bicycle states
    inputs: np.ndarray        # (K, 5) a_x, delta, delta_rate, slip_ratio_f, slip_ratio_r
    wheel_speeds: np.ndarray  # (K, 2)
    forces: np.ndarray        # (K, 6) axle fx, fy, fz front then rear
    meta: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.time)

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0]) if len(self) > 1 else float("nan")

    @property
    def lateral_forces(self) -> np.ndarray:
        return self.forces[:, [1, 4]]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time": self.time})
        for block, names in ((self.states, STATE_NAMES), (self.inputs, INPUT_COLUMNS),
                             (self.wheel_speeds, WHEEL_COLUMNS), (self.forces, FORCE_COLUMNS)):
            for i, name in enumerate(names):
                frame[name] = block[:, i]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, meta: Optional[Dict[str, object]] = None) -> "TrajectoryLog":
        missing = [c for c in ("time",) + STATE_NAMES + INPUT_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"Trajectory log is missing columns {missing}")
        if len(frame) == 0:
            raise ValueError("Trajectory log is empty")

        def block(names):
            if all(name in frame.columns for name in names):
                return frame[list(names)].to_numpy(dtype=float)
            return np.full((len(frame), len(names)), np.nan)

        return cls(
            time=frame["time"].to_numpy(dtype=float),
            states=frame[list(STATE_NAMES)].to_numpy(dtype=float),
            inputs=frame[list(INPUT_COLUMNS)].to_numpy(dtype=float),
            wheel_speeds=block(WHEEL_COLUMNS),
            forces=block(FORCE_COLUMNS),
            meta=dict(meta or {}),
        )

    def save(self, path: Path) -> Path:
        path = write_table(self.to_frame(), path)
        write_manifest(path, {"kind": "trajectory", **self.meta})
        logger.info(f"Saved {len(self)} log samples to {path}")
        return path

    @classmethod
    def load(cls, path: Path) -> "TrajectoryLog":
        meta = {k: v for k, v in read_manifest(path).items() if k not in ("kind", "artifact", "sha256", "written_at")}
        return cls.from_frame(read_table(path), meta)


def balance_torque(terrain: TerrainParams, vp: VehicleParams, geom: WheelGeometry = DEFAULT_GEOMETRY,
                   mesh: int = DEFAULT_MESH) -> float:
    """Total drive torque whose traction equals the static compaction resistance of all tires."""
    front, rear = vp.tire_loads
    return 2.0 * geom.radius * (compaction_resistance(front, terrain, geom, mesh)
                                + compaction_resistance(rear, terrain, geom, mesh))


def slip_ratio(wheel_speed, u, radius: float):
    """(r w - u) / max(|r w|, |u|, eps)"""
    rim = radius * np.asarray(wheel_speed, dtype=float)
    return (rim - u) / np.maximum(np.maximum(np.abs(rim), np.abs(u)), SLIP_EPSILON)


def longitudinal_acceleration(u: float, traction: float, resistance: float, drive_force: float,
                              mass: float, dt: float) -> float:
    """
    Body acceleration from tire traction and compaction resistance.

    Resistance opposes the direction of travel and can bring the body to rest
    but never push it past standstill. At rest it holds the body until the
    drive force (torque over radius) exceeds it.

    Args:
        u: Longitudinal speed (m/s)
        traction: Summed shear traction of all tires (N)
        resistance: Summed compaction resistance of all tires (N, >= 0)
        drive_force: Drive torque over wheel radius (N)
        mass: Vehicle mass (kg)
        dt: Integration step (s)
    """
    if u == 0.0:
        if abs(drive_force) <= resistance:
            return 0.0
        return math.copysign(abs(traction) - resistance, drive_force) / mass if abs(traction) > resistance else 0.0
    a = (traction - math.copysign(resistance, u)) / mass
    if (u + dt * a) * u < 0.0 and abs(traction) <= resistance:
        return -u / dt
    return a


def simulate(scn: Scenario, terrain: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY,
             vp: VehicleParams = VehicleParams(), mesh: int = DEFAULT_MESH,
             lateral_model: Optional[ForceModel] = None) -> TrajectoryLog:
    """
    Integrate the plant at scn.dt_plant and log at scn.dt_log.

    Args:
        scn: Steering/torque scenario
        terrain: True soil parameters
        lateral_model: When given, axle lateral forces come from this model
            (longitudinal and vertical forces stay with the reference model)

    Returns:
        TrajectoryLog with scn.samples rows; a_x is the forward difference of
        u over each log interval

    Raises:
        SimulationBlowUpError: |v| > 20 m/s or a non-finite state; carries the
            samples logged so far
    """
    r = geom.radius
    front_load, rear_load = vp.tire_loads
    sinkage = (static_sinkage(front_load, terrain, geom, mesh), static_sinkage(rear_load, terrain, geom, mesh))
    torque_mean = balance_torque(terrain, vp, geom, mesh) if scn.torque_mean is None else scn.torque_mean
    share = (front_load / (front_load + rear_load), rear_load / (front_load + rear_load))
    terrain_row = terrain_vector(terrain, geom)

    body = np.array([0.0, 0.0, 0.0, scn.initial_speed, 0.0, 0.0])
    wheels = np.full(2, scn.initial_speed / r)
    records: List[Tuple] = []
    samples = scn.samples + 1  # one extra interval closes the last forward difference

    logger.info(f"Simulating {scn.duration:.1f} s at {scn.dt_plant * 1e3:.1f} ms steps "
                f"(drive torque {torque_mean:.1f} +/- {scn.torque_amplitude:.1f} N m)")

    def assemble() -> TrajectoryLog:
        count = min(len(records), scn.samples)
        time_axis = np.array([rec[0] for rec in records])
        states = np.array([rec[1] for rec in records]).reshape(-1, 6)
        speed = states[:, 3]
        a_x = np.append(np.diff(speed) / scn.dt_log, np.nan)
        inputs = np.array([rec[2] for rec in records]).reshape(-1, 5)
        inputs[:, 0] = a_x
        return TrajectoryLog(
            time=time_axis[:count],
            states=states[:count],
            inputs=inputs[:count],
            wheel_speeds=np.array([rec[3] for rec in records]).reshape(-1, 2)[:count],
            forces=np.array([rec[4] for rec in records]).reshape(-1, 6)[:count],
            meta={
                "scenario": asdict(scn),
                "terrain": asdict(terrain),
                "geometry": asdict(geom),
                "vehicle": asdict(vp),
                "torque_mean": torque_mean,
                "lateral_model": "reference" if lateral_model is None else "surrogate",
                "mesh": mesh,
            },
        )

    for k in range(samples):
        for sub in range(scn.substeps):
            t = (k * scn.substeps + sub) * scn.dt_plant
            delta, delta_rate = scn.steering(t)
            u = body[3]
            kappa = slip_ratio(wheels, u, r)
            u_tire = float(guarded_speed(u))
            alpha_f, alpha_r = guarded_slip_angles(body, delta, vp)
            front = tire_forces(WheelState(float(kappa[0]), float(alpha_f), u_tire, front_load, delta_rate),
                                terrain, geom, mesh, sinkage=sinkage[0])
            rear = tire_forces(WheelState(float(kappa[1]), float(alpha_r), u_tire, rear_load, 0.0),
                               terrain, geom, mesh, sinkage=sinkage[1])
            fyf, fyr = 2.0 * front.fy, 2.0 * rear.fy
            steer = np.array([0.0, delta, delta_rate, kappa[0], kappa[1]])
            if lateral_model is not None:
                fyf, fyr = axle_lateral_forces(body, steer, terrain_row, lateral_model, vp)

            if sub == 0:
                records.append((t, body.copy(), steer, wheels.copy(),
                                np.array([2.0 * front.fx, fyf, 2.0 * front.fz, 2.0 * rear.fx, fyr, 2.0 * rear.fz])))
                if len(records) == samples:
                    break

            drive = scn.torque(t, torque_mean)
            traction = 2.0 * (front.traction + rear.traction)
            resistance = 2.0 * ((front.traction - front.fx) + (rear.traction - rear.fx))
            a_x = longitudinal_acceleration(u, traction, resistance, drive / r, vp.mass, scn.dt_plant)
            inp = np.array([a_x, delta, delta_rate, kappa[0], kappa[1]])
            wheel_rates = np.array([(share[0] * drive - 2.0 * r * front.traction),
                                    (share[1] * drive - 2.0 * r * rear.traction)]) / scn.wheel_inertia
            body = body + scn.dt_plant * derivatives(body, inp, fyf, fyr, vp)
            wheels = wheels + scn.dt_plant * wheel_rates
            if abs(traction) <= resistance and (u == 0.0 or body[3] * u <= 0.0):
                body[3] = 0.0
                if abs(drive / r) <= resistance:
                    wheels[:] = 0.0

            if not (np.all(np.isfinite(body)) and np.all(np.isfinite(wheels))) or abs(body[4]) > MAX_LATERAL_SPEED:
                message = f"Plant state left its envelope at t = {t:.3f} s (v = {body[4]:.2f} m/s)"
                logger.error(message)
                raise SimulationBlowUpError(message, log=assemble() if len(records) > 1 else None)

    log = assemble()
    logger.info(f"Simulated {len(log)} samples, u in [{log.states[:, 3].min():.2f}, {log.states[:, 3].max():.2f}] m/s")
    return log


def add_noise(log: TrajectoryLog, nm: NoiseModel = NoiseModel()) -> np.ndarray:
    """Measurements: log states plus independent zero-mean Gaussian noise per state."""
    if len(log) == 0:
        raise ValueError("Cannot add noise to an empty log")
    rng = np.random.default_rng(nm.seed)
    return log.states + rng.standard_normal(log.states.shape) * np.asarray(nm.sigma)


def measurements_frame(log: TrajectoryLog, measurements: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({"time": log.time})
    for i, name in enumerate(STATE_NAMES):
        frame[name] = measurements[:, i]
    return frame
