"""
3-DoF Bicycle Model
===================
Planar single-track vehicle with lateral tire forces supplied by a force
model (the surrogate network or the reference contact-arc model):

    x'   = u cos(psi) - (v + L_f w) sin(psi)
    y'   = u sin(psi) + (v + L_f w) cos(psi)
    psi' = w
    u'   = a_x
    v'   = (F_yf + F_yr) / M_t - u w
    w'   = (F_yf L_f - F_yr L_r) / I_zz

States are arrays with a trailing axis of 6 so a batch of sigma points or
prediction windows is advanced in one call.
"""

import logging
from dataclasses import astuple, dataclass
from typing import Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateKinematicsError
from .terramech import N_RANGE, TerrainParams, WheelGeometry, DEFAULT_GEOMETRY, aggregate_modulus

logger = logging.getLogger(__name__)

GRAVITY = 9.81
MIN_SLIP_SPEED = 0.5  # m/s
MAX_STEP = 0.05  # s

STATE_NAMES = ("x", "y", "psi", "u", "v", "omega_z")
INPUT_COLUMNS = ("a_x", "delta", "delta_rate", "slip_ratio_f", "slip_ratio_r")
TERRAIN_COLUMNS = ("k_star", "n", "k", "c", "phi")


class ForceModel(Protocol):
    def lateral_force(self, inputs: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 2450.0
    yaw_inertia: float = 3500.0
    lf: float = 1.4
    lr: float = 1.6

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "lf", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Vehicle parameter {name} must be positive, got {getattr(self, name)}")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr

    @property
    def axle_loads(self) -> Tuple[float, float]:
        """Static (front, rear) axle loads in N."""
        weight = self.mass * GRAVITY
        return weight * self.lr / self.wheelbase, weight * self.lf / self.wheelbase

    @property
    def tire_loads(self) -> Tuple[float, float]:
        front, rear = self.axle_loads
        return front / 2.0, rear / 2.0


@dataclass(frozen=True)
class BicycleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u: float = 0.0
    v: float = 0.0
    omega_z: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, z: Sequence[float]) -> "BicycleState":
        return cls(*(float(value) for value in z))


@dataclass(frozen=True)
class BicycleInput:
    a_x: float = 0.0
    delta: float = 0.0
    delta_rate: float = 0.0
    slip_ratio_f: float = 0.0
    slip_ratio_r: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "BicycleInput":
        return cls(*(float(value) for value in values))


StateLike = Union[BicycleState, np.ndarray]
InputLike = Union[BicycleInput, np.ndarray]


def _state(z: StateLike) -> np.ndarray:
    return z.to_array() if isinstance(z, BicycleState) else np.asarray(z, dtype=float)


def _inputs(inp: InputLike) -> np.ndarray:
    return inp.to_array() if isinstance(inp, BicycleInput) else np.asarray(inp, dtype=float)


def terrain_vector(params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """Terrain columns of a surrogate input row: [k*, n, k, c, phi]."""
    return np.array([aggregate_modulus(params, geom), params.n, params.k, params.c, params.phi])


def _slip_angles(z: np.ndarray, delta: np.ndarray, vp: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    u, v, w = z[..., 3], z[..., 4], z[..., 5]
    return np.arctan((v + vp.lf * w) / u) - delta, np.arctan((v - vp.lr * w) / u)


def guarded_speed(u: np.ndarray) -> np.ndarray:
    """Longitudinal speed held at MIN_SLIP_SPEED in magnitude where it falls below it."""
    return np.where(np.abs(u) < MIN_SLIP_SPEED, np.copysign(MIN_SLIP_SPEED, u), u)


def guarded_slip_angles(z: np.ndarray, delta, vp: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """Slip angles with the speed frozen at MIN_SLIP_SPEED below it; never raises."""
    z = np.array(z, dtype=float)
    z[..., 3] = guarded_speed(z[..., 3])
    return _slip_angles(z, np.asarray(delta, dtype=float), vp)


def slip_quantities(z: StateLike, delta: float, vp: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Front and rear slip angles (rad).

    Raises:
        DegenerateKinematicsError: |u| < 0.5 m/s
    """
    z = _state(z)
    u = z[..., 3]
    if np.any(np.abs(u) < MIN_SLIP_SPEED):
        raise DegenerateKinematicsError(f"|u| below {MIN_SLIP_SPEED} m/s; slip angles are singular")
    alpha_f, alpha_r = _slip_angles(z, np.asarray(delta, dtype=float), vp)
    if np.ndim(alpha_f) == 0:
        return float(alpha_f), float(alpha_r)
    return alpha_f, alpha_r


def derivatives(z: StateLike, inp: InputLike, fyf, fyr, vp: VehicleParams) -> np.ndarray:
    z, inp = _state(z), _inputs(inp)
    fyf, fyr = np.asarray(fyf, dtype=float), np.asarray(fyr, dtype=float)
    if not (np.all(np.isfinite(fyf)) and np.all(np.isfinite(fyr))):
        raise ValueError("Axle lateral forces must be finite")
    psi, u, v, w = z[..., 2], z[..., 3], z[..., 4], z[..., 5]
    lateral = v + vp.lf * w
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    dz = np.empty(np.broadcast_shapes(z.shape, inp.shape[:-1] + (6,)))
    dz[..., 0] = u * cos_psi - lateral * sin_psi
    dz[..., 1] = u * sin_psi + lateral * cos_psi
    dz[..., 2] = w
    dz[..., 3] = inp[..., 0]
    dz[..., 4] = (fyf + fyr) / vp.mass - u * w
    dz[..., 5] = (fyf * vp.lf - fyr * vp.lr) / vp.yaw_inertia
    return dz


def step_euler(z: StateLike, inp: InputLike, forces: Tuple, vp: VehicleParams, dt: float) -> np.ndarray:
    """One forward Euler step: z + dt * derivatives(z, ...)."""
    if not 0.0 < dt <= MAX_STEP:
        raise ValueError(f"Euler step dt must be in (0, {MAX_STEP}] s, got {dt}")
    z = _state(z)
    return z + dt * derivatives(z, inp, forces[0], forces[1], vp)


def surrogate_rows(z: np.ndarray, inp: np.ndarray, terrain: np.ndarray, vp: VehicleParams,
                   loads: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """
    Per-tire force-model input rows, front then rear.

    Returns:
        Array of shape (2,) + batch + (10,)
    """
    z, inp, terrain = _state(z), _inputs(inp), np.asarray(terrain, dtype=float)
    front_load, rear_load = vp.axle_loads if loads is None else loads
    u = guarded_speed(z[..., 3])
    alpha_f, alpha_r = guarded_slip_angles(z, inp[..., 1], vp)
    batch = np.broadcast_shapes(z.shape[:-1], inp.shape[:-1], terrain.shape[:-1])
    rows = np.empty((2,) + batch + (10,))
    rows[..., 5:] = terrain
    rows[..., 2] = u
    rows[0, ..., 0], rows[1, ..., 0] = inp[..., 3], inp[..., 4]
    rows[0, ..., 1], rows[1, ..., 1] = alpha_f, alpha_r
    rows[0, ..., 3], rows[1, ..., 3] = front_load / 2.0, rear_load / 2.0
    rows[0, ..., 4], rows[1, ..., 4] = inp[..., 2], 0.0
    rows[..., 6] = np.clip(rows[..., 6], *N_RANGE)
    return rows


def axle_lateral_forces(z: StateLike, inp: InputLike, terrain: np.ndarray, model: ForceModel, vp: VehicleParams,
                        loads: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Front and rear axle lateral forces (N), two tires per axle.

    Args:
        z: State(s), trailing axis 6
        inp: Input(s), trailing axis 5
        terrain: [k*, n, k, c, phi], or one row per state
        model: Anything with lateral_force(rows) -> forces
        vp: Vehicle parameters
        loads: (front, rear) axle loads; static split by default

    The rear axle sees zero steering rate. Both axles go through a single
    model call.
    """
    rows = surrogate_rows(z, inp, terrain, vp, loads)
    forces = 2.0 * np.asarray(model.lateral_force(rows.reshape(-1, 10)), dtype=float).reshape(rows.shape[:-1])
    if forces.ndim == 1:
        return float(forces[0]), float(forces[1])
    return forces[0], forces[1]


def rollout(z0: StateLike, inputs: np.ndarray, terrain: np.ndarray, model: ForceModel, vp: VehicleParams,
            dt: float, substeps: int = 1, loads: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """
    Integrate the bicycle model through a sequence of held inputs.

    Args:
        z0: Initial state(s), shape batch + (6,)
        inputs: Inputs per step, shape batch + (K, 5)
        dt: Interval each input is held for

    Returns:
        States at every node, shape batch + (K + 1, 6)
    """
    z = _state(z0).copy()
    inputs = np.asarray(inputs, dtype=float)
    steps = inputs.shape[-2]
    h = dt / substeps
    trajectory = np.empty(z.shape[:-1] + (steps + 1, 6))
    trajectory[..., 0, :] = z
    for k in range(steps):
        inp = inputs[..., k, :]
        for _ in range(substeps):
            z = step_euler(z, inp, axle_lateral_forces(z, inp, terrain, model, vp, loads), vp, h)
        trajectory[..., k + 1, :] = z
    return trajectory
