"""
Reference Rigid-Wheel Terramechanics Model
==========================================
Contact-arc discretization of a rigid wheel on Bekker/Janosi-Hanamoto soil:
1. Static sinkage from vertical equilibrium (bisection)
2. Bekker normal stress from local sinkage at every arc node
3. Janosi-Hanamoto shear stress from longitudinal and lateral shear displacement
4. Trapezoidal integration of node tractions into wheel-frame forces

Normal stress acts along the wheel radius: its vertical projection carries the
load, its horizontal projection is the compaction resistance. Shear acts in the
ground plane on the horizontal projection of each arc element, so the lateral
force never exceeds c*A + fz*tan(phi) for the projected contact area A.

The model is the ground truth for the plant and the target generator for
surrogate training. Every function is pure; value types are frozen.
"""

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, Union

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid

from .errors import DegenerateKinematicsError, SinkageError

ArrayLike = Union[float, np.ndarray]

DEFAULT_MESH = 128
MIN_MESH = 16
MIN_SPEED = 0.1  # m/s, slip quantities undefined below
STEERING_LEAD = 0.1  # s, alpha_eff = alpha + STEERING_LEAD * steering_rate
SINKAGE_BRACKET = 0.8  # upper bisection bound as a fraction of the radius
SINKAGE_RTOL = 1e-6
SINKAGE_MAX_ITER = 200

N_RANGE = (0.3, 1.3)


@dataclass(frozen=True)
class TerrainParams:
    """Bekker/Janosi soil description"""
    k_c: float    # cohesive modulus, N/m^(n+1)
    k_phi: float  # frictional modulus, N/m^(n+2)
    n: float      # sinkage exponent
    k: float      # shear deformation modulus, m
    c: float      # cohesion, Pa
    phi: float    # internal friction angle, rad

    def __post_init__(self):
        values = (self.k_c, self.k_phi, self.n, self.k, self.c, self.phi)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Terrain parameters must be finite: {values}")
        if self.k_phi <= 0:
            raise ValueError(f"k_phi must be positive, got {self.k_phi}")
        if self.k < 1e-4:
            raise ValueError(f"Shear deformation modulus k must be >= 1e-4 m, got {self.k}")
        if self.c < 0:
            raise ValueError(f"Cohesion must be non-negative, got {self.c}")
        if not 0 < self.phi < math.pi / 2:
            raise ValueError(f"Friction angle must lie in (0, pi/2), got {self.phi}")
        if not N_RANGE[0] <= self.n <= N_RANGE[1]:
            raise ValueError(f"Sinkage exponent must lie in {list(N_RANGE)}, got {self.n}")

    @classmethod
    def from_aggregate(cls, k_star: float, n: float, k: float, c: float, phi: float) -> "TerrainParams":
        """Canonical representative of an aggregate modulus: k_c = 0, k_phi = k*."""
        return cls(k_c=0.0, k_phi=float(k_star), n=float(n), k=float(k), c=float(c), phi=float(phi))

    def with_sinkage_exponent(self, n: float) -> "TerrainParams":
        return replace(self, n=float(n))


# Clay from the simulated terrain study; the others are common SCM soft/mid/hard sets
TERRAIN_PRESETS: Dict[str, TerrainParams] = {
    "clay": TerrainParams(k_c=13200.0, k_phi=692200.0, n=0.5, k=0.01, c=4140.0, phi=0.2269),
    "sand": TerrainParams(k_c=102e3, k_phi=5301e3, n=0.793, k=0.012, c=1.3e3, phi=math.radians(31.1)),
    "snow": TerrainParams(k_c=0.0, k_phi=0.2e6, n=1.1, k=0.01, c=0.0, phi=math.radians(30.0)),
    "mud": TerrainParams(k_c=0.0, k_phi=2e6, n=1.1, k=0.01, c=0.0, phi=math.radians(30.0)),
}


@dataclass(frozen=True)
class WheelGeometry:
    radius: float = 0.45  # m
    width: float = 0.25   # m

    def __post_init__(self):
        if not (self.radius > 0 and self.width > 0):
            raise ValueError(f"Wheel radius and width must be positive, got {self.radius}, {self.width}")


DEFAULT_GEOMETRY = WheelGeometry()


@dataclass(frozen=True)
class WheelState:
    slip_ratio: float             # -
    slip_angle: float             # rad
    longitudinal_velocity: float  # m/s
    normal_load: float            # N, per tire
    steering_rate: float = 0.0    # rad/s


@dataclass(frozen=True)
class TireForces:
    fx: float        # N, longitudinal (wheel frame), traction minus compaction resistance
    fy: float        # N, lateral (wheel frame)
    fz: float        # N, vertical
    sinkage: float   # m
    traction: float = 0.0  # N, longitudinal shear only; reacts the drive torque


def aggregate_modulus(params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY) -> float:
    """k* = k_c / b + k_phi"""
    return params.k_c / geom.width + params.k_phi


def normal_pressure(z: ArrayLike, params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY) -> ArrayLike:
    """
    Bekker pressure-sinkage law sigma = (k_c/b + k_phi) * z^n.

    Args:
        z: Sinkage in meters (scalar or array, non-negative)
        params: Soil parameters
        geom: Wheel geometry providing the plate width

    Returns:
        Normal stress in Pa with the shape of z
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0):
        raise ValueError("Sinkage must be non-negative")
    sigma = aggregate_modulus(params, geom) * np.power(z_arr, params.n)
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def shear_stress(sigma: ArrayLike, j: ArrayLike, params: TerrainParams) -> ArrayLike:
    """
    Janosi-Hanamoto shear law tau = (c + sigma*tan(phi)) * (1 - exp(-j/k)).

    The saturation factor is evaluated with expm1 so tau never exceeds the
    Mohr-Coulomb limit in floating point.
    """
    sigma_arr = np.asarray(sigma, dtype=float)
    j_arr = np.asarray(j, dtype=float)
    if np.any(sigma_arr < 0) or np.any(j_arr < 0):
        raise ValueError("Normal stress and shear displacement must be non-negative")
    tau = (params.c + sigma_arr * math.tan(params.phi)) * -np.expm1(-j_arr / params.k)
    return float(tau) if np.ndim(tau) == 0 else tau


def _contact_nodes(sinkage: float, geom: WheelGeometry, mesh: int):
    theta_e = math.acos(1.0 - sinkage / geom.radius)
    theta = np.linspace(0.0, theta_e, mesh)
    z = np.maximum(geom.radius * (np.cos(theta) - math.cos(theta_e)), 0.0)
    return theta_e, theta, z


def _vertical_load(sinkage: float, params: TerrainParams, geom: WheelGeometry, mesh: int) -> float:
    if sinkage <= 0.0:
        return 0.0
    _, theta, z = _contact_nodes(sinkage, geom, mesh)
    sigma = normal_pressure(z, params, geom)
    return geom.width * geom.radius * float(trapezoid(sigma * np.cos(theta), theta))


@lru_cache(maxsize=4096)
def static_sinkage(load: float, params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY,
                   mesh: int = DEFAULT_MESH) -> float:
    """
    Sinkage at which the integrated vertical stress balances the load.

    Args:
        load: Per-tire normal load in N (positive)
        params: Soil parameters
        geom: Wheel geometry
        mesh: Number of contact-arc nodes used for the integration

    Returns:
        Sinkage z0 in meters, z0 < radius

    Raises:
        SinkageError: load beyond the bearing capacity of the bracket, or no
            convergence within the bisection budget
    """
    if not load > 0:
        raise ValueError(f"Load must be positive, got {load}")
    upper = SINKAGE_BRACKET * geom.radius

    def residual(z: float) -> float:
        return _vertical_load(z, params, geom, mesh) - load

    if residual(upper) < 0:
        raise SinkageError(
            f"Load {load:.1f} N exceeds the bearing capacity at sinkage {upper:.3f} m "
            f"(k*={aggregate_modulus(params, geom):.0f}, n={params.n:.3f})"
        )
    try:
        root, result = optimize.bisect(residual, 0.0, upper, xtol=1e-14, maxiter=SINKAGE_MAX_ITER,
                                       full_output=True, disp=False)
    except RuntimeError as exc:
        raise SinkageError(f"Static sinkage bisection failed for load {load:.1f} N: {exc}") from exc
    if not result.converged or abs(residual(root)) > SINKAGE_RTOL * load:
        raise SinkageError(
            f"Static sinkage did not converge for load {load:.1f} N after {result.iterations} iterations"
        )
    return float(root)


def tire_forces(ws: WheelState, params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY,
                mesh: int = DEFAULT_MESH, sinkage: float = None) -> TireForces:
    """
    Integrate contact-arc stresses into wheel-frame tire forces.

    Args:
        ws: Wheel operating point
        params: Soil parameters
        geom: Wheel geometry
        mesh: Number of arc nodes from entry angle to exit (>= 16)
        sinkage: Precomputed static sinkage for ws.normal_load, if known

    Returns:
        TireForces with fx, fy, fz, sinkage and the shear-only traction
    """
    if mesh < MIN_MESH:
        raise ValueError(f"Contact mesh needs at least {MIN_MESH} nodes, got {mesh}")
    if abs(ws.longitudinal_velocity) < MIN_SPEED:
        raise DegenerateKinematicsError(
            f"|u| = {abs(ws.longitudinal_velocity):.3f} m/s is below {MIN_SPEED} m/s; slip is undefined"
        )
    z0 = static_sinkage(float(ws.normal_load), params, geom, mesh) if sinkage is None else float(sinkage)

    r, b = geom.radius, geom.width
    kappa = min(max(ws.slip_ratio, -1.0), 1.0)
    alpha_eff = ws.slip_angle + STEERING_LEAD * ws.steering_rate

    theta_e, theta, z = _contact_nodes(z0, geom, mesh)
    sigma = normal_pressure(z, params, geom)
    span = theta_e - theta
    jx = r * (span - (1.0 - kappa) * (math.sin(theta_e) - np.sin(theta)))
    jy = r * (1.0 - kappa) * span * math.tan(alpha_eff)
    j = np.hypot(jx, jy)
    tau = shear_stress(sigma, j, params)
    tau_limit = params.c + sigma * math.tan(params.phi)
    if np.any(tau > tau_limit):
        raise ArithmeticError("Shear stress exceeded the Mohr-Coulomb limit")

    safe_j = np.where(j > 0.0, j, 1.0)
    tau_x = np.where(j > 0.0, tau * jx / safe_j, 0.0)
    tau_y = np.where(j > 0.0, tau * jy / safe_j, 0.0)

    cos_t, sin_t = np.cos(theta), np.sin(theta)
    scale = b * r
    traction = scale * float(trapezoid(tau_x * cos_t, theta))
    compaction = scale * float(trapezoid(sigma * sin_t, theta))
    fy = -scale * float(trapezoid(tau_y * cos_t, theta))
    fz = scale * float(trapezoid(sigma * cos_t, theta))
    return TireForces(fx=traction - compaction, fy=fy, fz=fz, sinkage=z0, traction=traction)


def contact_area(sinkage: float, geom: WheelGeometry = DEFAULT_GEOMETRY) -> float:
    """Horizontally projected contact area b * r * sin(theta_e)."""
    theta_e = math.acos(1.0 - sinkage / geom.radius)
    return geom.width * geom.radius * math.sin(theta_e)


def shear_saturation_force(sinkage: float, fz: float, params: TerrainParams,
                           geom: WheelGeometry = DEFAULT_GEOMETRY) -> float:
    """Upper bound c*A + fz*tan(phi) on the shear force of the contact patch."""
    return params.c * contact_area(sinkage, geom) + fz * math.tan(params.phi)


def compaction_resistance(load: float, params: TerrainParams, geom: WheelGeometry = DEFAULT_GEOMETRY,
                          mesh: int = DEFAULT_MESH) -> float:
    """Horizontal projection of the normal stress at static sinkage (positive, N)."""
    z0 = static_sinkage(float(load), params, geom, mesh)
    _, theta, z = _contact_nodes(z0, geom, mesh)
    sigma = normal_pressure(z, params, geom)
    return geom.width * geom.radius * float(trapezoid(sigma * np.sin(theta), theta))


class ReferenceForceModel:
    """
    Lateral-force model backed by the contact-arc integration.

    Accepts the same 10-column rows as the surrogate network, so it can stand
    in for it inside the bicycle model, the estimator and the horizon study.
    The aggregate modulus column is decomposed as k_c = 0, k_phi = k*.
    """

    def __init__(self, geom: WheelGeometry = DEFAULT_GEOMETRY, mesh: int = DEFAULT_MESH):
        self.geom = geom
        self.mesh = mesh

    def lateral_force(self, inputs: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(inputs, dtype=float))
        forces = np.empty(rows.shape[0])
        for i, (kappa, alpha, u, load, rate, k_star, n, k, c, phi) in enumerate(rows):
            params = TerrainParams.from_aggregate(k_star, float(np.clip(n, *N_RANGE)), k, c, phi)
            ws = WheelState(kappa, alpha, u if abs(u) >= MIN_SPEED else math.copysign(MIN_SPEED, u), load, rate)
            forces[i] = tire_forces(ws, params, self.geom, self.mesh).fy
        return forces
