"""
Run configuration and logging setup.

A run is described by one JSON file parsed into the pydantic models below.
Every model forbids unknown keys, and `load_config` also builds the domain
objects once so that inconsistent values fail before any long computation.
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bicycle import VehicleParams
from .errors import ConfigError
from .plant import SENSOR_SIGMA, NoiseModel, Scenario
from .sampling import INPUT_NAMES, TARGET_NAMES, InputSpace
from .terramech import DEFAULT_MESH, MIN_MESH, TERRAIN_PRESETS, TerrainParams, WheelGeometry
from .training import TrainConfig
from .ukf import PROCESS_SCALE, UkfConfig

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once per process; LOG_LEVEL env var when no level is given."""
    name = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT, force=True)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    out_dir: str = "runs/default"
    dataset: str = "dataset.csv"
    model: str = "model.json"
    training_report: str = "training_report.csv"
    log: str = "trajectory.csv"
    measurements: str = "measurements.csv"
    estimate: str = "estimate.csv"
    reference_estimate: str = "estimate_reference.csv"
    report_dir: str = "report"

    def resolve(self, name: str) -> Path:
        """Absolute or out_dir-relative path of one artifact."""
        value = Path(getattr(self, name))
        return value if value.is_absolute() else Path(self.out_dir) / value


class TerrainConfig(_Section):
    preset: Optional[str] = "clay"
    k_c: Optional[float] = None
    k_phi: Optional[float] = None
    n: Optional[float] = None
    k: Optional[float] = None
    c: Optional[float] = None
    phi: Optional[float] = None

    @model_validator(mode="after")
    def _preset_or_values(self):
        explicit = [self.k_c, self.k_phi, self.n, self.k, self.c, self.phi]
        if self.preset is not None and self.preset not in TERRAIN_PRESETS:
            raise ValueError(f"Unknown terrain preset {self.preset!r}; choose from {sorted(TERRAIN_PRESETS)}")
        if self.preset is None and any(v is None for v in explicit):
            raise ValueError("Explicit terrain needs all of k_c, k_phi, n, k, c, phi")
        return self

    def to_params(self) -> TerrainParams:
        """Preset values, with any explicitly given field overriding the preset."""
        base = TERRAIN_PRESETS[self.preset] if self.preset else None
        values = {}
        for name in ("k_c", "k_phi", "n", "k", "c", "phi"):
            given = getattr(self, name)
            values[name] = given if given is not None else getattr(base, name)
        return TerrainParams(**values)


class GeometryConfig(_Section):
    radius: float = 0.45
    width: float = 0.25
    mesh: int = Field(DEFAULT_MESH, ge=MIN_MESH)

    def to_geometry(self) -> WheelGeometry:
        return WheelGeometry(self.radius, self.width)


class VehicleConfig(_Section):
    mass: float = 2450.0
    yaw_inertia: float = 3500.0
    lf: float = 1.4
    lr: float = 1.6

    def to_params(self) -> VehicleParams:
        return VehicleParams(self.mass, self.yaw_inertia, self.lf, self.lr)


class SamplingConfig(_Section):
    count: int = Field(10000, ge=1)
    bounds: Dict[str, Tuple[float, float]] = {}
    targets: List[str] = ["fy"]
    max_workers: int = Field(4, ge=1)
    seed: Optional[int] = None

    @field_validator("targets")
    @classmethod
    def _known_targets(cls, value: List[str]) -> List[str]:
        unknown = set(value) - set(TARGET_NAMES)
        if not value or unknown:
            raise ValueError(f"targets must be a non-empty subset of {TARGET_NAMES}")
        if "fy" not in value:
            raise ValueError("targets must include the lateral force 'fy'")
        return value

    @field_validator("bounds")
    @classmethod
    def _known_dimensions(cls, value: Dict[str, Tuple[float, float]]):
        unknown = set(value) - set(INPUT_NAMES)
        if unknown:
            raise ValueError(f"Unknown input dimensions {sorted(unknown)}; choose from {INPUT_NAMES}")
        return value

    def to_space(self) -> InputSpace:
        return InputSpace.default(**self.bounds)


class TrainingConfig(_Section):
    hidden_layers: List[int] = [35, 35, 35]
    max_epochs: int = 150
    regularization: Literal["bayesian", "fixed"] = "bayesian"
    initial_lambda: float = 0.1
    mu0: float = 1e-3
    mu_increase: float = 10.0
    mu_decrease: float = 10.0
    mu_max: float = 1e10
    patience: int = 25
    ensemble_size: int = 8
    memory_budget_mb: float = 1024.0
    learning_rate: float = 1e-3
    batch_size: int = Field(256, ge=1)
    max_workers: int = Field(4, ge=1)
    seed: Optional[int] = None

    def to_train_config(self, seed: int) -> TrainConfig:
        values = self.model_dump(exclude={"seed", "hidden_layers"})
        return TrainConfig(hidden_layers=tuple(self.hidden_layers), seed=seed if self.seed is None else self.seed,
                           **values)


class ScenarioConfig(_Section):
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
    force_model: Literal["reference", "surrogate"] = "reference"

    def to_scenario(self, seed: int) -> Scenario:
        return Scenario(seed=seed, **self.model_dump(exclude={"force_model"}))


class NoiseConfig(_Section):
    sigma: List[float] = list(SENSOR_SIGMA)
    seed: Optional[int] = None

    def to_noise_model(self, seed: int) -> NoiseModel:
        return NoiseModel(tuple(self.sigma), seed if self.seed is None else self.seed)


class EstimatorConfig(_Section):
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    dt: float = 0.02
    substeps: int = 2
    n0: float = 0.7
    initial_n_variance: float = 0.04
    process_scale: List[float] = list(PROCESS_SCALE)
    process_base: float = 1e-6
    q_n: float = 1e-6
    measurement_sigma: List[float] = list(SENSOR_SIGMA)
    force_model: Literal["surrogate", "reference"] = "surrogate"

    def to_ukf_config(self) -> UkfConfig:
        if len(self.process_scale) != 6 or len(self.measurement_sigma) != 6:
            raise ValueError("process_scale and measurement_sigma need six entries each")
        q = np.diag(np.append(self.process_base * np.asarray(self.process_scale) ** 2, self.q_n))
        r = np.diag(np.asarray(self.measurement_sigma) ** 2)
        return UkfConfig(alpha=self.alpha, beta=self.beta, kappa=self.kappa, process_noise=q, measurement_noise=r,
                         dt=self.dt, substeps=self.substeps, initial_n_variance=self.initial_n_variance)


class EvaluationConfig(_Section):
    horizon: float = Field(2.5, gt=0)
    stride: float = Field(0.1, gt=0)
    init_from: Literal["truth", "filtered"] = "truth"
    true_n: Optional[float] = None
    overlay_windows: int = Field(3, ge=0)
    benchmark_steps: int = Field(1000, ge=1)


class RunConfig(_Section):
    name: str = "run"
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    terrain: TerrainConfig = TerrainConfig()
    geometry: GeometryConfig = GeometryConfig()
    vehicle: VehicleConfig = VehicleConfig()
    sampling: SamplingConfig = SamplingConfig()
    training: TrainingConfig = TrainingConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    noise: NoiseConfig = NoiseConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @property
    def sampling_seed(self) -> int:
        return self.seed if self.sampling.seed is None else self.sampling.seed

    @property
    def noise_seed(self) -> int:
        return self.seed + 1

    def check(self) -> None:
        """Build every domain object once; raises ConfigError naming the failing section."""
        builders = {
            "terrain": self.terrain.to_params,
            "geometry": self.geometry.to_geometry,
            "vehicle": self.vehicle.to_params,
            "sampling": self.sampling.to_space,
            "training": lambda: self.training.to_train_config(self.seed),
            "scenario": lambda: self.scenario.to_scenario(self.seed),
            "noise": lambda: self.noise.to_noise_model(self.noise_seed),
            "estimator": self.estimator.to_ukf_config,
        }
        for section, build in builders.items():
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"Invalid '{section}' section: {exc}") from exc
        if not 0.3 <= self.estimator.n0 <= 1.3:
            raise ConfigError(f"Invalid 'estimator' section: n0 {self.estimator.n0} outside [0.3, 1.3]")
        if abs(self.estimator.dt - self.scenario.dt_log) > 1e-12:
            raise ConfigError(f"estimator.dt ({self.estimator.dt}) must equal scenario.dt_log ({self.scenario.dt_log})")


def load_config(path: Optional[Path] = None, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """
    Read, validate and override a run configuration.

    Args:
        path: JSON file; defaults apply when omitted
        seed: Replaces the master seed
        out: Replaces paths.out_dir

    Raises:
        ConfigError: unreadable file, unknown keys or invalid values
    """
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file {path} does not exist")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw.setdefault("paths", {})["out_dir"] = out
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors())
        raise ConfigError(f"Invalid configuration: {problems}") from exc
    cfg.check()
    return cfg
