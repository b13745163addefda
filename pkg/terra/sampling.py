"""
Latin Hypercube Training Data
=============================
Stratified sampling of the 10-dimensional surrogate input space and
propagation of the samples through the reference terramechanics model.

Rows whose static sinkage is infeasible are redrawn inside their own stratum;
cells that stay infeasible are dropped and counted. A resample rate above 1%
raises a DataQualityWarning.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import qmc

from .errors import DataQualityWarning, SinkageError
from .io import read_manifest, read_table, write_manifest, write_table
from .terramech import (
    DEFAULT_GEOMETRY,
    DEFAULT_MESH,
    TerrainParams,
    WheelGeometry,
    WheelState,
    tire_forces,
)

logger = logging.getLogger(__name__)

INPUT_NAMES: Tuple[str, ...] = (
    "slip_ratio",
    "slip_angle",
    "longitudinal_velocity",
    "normal_load",
    "steering_rate",
    "k_star",
    "n",
    "k",
    "c",
    "phi",
)

DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "slip_ratio": (-1.0, 1.0),
    "slip_angle": (-0.6, 0.6),
    "longitudinal_velocity": (2.0, 10.0),
    "normal_load": (500.0, 5500.0),
    "steering_rate": (-0.56, 0.56),
    "k_star": (43000.0, 2080000.0),
    "n": (0.3, 1.3),
    "k": (0.01, 0.024),
    "c": (650.0, 20700.0),
    "phi": (0.105, 0.66),
}

TARGET_NAMES = ("fy", "fx", "fz")
MAX_REDRAWS = 20
RESAMPLE_WARN_RATE = 0.01


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float


@dataclass(frozen=True)
class InputSpace:
    """Ten named sampling dimensions in canonical order"""
    dimensions: Tuple[Dimension, ...]

    def __post_init__(self):
        names = tuple(d.name for d in self.dimensions)
        if names != INPUT_NAMES:
            raise ValueError(f"Input space must list {INPUT_NAMES} in order, got {names}")
        for d in self.dimensions:
            if not d.low < d.high:
                raise ValueError(f"Dimension {d.name}: min {d.low} must be below max {d.high}")

    @classmethod
    def default(cls, **overrides: Tuple[float, float]) -> "InputSpace":
        """Nominal bounds, optionally overriding individual dimensions."""
        unknown = set(overrides) - set(INPUT_NAMES)
        if unknown:
            raise ValueError(f"Unknown input dimensions: {sorted(unknown)}")
        bounds = {**DEFAULT_BOUNDS, **overrides}
        return cls(tuple(Dimension(name, float(bounds[name][0]), float(bounds[name][1])) for name in INPUT_NAMES))

    @property
    def lows(self) -> np.ndarray:
        return np.array([d.low for d in self.dimensions])

    @property
    def highs(self) -> np.ndarray:
        return np.array([d.high for d in self.dimensions])

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lows) & (x <= self.highs), axis=1)

    def to_dict(self) -> Dict[str, list]:
        return {d.name: [d.low, d.high] for d in self.dimensions}


@dataclass
class Dataset:
    """Sampled inputs with reference-model targets"""
    inputs: np.ndarray
    targets: np.ndarray
    sample_index: np.ndarray
    target_names: Tuple[str, ...] = ("fy",)
    seed: Optional[int] = None
    count: int = 0
    created_at: str = ""
    bounds: Dict[str, list] = field(default_factory=dict)
    statistics: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).reshape(self.inputs.shape[0], -1)
        self.sample_index = np.asarray(self.sample_index, dtype=int)
        if not (len(self.inputs) == len(self.targets) == len(self.sample_index)):
            raise ValueError("Dataset inputs, targets and indices must have equal row counts")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return replace(self, inputs=self.inputs[rows], targets=self.targets[rows],
                       sample_index=self.sample_index[rows], statistics=dict(self.statistics))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.inputs, columns=list(INPUT_NAMES))
        for i, name in enumerate(self.target_names):
            frame[name] = self.targets[:, i]
        frame.insert(0, "sample_index", self.sample_index)
        return frame

    def save(self, path: Path, geom: WheelGeometry = DEFAULT_GEOMETRY) -> Path:
        path = write_table(self.to_frame(), path)
        write_manifest(path, {
            "kind": "dataset",
            "seed": self.seed,
            "count": self.count,
            "rows": len(self),
            "bounds": self.bounds,
            "targets": list(self.target_names),
            "geometry": {"radius": geom.radius, "width": geom.width},
            "generated_at": self.created_at,
            "statistics": self.statistics,
        })
        logger.info(f"Saved dataset with {len(self)} rows to {path}")
        return path

    @classmethod
    def load(cls, path: Path) -> "Dataset":
        frame = read_table(path)
        manifest = read_manifest(path)
        target_names = tuple(manifest.get("targets") or [c for c in frame.columns if c in TARGET_NAMES])
        return cls(
            inputs=frame[list(INPUT_NAMES)].to_numpy(),
            targets=frame[list(target_names)].to_numpy(),
            sample_index=frame["sample_index"].to_numpy(),
            target_names=target_names,
            seed=manifest.get("seed"),
            count=manifest.get("count", len(frame)),
            created_at=manifest.get("generated_at", ""),
            bounds=manifest.get("bounds", {}),
            statistics=manifest.get("statistics", {}),
        )


def _unit_design(dim: int, count: int, seed: int) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=dim, seed=np.random.default_rng(seed))
    return sampler.random(count)


def lhs_sample(space: InputSpace, count: int, seed: int) -> np.ndarray:
    """
    Latin hypercube sample over the input space.

    Args:
        space: Bounds of the 10 dimensions
        count: Number of samples N (>= 1)
        seed: Generator seed; equal seeds give equal matrices

    Returns:
        N x 10 matrix with exactly one sample per equal-width stratum per dimension
    """
    if count < 1:
        raise ValueError(f"Sample count must be at least 1, got {count}")
    unit = _unit_design(len(space.dimensions), count, seed)
    return qmc.scale(unit, space.lows, space.highs)


def row_terrain(x: np.ndarray) -> TerrainParams:
    """Terrain of one sample row; the aggregate modulus folds into k_phi."""
    return TerrainParams.from_aggregate(k_star=x[5], n=x[6], k=x[7], c=x[8], phi=x[9])


def evaluate_row(x: np.ndarray, geom: WheelGeometry = DEFAULT_GEOMETRY, mesh: int = DEFAULT_MESH,
                 target_names: Sequence[str] = ("fy",)) -> np.ndarray:
    """Reference-model targets for one sample row."""
    ws = WheelState(slip_ratio=x[0], slip_angle=x[1], longitudinal_velocity=x[2],
                    normal_load=x[3], steering_rate=x[4])
    forces = tire_forces(ws, row_terrain(x), geom, mesh)
    return np.array([getattr(forces, name) for name in target_names])


def generate_dataset(space: InputSpace, count: int, seed: int, geom: WheelGeometry = DEFAULT_GEOMETRY,
                     target_names: Sequence[str] = ("fy",), mesh: int = DEFAULT_MESH,
                     max_workers: int = 4) -> Dataset:
    """
    Propagate a Latin hypercube design through the reference model.

    Args:
        space: Input bounds
        count: Number of samples
        seed: Design seed; (space, count, seed) determines the dataset
        geom: Wheel geometry used by the reference model
        target_names: Any of fy, fx, fz (fy is the default surrogate target)
        mesh: Contact-arc nodes
        max_workers: Thread pool size for row evaluation

    Returns:
        Dataset ordered by sample index
    """
    if count < 1:
        raise ValueError(f"Sample count must be at least 1, got {count}")
    unknown = set(target_names) - set(TARGET_NAMES)
    if unknown:
        raise ValueError(f"Unknown targets {sorted(unknown)}; choose from {TARGET_NAMES}")
    target_names = tuple(target_names)
    unit = _unit_design(len(space.dimensions), count, seed)
    cells = np.minimum(np.floor(unit * count), count - 1)
    lows, span = space.lows, space.highs - space.lows

    def build(i: int):
        x = lows + unit[i] * span
        rng = None
        for attempt in range(MAX_REDRAWS + 1):
            try:
                return i, x, evaluate_row(x, geom, mesh, target_names), attempt
            except SinkageError:
                if rng is None:
                    rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
                x = lows + (cells[i] + rng.random(len(lows))) / count * span
        return i, None, None, MAX_REDRAWS + 1

    logger.info(f"Generating {count} Latin hypercube samples (seed={seed}, targets={list(target_names)})")
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(build, range(count)))

    kept = [(i, x, y) for i, x, y, _ in results if x is not None]
    redrawn_rows = sum(1 for _, _, _, attempts in results if attempts > 0)
    redraws = sum(min(attempts, MAX_REDRAWS) for _, _, _, attempts in results)
    dropped = count - len(kept)
    statistics = {"requested": count, "rows": len(kept), "rows_redrawn": redrawn_rows,
                  "redraws": redraws, "rows_dropped": dropped}

    rate = redrawn_rows / count
    if rate > RESAMPLE_WARN_RATE:
        message = (f"{rate:.1%} of samples needed redrawing ({redrawn_rows}/{count}), "
                   f"{dropped} infeasible cells dropped")
        logger.warning(message)
        warnings.warn(message, DataQualityWarning, stacklevel=2)
    if not kept:
        raise SinkageError("No feasible sample: every stratum exceeded the bearing capacity")

    dataset = Dataset(
        inputs=np.array([x for _, x, _ in kept]),
        targets=np.array([y for _, _, y in kept]),
        sample_index=np.array([i for i, _, _ in kept]),
        target_names=target_names,
        seed=seed,
        count=count,
        created_at=datetime.now(timezone.utc).isoformat(),
        bounds=space.to_dict(),
        statistics=statistics,
    )
    logger.info(f"Dataset ready: {statistics}")
    return dataset


def split_dataset(d: Dataset, seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Disjoint 70/15/15 partition; rounding residue goes to training.

    Returns:
        (train, validation, test)
    """
    total = len(d)
    if total < 20:
        raise ValueError(f"Splitting needs at least 20 rows, got {total}")
    n_val = n_test = (15 * total) // 100
    order = np.random.default_rng(seed).permutation(total)
    n_train = total - n_val - n_test
    return (
        d.subset(np.sort(order[:n_train])),
        d.subset(np.sort(order[n_train:n_train + n_val])),
        d.subset(np.sort(order[n_train + n_val:])),
    )
