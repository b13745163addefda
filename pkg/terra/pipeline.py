"""
Command bodies shared by the CLI and the HTTP service.

Each function takes a validated RunConfig, reads the artifacts earlier
commands wrote under paths.out_dir, and writes its own artifacts with
sidecar manifests.
"""

import logging
import time
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .bicycle import STATE_NAMES, ForceModel
from .config import RunConfig
from .errors import ConfigError, FilterError
from .evaluation import HorizonResult, benchmark, force_rmse, horizon_mse
from .io import read_table, write_json, write_manifest, write_table
from .plant import TrajectoryLog, add_noise, measurements_frame, simulate
from .reporting import ReportArtifacts, build_report
from .sampling import Dataset, generate_dataset
from .surrogate import Mlp, load, save
from .terramech import ReferenceForceModel
from .training import TrainingReport, train
from .ukf import EstimateTrace, run_estimator

logger = logging.getLogger(__name__)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} does not exist; run `terra {producer}` first")
    return path


def load_model(cfg: RunConfig) -> Mlp:
    return load(_require(cfg.paths.resolve("model"), "train"))


def force_model(cfg: RunConfig, kind: Optional[str] = None) -> ForceModel:
    kind = kind or cfg.estimator.force_model
    if kind == "reference":
        return ReferenceForceModel(cfg.geometry.to_geometry(), cfg.geometry.mesh)
    return load_model(cfg)


def load_log(cfg: RunConfig) -> Tuple[TrajectoryLog, np.ndarray]:
    log = TrajectoryLog.load(_require(cfg.paths.resolve("log"), "simulate"))
    frame = read_table(_require(cfg.paths.resolve("measurements"), "simulate"))
    return log, frame[list(STATE_NAMES)].to_numpy(dtype=float)


def estimate_path(cfg: RunConfig, kind: str) -> Path:
    return cfg.paths.resolve("reference_estimate" if kind == "reference" else "estimate")


def gen_data(cfg: RunConfig) -> Dataset:
    dataset = generate_dataset(
        cfg.sampling.to_space(),
        cfg.sampling.count,
        cfg.sampling_seed,
        cfg.geometry.to_geometry(),
        cfg.sampling.targets,
        cfg.geometry.mesh,
        cfg.sampling.max_workers,
    )
    dataset.save(cfg.paths.resolve("dataset"), cfg.geometry.to_geometry())
    return dataset


def train_model(cfg: RunConfig) -> Tuple[Mlp, TrainingReport]:
    dataset = Dataset.load(_require(cfg.paths.resolve("dataset"), "gen-data"))
    model, report = train(dataset, cfg.training.to_train_config(cfg.seed))
    save(model, cfg.paths.resolve("model"))
    table = write_table(report.to_frame(), cfg.paths.resolve("training_report"))
    write_manifest(table, {"kind": "training-report", "selected": report.selected, "layer_sizes": report.layer_sizes,
                           "split_sizes": report.split_sizes, "dataset_sha256": report.dataset_sha256,
                           "statistics": report.statistics})
    return model, report


def simulate_run(cfg: RunConfig) -> Tuple[TrajectoryLog, np.ndarray]:
    lateral = load_model(cfg) if cfg.scenario.force_model == "surrogate" else None
    log = simulate(cfg.scenario.to_scenario(cfg.seed), cfg.terrain.to_params(), cfg.geometry.to_geometry(),
                   cfg.vehicle.to_params(), cfg.geometry.mesh, lateral_model=lateral)
    log.save(cfg.paths.resolve("log"))
    noise = cfg.noise.to_noise_model(cfg.noise_seed)
    measured = add_noise(log, noise)
    path = write_table(measurements_frame(log, measured), cfg.paths.resolve("measurements"))
    write_manifest(path, {"kind": "measurements", "sigma": list(noise.sigma), "seed": noise.seed})
    return log, measured


def estimate_run(cfg: RunConfig, kind: Optional[str] = None) -> EstimateTrace:
    kind = kind or cfg.estimator.force_model
    log, measured = load_log(cfg)
    model = force_model(cfg, kind)
    path = estimate_path(cfg, kind)
    try:
        trace = run_estimator(log, cfg.estimator.to_ukf_config(), model, cfg.terrain.to_params(),
                              cfg.estimator.n0, measured, cfg.vehicle.to_params(), cfg.geometry.to_geometry())
    except FilterError as exc:
        if exc.trace is not None and len(exc.trace):
            exc.trace.meta["force_model"] = kind
            exc.trace.save(path.with_name(f"{path.stem}.partial{path.suffix}"))
        raise
    trace.meta["force_model"] = kind
    trace.save(path)
    return trace


def _true_n(cfg: RunConfig, log: TrajectoryLog) -> float:
    if cfg.evaluation.true_n is not None:
        return cfg.evaluation.true_n
    return float(log.meta.get("terrain", {}).get("n", cfg.terrain.to_params().n))


def _horizon_studies(cfg: RunConfig, log: TrajectoryLog) -> Tuple[Dict[str, EstimateTrace], Dict[str, HorizonResult]]:
    traces = {"surrogate": EstimateTrace.load(_require(estimate_path(cfg, "surrogate"), "estimate"))}
    reference_path = estimate_path(cfg, "reference")
    if reference_path.exists():
        traces["reference"] = EstimateTrace.load(reference_path)

    terrain, vp, geom = cfg.terrain.to_params(), cfg.vehicle.to_params(), cfg.geometry.to_geometry()
    ev = cfg.evaluation
    keep = ()
    if ev.overlay_windows:
        steps = int(round(ev.horizon / log.dt))
        keep = tuple(int(k) for k in np.linspace(0, max(len(log) - steps - 1, 0), ev.overlay_windows).astype(int))
    stride_steps = max(int(round(ev.stride / log.dt)), 1)
    keep = tuple(k - k % stride_steps for k in keep)

    results: Dict[str, HorizonResult] = {}
    for label, trace in traces.items():
        model = force_model(cfg, label)
        initial = None
        if ev.init_from == "filtered":
            if len(trace) != len(log):
                raise ConfigError("Filtered-state windows need an estimate trace covering the whole log")
            initial = trace.means[:, :6]
        candidates = [(f"{label} n0={cfg.estimator.n0:g}", cfg.estimator.n0),
                      (f"{label} n_hat={trace.final_n:.4f}", trace.final_n)]
        for name, n_value in candidates:
            results[name] = horizon_mse(log, model, n_value, terrain, vp, geom, ev.horizon, ev.stride,
                                        initial_states=initial, keep=keep)
    return traces, results


def evaluate_run(cfg: RunConfig) -> Dict[str, object]:
    log, _ = load_log(cfg)
    traces, results = _horizon_studies(cfg, log)
    comparison = force_rmse(log, load_model(cfg), cfg.terrain.to_params(), cfg.vehicle.to_params(),
                            cfg.geometry.to_geometry())
    summary = {
        "true_n": _true_n(cfg, log),
        "final_n": {label: trace.final_n for label, trace in traces.items()},
        "horizon": cfg.evaluation.horizon,
        "stride": cfg.evaluation.stride,
        "init_from": cfg.evaluation.init_from,
        "windows": next(iter(results.values())).windows,
        "horizon_mse": {label: result.as_dict() for label, result in results.items()},
        "force_rmse": comparison.rmse,
    }
    write_json(summary, Path(cfg.paths.out_dir) / "evaluation.json")
    return summary


def report_run(cfg: RunConfig) -> ReportArtifacts:
    log, _ = load_log(cfg)
    traces, results = _horizon_studies(cfg, log)
    comparison = force_rmse(log, load_model(cfg), cfg.terrain.to_params(), cfg.vehicle.to_params(),
                            cfg.geometry.to_geometry())
    extra = {"config": cfg.name, "seed": cfg.seed, "horizon_s": cfg.evaluation.horizon,
             "stride_s": cfg.evaluation.stride, "windows_from": cfg.evaluation.init_from}
    return build_report(cfg.paths.resolve("report_dir"), log, traces, results, comparison, _true_n(cfg, log), extra)


def benchmark_run(cfg: RunConfig) -> Dict[str, float]:
    log, measured = load_log(cfg)
    result = benchmark(log, load_model(cfg), cfg.terrain.to_params(), cfg.estimator.to_ukf_config(),
                       cfg.estimator.n0, cfg.evaluation.benchmark_steps, cfg.vehicle.to_params(),
                       cfg.geometry.to_geometry(), measured)
    write_json(result, Path(cfg.paths.out_dir) / "benchmark.json")
    return result


def run_all(cfg: RunConfig) -> ReportArtifacts:
    """gen-data, train, simulate, estimate and report in sequence."""
    started = time.perf_counter()
    gen_data(cfg)
    train_model(cfg)
    simulate_run(cfg)
    estimate_run(cfg, "surrogate")
    artifacts = report_run(cfg)
    logger.info(f"Pipeline finished in {time.perf_counter() - started:.1f}s")
    return artifacts
