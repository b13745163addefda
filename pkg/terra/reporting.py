"""
Run Report
==========
Tables, figures and an HTML summary of an estimation run:

1. Convergence table: initial guess, converged n-hat and error per force model
2. Horizon table: per-state prediction MSE for each candidate n
3. n-hat versus time with a two-sigma band
4. Plant versus model lateral forces
5. True path overlaid with horizon predictions
6. report.html tying the above together
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

import matplotlib
import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader, select_autoescape

from . import __version__
from .bicycle import STATE_NAMES
from .errors import ReportInputError
from .evaluation import ForceComparison, HorizonResult
from .io import write_manifest, write_table
from .plant import TrajectoryLog
from .ukf import EstimateTrace

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

TABLE_FORMAT = "%.12g"
TEMPLATE_DIR = Path(__file__).parent / "templates"


@dataclass
class ReportArtifacts:
    tables: Dict[str, Path] = field(default_factory=dict)
    figures: Dict[str, Path] = field(default_factory=dict)
    html: Optional[Path] = None


def convergence_table(traces: Dict[str, EstimateTrace], true_n: Optional[float]) -> pd.DataFrame:
    rows = []
    for label, trace in traces.items():
        if len(trace) == 0:
            raise ReportInputError(f"Estimate trace '{label}' is empty")
        final = trace.final_n
        rows.append({
            "model": label,
            "n0": trace.n0,
            "final_n": final,
            "true_n": np.nan if true_n is None else true_n,
            "error_pct": np.nan if true_n is None else 100.0 * abs(final - true_n) / true_n,
            "final_std": float(np.sqrt(trace.variances[-1, 6])),
            "samples": len(trace),
        })
    return pd.DataFrame(rows)


def horizon_table(results: Dict[str, HorizonResult]) -> pd.DataFrame:
    if not results:
        raise ReportInputError("No horizon results to tabulate")
    frame = pd.DataFrame({"state": list(STATE_NAMES)})
    for label, result in results.items():
        frame[label] = result.mse
    return frame


def plot_estimate(traces: Dict[str, EstimateTrace], true_n: Optional[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, trace in traces.items():
        std = np.sqrt(np.maximum(trace.variances[:, 6], 0.0))
        line, = ax.plot(trace.time, trace.n_hat, label=f"n-hat ({label})")
        ax.fill_between(trace.time, trace.n_hat - 2 * std, trace.n_hat + 2 * std, color=line.get_color(), alpha=0.15)
    if true_n is not None:
        ax.axhline(true_n, color="k", linestyle="--", label=f"true n = {true_n:g}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("sinkage exponent")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_forces(comparison: ForceComparison, path: Path) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for i, (ax, axle) in enumerate(zip(axes, ("front", "rear"))):
        ax.plot(comparison.time, comparison.truth[:, i], label="plant", linewidth=1.2)
        ax.plot(comparison.time, comparison.predicted[:, i], label="model", linewidth=1.0, linestyle="--")
        ax.set_ylabel(f"{axle} F_y per tire (N)")
        ax.grid(True, alpha=0.3)
    axes[0].set_title(f"Lateral force, RMSE {comparison.rmse:.1f} N")
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectories(log: TrajectoryLog, results: Dict[str, HorizonResult], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.plot(log.states[:, 0], log.states[:, 1], color="k", linewidth=1.5, label="plant")
    for label, result in results.items():
        first = True
        for start, trajectory in sorted(result.trajectories.items()):
            ax.plot(trajectory[:, 0], trajectory[:, 1], linestyle="--", linewidth=1.0,
                    label=label if first else None, color=f"C{list(results).index(label)}")
            first = False
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_html(context: Dict, path: Path) -> Path:
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), autoescape=select_autoescape(["html"]))
    html = env.get_template("report.html").render(**context)
    path.write_text(html, encoding="utf-8")
    return path


def build_report(out_dir: Path, log: TrajectoryLog, traces: Dict[str, EstimateTrace],
                 horizon: Dict[str, HorizonResult], forces: Optional[ForceComparison] = None,
                 true_n: Optional[float] = None, extra: Optional[Dict] = None) -> ReportArtifacts:
    """
    Write tables, figures and report.html into out_dir.

    Raises:
        ReportInputError: no estimate trace, an empty trace, or no horizon results
    """
    if not traces:
        raise ReportInputError("A report needs at least one estimate trace")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = ReportArtifacts()

    convergence = convergence_table(traces, true_n)
    horizon_frame = horizon_table(horizon)
    artifacts.tables["convergence"] = write_table(convergence, out_dir / "convergence.csv", TABLE_FORMAT)
    artifacts.tables["horizon_mse"] = write_table(horizon_frame, out_dir / "horizon_mse.csv", TABLE_FORMAT)
    if forces is not None:
        artifacts.tables["forces"] = write_table(forces.to_frame(), out_dir / "forces.csv", TABLE_FORMAT)
    for name, table in artifacts.tables.items():
        write_manifest(table, {"kind": f"report-{name}", "true_n": true_n})

    artifacts.figures["estimate"] = plot_estimate(traces, true_n, out_dir / "estimate.png")
    if forces is not None:
        artifacts.figures["forces"] = plot_forces(forces, out_dir / "forces.png")
    if any(result.trajectories for result in horizon.values()):
        artifacts.figures["trajectories"] = plot_trajectories(log, horizon, out_dir / "trajectories.png")

    context = {
        "version": __version__,
        "generated_at": datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC"),
        "convergence": convergence.to_dict(orient="records"),
        "horizon_columns": list(horizon),
        "horizon_rows": horizon_frame.to_dict(orient="records"),
        "force_rmse": None if forces is None else forces.rmse,
        "figures": {name: p.name for name, p in artifacts.figures.items()},
        "tables": {name: p.name for name, p in artifacts.tables.items()},
        "extra": extra or {},
    }
    artifacts.html = render_html(context, out_dir / "report.html")
    logger.info(f"Report written to {out_dir} ({len(artifacts.tables)} tables, {len(artifacts.figures)} figures)")
    return artifacts
