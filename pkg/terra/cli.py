"""
terra command line.

    terra gen-data|train|simulate|estimate|evaluate|report|benchmark|run
          --config <file> [--seed N] [--out DIR] [--log-level LEVEL]

Exit status 0 on success, 2 for configuration or missing-input problems,
1 for runtime failures.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import __version__, pipeline
from .config import configure_logging, load_config
from .errors import ConfigError, ModelFileError, ReportInputError, TerraError

logger = logging.getLogger(__name__)

COMMANDS = {
    "gen-data": "Sample the input space and write the training dataset",
    "train": "Train the surrogate ensemble and keep the best network",
    "simulate": "Run the plant scenario and write the trajectory log and measurements",
    "estimate": "Run the sinkage-exponent filter over the logged measurements",
    "evaluate": "Score prediction horizons and lateral-force fidelity",
    "report": "Write tables, figures and report.html",
    "benchmark": "Time filter steps and network calls",
    "run": "gen-data, train, simulate, estimate and report in one go",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="terra", description="Terramechanics surrogate and sinkage estimation")
    parser.add_argument("--version", action="version", version=f"terra {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        cmd.add_argument("--config", help="JSON run configuration")
        cmd.add_argument("--seed", type=int, help="Override the master seed")
        cmd.add_argument("--out", help="Override the output directory")
        cmd.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default: $LOG_LEVEL or INFO)")
        if name == "estimate":
            cmd.add_argument("--force-model", choices=["surrogate", "reference"], default=None,
                             help="Lateral-force model inside the filter (default from config)")
    return parser


def _summary(command: str, result) -> str:
    if command == "gen-data":
        return f"Dataset: {len(result)} rows ({result.statistics})"
    if command == "train":
        _, report = result
        return f"Selected member {report.selected}, validation MSE {report.best.val_mse:.6g} N^2"
    if command == "simulate":
        log, _ = result
        return f"Trajectory: {len(log)} samples over {log.time[-1]:.2f} s"
    if command == "estimate":
        return f"Final n-hat: {result.final_n:.4f}"
    if command in ("evaluate", "benchmark"):
        return json.dumps(result, indent=2, default=str)
    return f"Report: {result.html}"


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        handlers = {
            "gen-data": pipeline.gen_data,
            "train": pipeline.train_model,
            "simulate": pipeline.simulate_run,
            "estimate": lambda c: pipeline.estimate_run(c, args.force_model),
            "evaluate": pipeline.evaluate_run,
            "report": pipeline.report_run,
            "benchmark": pipeline.benchmark_run,
            "run": pipeline.run_all,
        }
        result = handlers[args.command](cfg)
    except (ConfigError, ReportInputError, ModelFileError, ValueError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TerraError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(_summary(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
