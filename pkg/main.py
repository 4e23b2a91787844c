#!/usr/bin/env python3
"""
HRIS channel estimation toolkit - Main Application
Runs validation, power-splitting, convergence and curve sweeps from a config file
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from config import CURVE_SWEEPS, Config, load_experiment_config
from experiments import run_convergence, run_curves, run_rho_sweep, run_validate
from storage import RESULTS_SCHEMA, TRACE_SCHEMA, VALIDATION_SCHEMA, ResultStorage
from utils import setup_logging

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION_FAILED = 2

COMMAND_SWEEPS = {
    "validate": "validate",
    "rho-sweep": "rho-grid",
    "convergence": "convergence",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hris", description="HRIS uplink channel estimation experiments")
    parser.add_argument("command", choices=["validate", "rho-sweep", "convergence", "curves"])
    parser.add_argument("--config", help="experiment YAML file (default: HRIS_CONFIG or config.yaml)")
    parser.add_argument("--out", help="output directory (default: HRIS_OUTPUT_DIR or results)")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("--trials", type=int, help="Monte Carlo trials, overrides the config")
    parser.add_argument("--workers", type=int, help="worker processes (default: HRIS_WORKERS)")
    parser.add_argument("--json", action="store_true", help="also write a JSON mirror")
    return parser


def cli(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point; returns the process exit code"""
    # Load environment variables
    load_dotenv()
    args = build_parser().parse_args(argv)

    settings = Config()
    setup_logging(settings.LOG_LEVEL, settings.LOG_FILE)
    logger = logging.getLogger(__name__)

    try:
        path = args.config or settings.DEFAULT_CONFIG
        exp = load_experiment_config(path, seed=args.seed, trials=args.trials,
                                     sweep=COMMAND_SWEEPS.get(args.command))
        if args.command == "curves" and exp.sweep not in CURVE_SWEEPS:
            raise ValueError(f"curves needs sweep.kind in {', '.join(CURVE_SWEEPS)}, config has {exp.sweep}")

        workers = args.workers or settings.WORKERS
        storage = ResultStorage(args.out or settings.OUTPUT_DIR)
        logger.info(f"Starting {args.command} ({exp.sweep}) with seed {exp.seed} on {workers} worker(s)")

        if args.command == "validate":
            report = run_validate(exp, workers)
            storage.write_table(report.rows, VALIDATION_SCHEMA, exp.sweep, exp.seed, json_mirror=args.json)
            if not report.passed:
                logger.error(f"{len(report.failures)} validation check(s) failed")
                return EXIT_VALIDATION_FAILED
            logger.info("All validation checks passed")
        elif args.command == "rho-sweep":
            storage.write_table(run_rho_sweep(exp, workers), RESULTS_SCHEMA, exp.sweep, exp.seed,
                                json_mirror=args.json)
        elif args.command == "convergence":
            storage.write_table(run_convergence(exp), TRACE_SCHEMA, exp.sweep, exp.seed, json_mirror=args.json)
        else:
            storage.write_table(run_curves(exp, workers), RESULTS_SCHEMA, exp.sweep, exp.seed,
                                json_mirror=args.json)

    except Exception as e:
        logger.error(f"Application error: {str(e)}")
        return EXIT_ERROR

    return EXIT_OK


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
