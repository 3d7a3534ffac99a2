"""
Command-line entry point for the Galerkin eigenvector laboratory.
Parses the study configuration, runs the requested study and reports the outcome.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from app.config import settings
from app.models.schemas import StudyConfig
from app.services.study_service import StudyService
from app.utils.errors import LabError

logger = logging.getLogger(__name__)

# subcommand -> study kind
COMMANDS: Dict[str, str] = {
    "spectral-study": "spectral",
    "bounded-study": "bounded",
    "krylov-study": "krylov",
    "sep-bench": "sep",
    "selftest": "selftest",
}


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per study kind."""
    parser = argparse.ArgumentParser(
        prog="galerkin-lab",
        description="Convergence studies for Galerkin eigenvector approximations",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, kind in COMMANDS.items():
        sub = subparsers.add_parser(command, help=f"run the {kind} study")
        sub.add_argument("--config", type=Path, help="JSON study configuration")
        sub.add_argument("--out", help="output directory (default: config out_dir)")
        sub.add_argument("--jobs", type=int, help="rows run concurrently")
        sub.add_argument("--seed", type=int, help="base random seed")
        sub.add_argument("--format", choices=("csv", "json"), help="records file format")
        verbosity = sub.add_mutually_exclusive_group()
        verbosity.add_argument("--verbose", action="store_true", help="log at DEBUG level")
        verbosity.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure logging; ENV picks the default level."""
    level = logging.INFO if settings.ENV == "production" else logging.DEBUG
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def load_config(args: argparse.Namespace, kind: str) -> StudyConfig:
    """
    Read the JSON configuration and apply command-line overrides.

    Raises:
        ValidationError: If the document violates the StudyConfig constraints
        OSError: If the file cannot be read
    """
    document = {}
    if args.config is not None:
        document = json.loads(args.config.read_text(encoding="utf-8"))
    if kind != "selftest":
        document["kind"] = kind
    document.setdefault("seed", settings.DEFAULT_SEED)
    document.setdefault("jobs", settings.DEFAULT_JOBS)
    document.setdefault("quadrature_order", settings.QUADRATURE_ORDER)
    document.setdefault("radius_factor", settings.CONTOUR_RADIUS_FACTOR)
    document.setdefault("h_ref", settings.get_h_ref())
    document.setdefault("h_list", settings.get_h_list())

    overrides = {"out_dir": args.out, "jobs": args.jobs, "seed": args.seed, "format": args.format}
    document.update({key: value for key, value in overrides.items() if value is not None})
    return StudyConfig.model_validate(document)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 when every asserted check passed, 1 when a check or row failed,
        2 when the study could not run
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    kind = COMMANDS[args.command]

    try:
        config = load_config(args, kind)
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        return 2

    try:
        summary = StudyService().run_study(config, kind)
    except LabError as e:
        logger.error(f"{kind} study aborted: {e}")
        return 2
    except Exception as e:
        logger.error(f"Unexpected error in {kind} study: {e}", exc_info=True)
        return 2

    for check in summary.checks:
        status = "PASS" if check.passed else ("FAIL" if check.asserted else "note")
        logger.info(f"[{status}] {check.name}: value={check.value} {check.detail}")
    for failure in summary.failures:
        logger.warning(f"Row failure: {failure}")
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
