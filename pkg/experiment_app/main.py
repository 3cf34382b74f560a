"""
NSDDE experiment runner - command-line entry point

Usage:
    python run_experiment.py converge --config configs/gbm_converge.yaml --threads 4

Subcommands simulate | converge | moments | check must match the config's
mode. On failure one JSON line {"error", "message", ...} goes to stderr and
the exit status is 2 for config errors, 1 for any other library error.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from experiment_app.config import MODES, load_config
from experiment_app.runner import run
from project_code.exceptions import ConfigError, NsddeError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_experiment",
        description="Tamed Euler-Maruyama experiments for neutral stochastic delay equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run a '{mode}' experiment")
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (results do not depend on it)")
        p.add_argument("--progress", action="store_true", help="show progress bars")
        p.add_argument("--log-level", default=None,
                       help="logging level (default: $NSDDE_LOG_LEVEL or WARNING)")
    return parser


def _report_error(e: Exception) -> None:
    payload = e.to_dict() if isinstance(e, NsddeError) else {"error": type(e).__name__, "message": str(e)}
    print(json.dumps(payload), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    level = (args.log_level or os.getenv("NSDDE_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config).with_threads(args.threads)
        if config.mode != args.command:
            raise ConfigError(f"config is for mode '{config.mode}', not '{args.command}'", field="mode")
        written = run(config, progress=args.progress)
    except ConfigError as e:
        _report_error(e)
        return EXIT_CONFIG
    except (NsddeError, OSError) as e:
        _report_error(e)
        return EXIT_ERROR

    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
