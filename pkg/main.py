#!/usr/bin/env python3
"""
Rajchman Lab - Main Application
Command-line driver for sampling, Fourier tables, normality diagnostics,
DEL sums and the lemma suites.
"""

import argparse
import logging
import sys
from typing import List, Optional

from config import Config
from fourier_cache import FourierCache
from handlers.command_handlers import HANDLERS, CommandOutcome
from utils import ConfigurationError, LabError, safe_execute

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

CACHED_COMMANDS = ("fourier", "del", "verify-lemmas")


def setup_logging(config: Config):
    """Route logs to stderr (and an optional file) so report files stay reproducible."""
    logging.basicConfig(
        level=getattr(logging, config.logging.level.upper()),
        format=config.logging.format_string,
        handlers=[
            logging.FileHandler(config.logging.file_path) if config.logging.file_path else logging.NullHandler(),
            logging.StreamHandler(sys.stderr) if config.logging.enable_console else logging.NullHandler(),
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    # flags may appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="64-bit master seed")
    common.add_argument("--tol", type=float, help="absolute tolerance of every mu_hat value")
    common.add_argument("--threads", type=int, help="worker pool size for frequency grids")
    common.add_argument("--out", metavar="DIR", help="report directory")
    common.add_argument("--format", choices=("csv", "json"), help="table format")

    parser = argparse.ArgumentParser(prog="rajchman-lab", description=__doc__.strip().splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        sub.add_parser(name, parents=[common])
    return parser


class LabApplication:
    """One command run: configuration, cache lifetime and exit status."""

    def __init__(self, config: Config):
        self.config = config
        self.cache: Optional[FourierCache] = None

    def _open_cache(self):
        self.cache = FourierCache(self.config.output.cache_path)
        self.cache.load()

    def _close_cache(self):
        if self.cache is None:
            return
        safe_execute(self.cache.flush, default_return=0)
        logger.info(f"Cache: {self.cache.hits} hits, {self.cache.misses} misses, {len(self.cache)} entries")

    def run(self, command: str) -> int:
        logger.info(f"🚀 Starting {command} (config {self.config.config_hash()[:12]})")
        try:
            if command in CACHED_COMMANDS:
                self._open_cache()
            outcome: CommandOutcome = HANDLERS[command](self.config, self.cache)
        except ConfigurationError as e:
            logger.error(f"Configuration error: {e}")
            return EXIT_USAGE
        except LabError as e:
            logger.error(f"{command} failed: {e}")
            return EXIT_FAILED
        except Exception as e:
            logger.critical(f"Unexpected error in {command}: {e}", exc_info=True)
            return EXIT_FAILED
        finally:
            self._close_cache()

        if outcome.passed:
            logger.info(f"✅ {command} finished: all checks passed")
            return EXIT_OK
        logger.error(f"❌ {command} finished: a check failed")
        return EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    try:
        config = Config(getattr(args, "config", None))
        config.apply_overrides(**{name: getattr(args, name, None)
                                  for name in ("seed", "tol", "threads", "out", "format")})
    except ConfigurationError as e:
        logging.basicConfig(level=logging.ERROR, stream=sys.stderr)
        logger.error(str(e))
        return EXIT_USAGE
    setup_logging(config)
    return LabApplication(config).run(args.command)


if __name__ == "__main__":
    sys.exit(main())
