import argparse
import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from triggerless import __version__
from triggerless.commands import adversary, evaluate, plan, sweep, train
from triggerless.core.exceptions import ConfigError, TriggerlessError
from triggerless.core.logging import configure_logging

logger = structlog.get_logger(__name__)


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 like config errors, not argparse's 2
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="triggerless",
        description="Triggerless dropout-backdoor laboratory: train, attack, evaluate, sweep, plan.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="override TLBD_LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", help="JSON log lines on stderr")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command in (train, evaluate, sweep, plan, adversary):
        command.register(subparsers)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level, True if args.log_json else None)
        return args.handler(args)
    except ValidationError as e:
        logger.error("invalid_config", errors=e.error_count())
        print(f"❌ invalid configuration:\n{e}", file=sys.stderr)
        return ConfigError.exit_code
    except TriggerlessError as e:
        logger.error("command_failed", error=type(e).__name__, detail=e.detail)
        print(f"❌ {e.detail}", file=sys.stderr)
        return e.exit_code
