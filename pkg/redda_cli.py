#!/usr/bin/env python3
"""
REDDA Toolkit Entry Point
Handles start-up, command module loading and top-level error reporting.
"""

import argparse
import importlib
import logging
import sys
import time
from typing import Any, Callable, Dict, List, Optional

from dotenv import load_dotenv

from src import __version__
from src.commands.common import resolve_settings
from src.config import Config
from src.errors import DataIOError, ReddaError, ValidationError
from src.logging_setup import setup_logging
from src.reports import write_report

Handler = Callable[[Dict[str, Any]], Dict[str, Any]]

COMMAND_MODULES = (
    "src.commands.fitting",
    "src.commands.selection",
    "src.commands.simulation",
)


class CliArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors are validation errors."""

    def error(self, message: str) -> None:
        raise ValidationError(message)


class ReddaCli:
    """Command-line application with pluggable command modules."""

    def __init__(self) -> None:
        self.parser = CliArgumentParser(
            prog="redda",
            description="Robust discriminant analysis and robust variable selection",
        )
        self.parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
        self.parser.add_argument("--log-level", dest="log_level", help="Logging level (default: REDDA_LOG_LEVEL)")
        self.subparsers = self.parser.add_subparsers(dest="command", metavar="command")
        self.subparsers.required = True
        self.commands: Dict[str, Handler] = {}

    def load_extension(self, name: str) -> None:
        module = importlib.import_module(name)
        module.setup(self)

    def load_extensions(self) -> None:
        for name in COMMAND_MODULES:
            self.load_extension(name)
            logging.debug(f"Loaded {name.rsplit('.', 1)[-1]} commands")

    def add_command(self, name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        parser = self.subparsers.add_parser(name, help=help_text, description=help_text)
        parser.set_defaults(handler=handler)
        self.commands[name] = handler
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        if args.log_level:
            setup_logging(args.log_level)
        settings = resolve_settings(args)

        started = time.perf_counter()
        report = args.handler(settings)
        if settings.get("timing"):
            report["timing"] = {"seconds": time.perf_counter() - started}

        write_report(report, settings.get("out"))
        logging.info(f"{args.command} finished")
        return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the toolkit."""
    # Load environment variables from .env file in current directory
    load_dotenv()

    try:
        Config.reload()
        setup_logging(Config.LOG_LEVEL)
        Config.validate()
        cli = ReddaCli()
        cli.load_extensions()
        return cli.run(argv)
    except ReddaError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {DataIOError.category}: {e}", file=sys.stderr)
        return DataIOError.exit_code
    except KeyboardInterrupt:
        logging.info("Stopped by user (KeyboardInterrupt)")
        return 130


if __name__ == "__main__":
    sys.exit(main())
