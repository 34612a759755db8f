import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from app.commands import COMMANDS
from app.errors import SymptomCoderError

# Load environment variables from .env file
load_dotenv()


def build_parser() -> argparse.ArgumentParser:
    """
    Assemble the command-line application from the command modules.
    """
    parser = argparse.ArgumentParser(
        prog="symptom-coder",
        description="Code vaccine adverse event narratives to standard symptom terms and evaluate the result",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Include commands
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    # keep request lines out of INFO output
    logging.getLogger("httpx").setLevel(logging.WARNING)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command and return its exit code.

    Errors raised by the application are printed as "Error: <detail>" and
    mapped to their exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1

    configure_logging(args.log_level)
    try:
        return asyncio.run(args.handler(args))
    except SymptomCoderError as e:
        print(f"Error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("Interrupted; rerun the same command to resume", file=sys.stderr)
        return 130
