from __future__ import annotations

import logging
import logging.handlers
import sys
from pathlib import Path

from modules import argument_parsing as ap
from modules._platform import get_cache_path, get_platform
from modules.enums import ExitCode
from modules.errors import SensingError
from semver import Version

LOG_COLORS = {
    "DEBUG": "\033[36m",  # Cyan
    "INFO": "\033[37m",  # White
    "WARNING": "\033[33m",  # Yellow
    "ERROR": "\033[31m",  # Red
    "CRITICAL": "\033[41m",  # Red background
}

RESET_COLOR = "\033[0m"  # Reset to default color


class ColoredFormatter(logging.Formatter):
    def format(self, record):
        log_color = LOG_COLORS.get(record.levelname, RESET_COLOR)
        message = super().format(record)
        return f"{log_color}{message}{RESET_COLOR}"


version = Version(0, 3, 0)

# Setup logging config
_format = "[%(asctime)s:%(levelname)s] %(message)s"
cache_path = Path(get_cache_path())
if not cache_path.is_dir():
    cache_path.mkdir(parents=True)
color_formatter = ColoredFormatter(_format)

try:
    file_handler = logging.handlers.RotatingFileHandler(
        cache_path.absolute() / "usense.log",
        maxBytes=10 * 1024 * 1024,  # 10 MB
        backupCount=2,
    )
    file_handler.setFormatter(logging.Formatter(_format))
except PermissionError:
    file_handler = logging.FileHandler(cache_path.absolute() / "usense.log")

stream_handler = logging.StreamHandler(stream=sys.stderr)
stream_handler.setFormatter(color_formatter)

logging.basicConfig(
    format=_format,
    handlers=[file_handler, stream_handler],
)

logger = logging.getLogger(__name__)


# Setup exception handling
def handle_exception(exc_type, exc_value, exc_traceback):
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return

    logger.error(f"{get_platform()} - usense {version}", exc_info=(exc_type, exc_value, exc_traceback))


sys.excepthook = handle_exception


def main(argv: list[str] | None = None) -> int:
    parser, subparsers = ap.build_parser(f"Ultrasound chirp action sensing ({version})")
    args, unknown = parser.parse_known_args(argv)

    if unknown:
        ap.error(parser, "unrecognized arguments: " + " ".join(unknown))

    if args.help:
        ap.show_help(parser, subparsers, args)
        return ExitCode.SUCCESS

    if args.command is None:
        ap.error(parser, "a command is required")

    if args.workers < 1:
        ap.error(parser, "--workers must be at least 1")

    if args.debug:
        logging.root.setLevel(logging.DEBUG)
    else:
        logging.root.setLevel(logging.INFO)

    logger.debug(f"usense {version}, command {args.command}")

    from modules.cli_commands import run_command

    try:
        return int(run_command(args))
    except SensingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return int(e.exit_code)


if __name__ == "__main__":
    sys.exit(main())
