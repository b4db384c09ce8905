import logging
import sys
from typing import Optional, Sequence

from src.infrastructure.config import gcloud_logging_enabled, get_log_level
from src.shared.errors import GazeNetError

EXIT_OK = 0
EXIT_USAGE = 1


def setup_logging() -> logging.Logger:
    """Configure logging for the application; logs go to stderr."""
    log_level = get_log_level()

    formatter = logging.Formatter(
        fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # Reduce noise from third-party libraries
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("numexpr").setLevel(logging.WARNING)
    logging.getLogger("urllib3").setLevel(logging.WARNING)

    logger = logging.getLogger("gazenet")
    if gcloud_logging_enabled():
        try:
            from google.cloud import logging as gcloud_logging  # type: ignore
            gcloud_logging.Client().setup_logging()
            logger.info("Google Cloud Logging enabled")
        except Exception as e:
            logger.warning(f"Failed to setup Google Cloud Logging: {e}")
    return logger


def _describe(exc: BaseException) -> str:
    notes = getattr(exc, "__notes__", None) or []
    return "; ".join([str(exc)] + list(notes))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one gazenet command and return its process exit code."""
    from src.app.cli.commands import build_parser

    logger = setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        args.func(args)
    except GazeNetError as exc:
        logger.error(f"{type(exc).__name__}: {_describe(exc)}")
        return exc.exit_code
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
