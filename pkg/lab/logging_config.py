"""Logging for the lab: a rotating log under LOG_DIR, stdout, and one log file per run directory."""

import logging
import os
import sys
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from typing import Iterator

from lab.config import LOG_DIR

LONG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SHORT_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
RUN_LOG = "run.log"

# third-party loggers held at WARNING
QUIET_LOGGERS = ("mpmath",)


def _long_formatter() -> logging.Formatter:
    return logging.Formatter(LONG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


def setup_logging(level=logging.INFO, log_dir: str = LOG_DIR) -> logging.Logger:
    """
    Setup logging configuration

    Installs a rotating file handler (10 MB, 5 backups) on ``convexlab.log``
    and a stdout handler on the root logger. Existing root handlers are
    removed first, so repeated calls do not duplicate output.

    Args:
        level: The logging level
        log_dir: Directory of the rotating log file
    """
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, "convexlab.log")

    file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5)
    file_handler.setFormatter(_long_formatter())
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter(SHORT_FORMAT, datefmt="%H:%M:%S"))

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    for handler in (file_handler, console_handler):
        handler.setLevel(level)
        root_logger.addHandler(handler)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.info(f"Logging initialized. Log file: {log_file}")
    return logger


@contextmanager
def run_log(output_dir: str) -> Iterator[str]:
    """Copy every record emitted inside the block to ``output_dir/run.log``.

    The file is truncated on entry so it only holds the current run.
    """
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, RUN_LOG)
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(_long_formatter())
    root_logger = logging.getLogger()
    root_logger.addHandler(handler)
    try:
        yield path
    finally:
        root_logger.removeHandler(handler)
        handler.close()
