"""
log_config.py

Structured logging setup for the CLI and long-running experiments.

Every module logs through `logging.getLogger(__name__)`; this module only wires
the handlers. Records are emitted as JSON lines (python-json-logger), with the
structured `extra=` fields (epoch, batch, set sizes, losses, accuracies)
promoted to top-level keys.

Logs never enter the emitted report files.

Public API
----------
- configure_logging(level="INFO", log_file=None) -> logging.Logger
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

from pythonjsonlogger.json import JsonFormatter

from ..config import LOGS_DIR

ROOT_LOGGER_NAME = "src"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO", log_file: str | Path | None = None) -> logging.Logger:

    """

    Attach a JSON stderr handler (and optionally a JSON file handler) to the
    package logger. Safe to call more than once: previous handlers are replaced.

    Args:
        level:
            Logging level name.
        log_file:
            File name or path. Relative paths are placed under LOGS_DIR.

    Returns:
        The configured package logger.

    """

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(level.upper())
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = JsonFormatter(LOG_FORMAT, rename_fields={"levelname": "level", "asctime": "ts"})

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    if log_file is not None:
        path = Path(log_file)
        if not path.is_absolute():
            path = LOGS_DIR / path
        path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(path, encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger
