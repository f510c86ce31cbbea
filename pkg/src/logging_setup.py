"""
Logging setup for the REDDA toolkit.
Provides structured console logging with consistent formatting.

Python warnings are routed through logging. Numerical RuntimeWarnings from
numpy/scipy (overflow in a failed random start, a singular trial
covariance) are only shown at DEBUG level.
"""

import logging
import sys
from typing import Optional, Union

LOG_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def resolve_level(level: Optional[Union[int, str]]) -> int:
    """Numeric level from a level or level name; unknown names give INFO."""
    if level is None:
        return logging.INFO
    if isinstance(level, str):
        level = logging.getLevelName(level.strip().upper())
    return level if isinstance(level, int) else logging.INFO


def setup_logging(level: Optional[Union[int, str]] = logging.INFO) -> None:
    """Set up console logging on stderr so reports on stdout stay parseable.

    Args:
        level: Logging level or level name (default: logging.INFO)
    """
    level = resolve_level(level)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    root_logger.addHandler(console_handler)

    logging.captureWarnings(True)
    logging.getLogger('py.warnings').setLevel(logging.WARNING if level <= logging.DEBUG else logging.ERROR)

    logging.debug(f"Logging setup complete at {logging.getLevelName(level)}")
