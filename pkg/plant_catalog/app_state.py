"""Logging configuration and shared run state.

Every module logs through ``logging.getLogger(__name__)``; the CLI and the sample
scripts call :func:`configure_logging` once at startup.
"""
import logging
import sys
import time
from contextlib import contextmanager
from typing import Dict, Iterator

from colorama import Fore, Style
from colorama import init as colorama_init

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
BANNER = "=" * 70

logger = logging.getLogger("plant_catalog")

_LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Formatter that colorizes the level name."""

    def format(self, record: logging.LogRecord) -> str:
        color = _LEVEL_COLORS.get(record.levelno)
        if color is None:
            return super().format(record)
        original = record.levelname
        record.levelname = f"{color}{original}{Style.RESET_ALL}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


def configure_logging(verbose: bool = False, stream=None) -> None:
    """Install the package handler on the root logger.

    Args:
        verbose: DEBUG level instead of INFO
        stream: target stream, stderr by default
    """
    stream = stream or sys.stderr
    handler = logging.StreamHandler(stream)
    if getattr(stream, "isatty", lambda: False)():
        colorama_init()
        handler.setFormatter(ColorFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def banner(title: str) -> None:
    logger.info(BANNER)
    logger.info(title)
    logger.info(BANNER)


class StageTimer:
    """Collects wall-clock durations of named pipeline stages."""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info(f"▶ {name}")
        start = time.perf_counter()
        try:
            yield
        except Exception:
            self._record(name, start)
            logger.error(f"✗ {name} failed after {self.timings[name]:.2f}s")
            raise
        self._record(name, start)
        logger.info(f"✓ {name} finished in {self.timings[name]:.2f}s")

    def _record(self, name: str, start: float) -> None:
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start
