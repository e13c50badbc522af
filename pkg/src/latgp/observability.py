"""Structured logging for command runs and pipeline stages."""

import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from loguru import logger


def configure_logging(default_log_dir: Path | None = None) -> None:
    """Send searchable JSON logs to stderr and, when configured, rotating files."""
    logger.remove()
    level = os.getenv("LATGP_LOG_LEVEL", "INFO").upper()
    logger.add(
        sys.stderr,
        level=level,
        serialize=True,
        backtrace=False,
        diagnose=False,
    )
    log_dir = os.getenv("LATGP_LOG_DIR") or default_log_dir
    if log_dir is None:
        return
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    logger.add(
        log_dir / "latgp.jsonl",
        level=level,
        serialize=True,
        rotation="1 day",
        retention="14 days",
        compression="gz",
        enqueue=True,
        backtrace=False,
        diagnose=False,
    )


@contextmanager
def log_stage(event: str, **fields) -> Iterator[None]:
    """Log one completion or failure event for a pipeline stage."""
    started = time.perf_counter()
    with logger.contextualize(event=event, **fields):
        try:
            yield
        except Exception:
            logger.bind(
                elapsed_ms=round((time.perf_counter() - started) * 1000, 2),
            ).exception(f"{event}_failed")
            raise
        logger.bind(
            elapsed_ms=round((time.perf_counter() - started) * 1000, 2),
        ).info(f"{event}_completed")
