"""
Logging service for kronvb.

Console output goes to stderr so stdout stays free for CLI results. A
process-wide rotating file under the log directory is optional; every
harness run additionally gets its own ``run.log`` next to its tables.
"""
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from loguru import logger

from kronvb.config import settings

RUN_LOG_NAME = "run.log"

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[run]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)

# run sinks carry no colour markup and no source location
RUN_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {message}"


def setup_logger(level: str = settings.LOG_LEVEL, to_file: bool = settings.LOG_TO_FILE):
    """
    Configure the library logger.

    Args:
        level: Minimum level for the console and the shared log file
        to_file: Also write a rotating ``kronvb.log`` under the log directory

    Returns:
        The configured loguru logger
    """
    logger.remove()
    # records outside a harness run are tagged "-"
    logger.configure(extra={"run": "-"})

    logger.add(
        sys.stderr,
        format=LOG_FORMAT,
        level=level,
        colorize=True,
        backtrace=True,
        diagnose=False,
    )

    if to_file:
        log_dir = settings.log_dir
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_dir / "kronvb.log",
            format=LOG_FORMAT,
            level=level,
            rotation="10 MB",
            retention="7 days",
            compression="zip",
            backtrace=True,
            diagnose=False,
            enqueue=True,
        )

    return logger


@contextmanager
def run_log(out: Path, run: str, level: str = "DEBUG") -> Iterator[Path]:
    """
    Capture every record emitted inside the block into ``out/run.log``.

    Records from the calling thread are tagged with ``run`` on the shared
    sinks. The sink has no filter, so worker-thread records land here too.
    The file is truncated on entry and closed on exit.

    Args:
        out: Run output directory (must exist)
        run: Tag for the records, usually the experiment kind
        level: Minimum level written to the run file

    Yields:
        Path of the run log
    """
    path = Path(out) / RUN_LOG_NAME
    sink_id = logger.add(path, format=RUN_FORMAT, level=level, mode="w", encoding="utf-8")
    try:
        with logger.contextualize(run=run):
            yield path
    finally:
        logger.remove(sink_id)


# Initialize logger
app_logger = setup_logger()

__all__ = ["app_logger", "setup_logger", "run_log", "RUN_LOG_NAME"]
