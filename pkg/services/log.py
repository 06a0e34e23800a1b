import logging
import os
import sys
import time
from contextlib import contextmanager
from datetime import datetime
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Iterator

from services.env import Env


class Log:
    """
    Lazy logging facade shared by every pipeline stage.

    Records go to a daily rotating file under ``ITERSENTINEL_LOG_DIR``
    (default ``logs`` next to the script). Nothing is written to stdout or
    stderr, which carry command output and the JSON error record. A log
    directory that cannot be created degrades to a null handler.
    """

    LOGGER_NAME = "IterSentinelLogger"
    FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"

    _initialized = False
    _logger: logging.Logger | None = None

    @classmethod
    def _resolveLogDir(cls) -> Path:
        configured = Env.get("LOG_DIR")
        if configured:
            return Path(configured)
        return Path(os.path.dirname(os.path.abspath(sys.argv[0]))) / "logs"

    @classmethod
    def _init(cls) -> logging.Logger:
        """
        Configure the logger on first use and return it.

        The level comes from ``ITERSENTINEL_LOG_LEVEL`` (default info).
        Repeated calls reuse the handler attached to the same file.

        Returns
        -------
        logging.Logger
            The configured logger.
        """
        if cls._initialized and cls._logger is not None:
            return cls._logger

        logger = logging.getLogger(cls.LOGGER_NAME)
        level_name = (Env.get("LOG_LEVEL", "info") or "info").upper()
        logger.setLevel(getattr(logging, level_name, logging.INFO))
        logger.propagate = False

        handler: logging.Handler
        try:
            log_dir = cls._resolveLogDir()
            log_dir.mkdir(parents=True, exist_ok=True)
            log_file = log_dir / f"itersentinel_{datetime.now().strftime('%Y-%m-%d')}.log"
            handler = TimedRotatingFileHandler(
                filename=str(log_file), when="midnight", interval=1, backupCount=7, encoding="utf-8"
            )
        except OSError:
            handler = logging.NullHandler()
        handler.setFormatter(logging.Formatter(cls.FORMAT))

        if isinstance(handler, TimedRotatingFileHandler):
            attached = any(
                isinstance(h, TimedRotatingFileHandler) and h.baseFilename == handler.baseFilename
                for h in logger.handlers
            )
            if attached:
                handler.close()
            else:
                logger.addHandler(handler)
        elif not logger.handlers:
            logger.addHandler(handler)

        cls._logger = logger
        cls._initialized = True
        return logger

    @classmethod
    def reset(cls) -> None:
        """Close all handlers; the next call re-reads the environment."""
        logger = logging.getLogger(cls.LOGGER_NAME)
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)
        cls._logger = None
        cls._initialized = False

    @classmethod
    def debug(cls, message: str) -> None:
        cls._init().debug(message)

    @classmethod
    def info(cls, message: str) -> None:
        cls._init().info(message)

    @classmethod
    def warning(cls, message: str) -> None:
        cls._init().warning(message)

    @classmethod
    def error(cls, message: str) -> None:
        cls._init().error(message)

    @classmethod
    def exception(cls, message: str) -> None:
        """Log an error with the traceback of the exception being handled."""
        cls._init().exception(message)

    @classmethod
    @contextmanager
    def stage(cls, name: str) -> Iterator[None]:
        """
        Log the wall time of a pipeline stage.

        Parameters
        ----------
        name : str
            Stage label, e.g. ``ingest`` or ``fit``.

        Yields
        ------
        None
            Control to the timed block. A failing block is logged as failed
            and the exception propagates.
        """
        started = time.perf_counter()
        cls.debug(f"Stage '{name}' started")
        try:
            yield
        except BaseException:
            cls.warning(f"Stage '{name}' failed after {time.perf_counter() - started:.3f} s")
            raise
        cls.info(f"Stage '{name}' took {time.perf_counter() - started:.3f} s")
