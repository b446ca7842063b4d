# utils/logger.py
"""
Logging configuration for the crowd simulation engine
"""

import logging
import sys
from datetime import datetime
import os

LOG_LEVEL_ENV = "CROWDSIM_LOG_LEVEL"


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance with the given name

    Args:
        name: Logger name (usually __name__)

    Returns:
        Configured logger instance
    """
    return logging.getLogger(name)


def resolve_log_level(default: str = "INFO") -> str:
    """Log level from the environment, falling back to ``default``."""
    level = os.getenv(LOG_LEVEL_ENV, default).upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        return default
    return level


def setup_logging(log_level: str = None, log_to_file: bool = True, logs_dir: str = "logs"):
    """
    Setup logging configuration for simulation runs

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
            Defaults to the CROWDSIM_LOG_LEVEL environment variable.
        log_to_file: Whether to log to file in addition to console
        logs_dir: Directory receiving the timestamped log file
    """
    log_level = (log_level or resolve_log_level()).upper()

    # Configure sys.stdout for UTF-8 on Windows if not already set
    if sys.platform == "win32" and sys.stdout.encoding != 'utf-8':
        import io
        sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8', line_buffering=True)
        sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8', line_buffering=True)

    # Detailed formatter for file logs
    file_formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    # Simpler formatter for console output
    console_formatter = logging.Formatter('%(message)s')

    log_handlers = []

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(console_formatter)
    log_handlers.append(console_handler)

    if log_to_file:
        os.makedirs(logs_dir, exist_ok=True)
        log_file = os.path.join(
            logs_dir,
            f"crowdsim_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        )
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(file_formatter)
        log_handlers.append(file_handler)

    logging.basicConfig(
        level=getattr(logging, log_level),
        handlers=log_handlers,
        force=True,
    )

    # Reduce verbosity for some noisy loggers
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)
