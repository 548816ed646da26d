"""
Logging framework for the PWA certifier.

Provides logger initialization with file and console handlers plus small
helpers that accept an optional logger. Library code passes whatever logger
it was given; without one, messages go to the package logger so that the
numerical core never prints.
"""

import logging
import os
from datetime import datetime
from typing import Optional

PACKAGE_LOGGER_NAME = "pwa_certifier"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def initialise_logger(script_name: str, log_dir: str = "logs", log_level: int = logging.INFO) -> logging.Logger:
    """
    Initialize a logger with file and console handlers.

    Parameters:
    script_name (str): Name of the script (used for the logger and log file name)
    log_dir (str): Directory to store log files
    log_level (int): Logging level (default: logging.INFO)

    Returns:
    logging.Logger: Configured logger instance
    """
    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger(script_name)
    logger.setLevel(log_level)

    if logger.handlers:
        for handler in logger.handlers:
            handler.setLevel(log_level)
        return logger

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    log_file = os.path.join(log_dir, f"{script_name}_{timestamp}.log")
    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(log_level)
    file_handler.setFormatter(formatter)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)
    logger.propagate = False

    return logger


def _resolve(logger: Optional[logging.Logger]) -> logging.Logger:
    return logger if logger is not None else logging.getLogger(PACKAGE_LOGGER_NAME)


def log_info(logger: Optional[logging.Logger], message: str) -> None:
    """Log an info message through ``logger`` or the package logger."""
    _resolve(logger).info(message)


def log_error(logger: Optional[logging.Logger], message: str) -> None:
    """Log an error message through ``logger`` or the package logger."""
    _resolve(logger).error(message)


def log_warning(logger: Optional[logging.Logger], message: str) -> None:
    """Log a warning message through ``logger`` or the package logger."""
    _resolve(logger).warning(message)


def log_debug(logger: Optional[logging.Logger], message: str) -> None:
    """Log a debug message through ``logger`` or the package logger."""
    _resolve(logger).debug(message)


def log_check(logger: Optional[logging.Logger], name: str, passed: bool, residual: float, tolerance: float) -> None:
    """
    Log the outcome of a certificate check on a single line.

    Passed checks go to INFO, failed ones to WARNING, so a failing run stands
    out in the console.

    Parameters:
    logger (logging.Logger): Logger instance or None
    name (str): Check name as stored in the certificate
    passed (bool): Whether the check passed
    residual (float): Measured residual
    tolerance (float): Tolerance the residual was compared against
    """
    verdict = "PASS" if passed else "FAIL"
    message = f"check {name}: {verdict} (residual={residual:.3e}, tol={tolerance:.1e})"
    if passed:
        log_info(logger, message)
    else:
        log_warning(logger, message)
