"""
File-system safety for model inputs and result outputs.

This module provides:
- Path validation against traversal and forbidden extensions
- CSV injection prevention for exported tables
- Backups and overwrite confirmation before results are replaced
"""

import logging
import numbers
import os
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any, List, Optional

import pandas as pd

import python_logging_framework as plog
from exceptions import SecurityError

# Allowed file extensions
ALLOWED_MODEL_EXTENSIONS = [".yaml", ".yml"]
ALLOWED_CSV_EXTENSIONS = [".csv"]
ALLOWED_OUTPUT_EXTENSIONS = ALLOWED_MODEL_EXTENSIONS + ALLOWED_CSV_EXTENSIONS + [".txt", ".lp"]


def validate_and_resolve_path(
    path_str: str,
    must_exist: bool = False,
    must_be_file: bool = False,
    must_be_dir: bool = False,
    allowed_extensions: Optional[List[str]] = None,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Validate and resolve a file system path.

    Parameters:
    path_str (str): The path string to validate
    must_exist (bool): If True, path must exist
    must_be_file (bool): If True, an existing path must be a file
    must_be_dir (bool): If True, an existing path must be a directory
    allowed_extensions (list, optional): Allowed suffixes, e.g. ['.yaml', '.yml']
    logger (logging.Logger, optional): Logger instance for logging messages

    Returns:
    Path: A validated, absolute pathlib.Path

    Raises:
    SecurityError: If the path is malformed, traverses upwards or has a forbidden extension
    FileNotFoundError: If must_exist=True and the path does not exist
    """
    if not path_str or not isinstance(path_str, str):
        plog.log_error(logger, "Path must be a non-empty string")
        raise SecurityError("Path must be a non-empty string")

    path_str = path_str.strip().strip('"').strip("'")

    # Traversal is checked on the raw components; resolve() would fold them away.
    if ".." in Path(path_str).parts:
        plog.log_error(logger, f"Path traversal detected in path: {path_str}")
        raise SecurityError(f"Path traversal detected: {path_str}")

    try:
        path = Path(path_str).resolve()
    except (ValueError, OSError) as e:
        plog.log_error(logger, f"Invalid path format: {path_str} - {e}")
        raise SecurityError(f"Invalid path format: {path_str}") from e

    if ".." in str(path).split(os.sep):
        plog.log_error(logger, f"Path traversal detected in path: {path_str}")
        raise SecurityError(f"Path traversal detected: {path_str}")

    if must_exist and not path.exists():
        plog.log_error(logger, f"Path does not exist: {path}")
        raise FileNotFoundError(f"Path does not exist: {path}")

    if must_be_file and path.exists() and not path.is_file():
        plog.log_error(logger, f"Path is not a file: {path}")
        raise SecurityError(f"Path is not a file: {path}")

    if must_be_dir and path.exists() and not path.is_dir():
        plog.log_error(logger, f"Path is not a directory: {path}")
        raise SecurityError(f"Path is not a directory: {path}")

    if allowed_extensions:
        ext = path.suffix.lower()
        if ext not in allowed_extensions:
            plog.log_error(logger, f"Invalid file extension: {ext}. Allowed: {allowed_extensions}")
            raise SecurityError(f"Invalid file extension: {ext}. Allowed extensions: {allowed_extensions}")

    plog.log_debug(logger, f"Path validated successfully: {path}")
    return path


def validate_file_path(
    path_str: str,
    allowed_extensions: Optional[List[str]] = None,
    must_exist: bool = True,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """Validate a file path with extension checking (see :func:`validate_and_resolve_path`)."""
    return validate_and_resolve_path(
        path_str,
        must_exist=must_exist,
        must_be_file=must_exist,
        allowed_extensions=allowed_extensions,
        logger=logger,
    )


def validate_directory_path(
    path_str: str, must_exist: bool = False, create_if_missing: bool = False, logger: Optional[logging.Logger] = None
) -> Path:
    """
    Validate a directory path and optionally create it.

    Raises:
    SecurityError: If the path is invalid or cannot be created
    FileNotFoundError: If must_exist=True and the directory does not exist
    """
    path = validate_and_resolve_path(path_str, must_exist=False, must_be_dir=True, logger=logger)

    if create_if_missing and not path.exists():
        try:
            path.mkdir(parents=True, exist_ok=True)
            plog.log_info(logger, f"Created directory: {path}")
        except OSError as e:
            plog.log_error(logger, f"Failed to create directory {path}: {e}")
            raise SecurityError(f"Failed to create directory {path}: {e}") from e
    elif must_exist and not path.exists():
        plog.log_error(logger, f"Directory does not exist: {path}")
        raise FileNotFoundError(f"Directory does not exist: {path}")

    return path


def sanitize_csv_value(value: Any) -> str:
    """
    Make a value safe for CSV output.

    Text starting with a formula character (=, +, -, @, tab, CR, LF) is
    prefixed with a single quote. Numbers, including negative ones, are
    written unchanged.
    """
    if value is None or (not isinstance(value, str) and pd.isna(value)):
        return ""

    if isinstance(value, numbers.Real) and not isinstance(value, bool):
        return repr(float(value)) if isinstance(value, float) else str(value)

    value_str = str(value)
    if value_str and value_str[0] in ("=", "+", "-", "@", "\t", "\r", "\n"):
        return "'" + value_str
    return value_str


def sanitize_dataframe_for_csv(df: pd.DataFrame) -> pd.DataFrame:
    """Return a copy of ``df`` with :func:`sanitize_csv_value` applied to every cell."""
    df_sanitized = df.copy()
    for col in df_sanitized.columns:
        df_sanitized[col] = df_sanitized[col].apply(sanitize_csv_value)
    return df_sanitized


def create_backup(file_path: str, logger: Optional[logging.Logger] = None) -> Optional[str]:
    """
    Copy an existing file to ``<name>.backup_<timestamp>``.

    Returns:
    str: Path to the backup file, or None if the file does not exist

    Raises:
    IOError: If the copy fails
    """
    path = Path(file_path)
    if not path.exists():
        plog.log_debug(logger, f"No existing file to backup: {file_path}")
        return None

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    backup_path = path.with_suffix(f"{path.suffix}.backup_{timestamp}")
    try:
        shutil.copy2(file_path, backup_path)
        plog.log_info(logger, f"Backup created: {backup_path}")
        return str(backup_path)
    except (IOError, OSError) as e:
        plog.log_error(logger, f"Failed to create backup of {file_path}: {e}")
        raise IOError(f"Failed to create backup of {file_path}: {e}") from e


def confirm_overwrite(file_path: str, logger: Optional[logging.Logger] = None) -> bool:
    """Ask before overwriting an existing file; missing files need no confirmation."""
    path = Path(file_path)
    if not path.exists():
        return True

    plog.log_info(logger, f"File exists: {file_path}")
    try:
        response = input(f"File '{file_path}' already exists. Overwrite? [y/N]: ").strip().lower()
    except (EOFError, KeyboardInterrupt):
        plog.log_info(logger, "User cancelled operation")
        return False
    confirmed = response in ["y", "yes"]
    plog.log_info(logger, f"User {'confirmed' if confirmed else 'declined'} overwrite of {file_path}")
    return confirmed


def prepare_output(path: Path, skip_confirmation: bool = False, logger: Optional[logging.Logger] = None) -> bool:
    """
    Get an output path ready for writing.

    Existing files are confirmed (unless ``skip_confirmation``) and backed up.

    Returns:
    bool: False if the user declined the overwrite
    """
    if path.exists():
        if not skip_confirmation and not confirm_overwrite(str(path), logger):
            return False
        create_backup(str(path), logger)
    return True


def write_csv(df: pd.DataFrame, path: Path, logger: Optional[logging.Logger] = None) -> Path:
    """Sanitize ``df`` and write it to ``path`` without the index."""
    sanitize_dataframe_for_csv(df).to_csv(path, index=False)
    plog.log_info(logger, f"Wrote {len(df)} rows to {path}")
    return path
