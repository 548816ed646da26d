"""
Configuration module for the PWA certifier.

This module loads and provides access to configuration parameters from
config.yaml. Solver tolerances, certification limits, sampling seeds and the
default logging level are centralized here and validated with Pydantic so
that an invalid value fails before any MILP is built.
"""

import os
from typing import Any, Dict, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

import python_logging_framework as plog
from exceptions import ConfigurationError

# Get the directory where this script is located
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_FILE = os.path.join(SCRIPT_DIR, "config.yaml")

_DEFAULT_CONFIG_MSG = "Using default configuration."
_DESC_SEED = "Seed for every sampled check, recorded in reports"


class LoggingConfig(BaseModel):
    """Configuration for logging settings."""

    model_config = {"strict": True}

    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"


class SolverConfig(BaseModel):
    """Tolerances and limits of the simplex and branch-and-bound solvers."""

    model_config = {"strict": True}

    feasibility_tol: float = Field(default=1e-7, gt=0.0, lt=1e-2, description="Primal feasibility tolerance")
    optimality_tol: float = Field(default=1e-7, gt=0.0, lt=1e-2, description="Reduced-cost optimality tolerance")
    pivot_tol: float = Field(default=1e-9, gt=0.0, description="Smallest pivot accepted in the ratio test")
    breakdown_tol: float = Field(default=1e-11, gt=0.0, description="Pivot magnitude signalling numerical breakdown")
    refactor_interval: int = Field(default=50, ge=1, description="Pivots between basis re-inversions")
    integrality_tol: float = Field(default=1e-6, gt=0.0, lt=0.5, description="Distance to 0/1 treated as integral")
    gap_abs: float = Field(default=1e-6, ge=0.0, description="Absolute optimality gap of branch and bound")
    node_limit: Optional[int] = Field(default=None, ge=0, description="Maximum branch-and-bound nodes (None: unlimited)")
    time_limit: Optional[float] = Field(default=None, gt=0.0, description="Wall-clock limit per MILP in seconds")

    @model_validator(mode="after")
    def validate_pivot_order(self) -> "SolverConfig":
        """Breakdown must be detected below the ordinary pivot threshold."""
        if self.breakdown_tol > self.pivot_tol:
            raise ValueError("breakdown_tol must not exceed pivot_tol")
        return self


class GeometryConfig(BaseModel):
    """Tolerances of set operations."""

    model_config = {"strict": True}

    tol_set: float = Field(default=1e-6, gt=0.0, description="Containment tolerance")
    vertex_tol: float = Field(default=1e-7, gt=0.0, description="Vertex feasibility and de-duplication tolerance")


class BigMConfigSection(BaseModel):
    """Big-M derivation settings."""

    model_config = {"strict": True}

    mode: Literal["auto", "manual"] = "auto"
    value: Optional[float] = Field(default=None, gt=0.0, description="Manual big-M for region and step rows")
    margin: float = Field(default=1e-6, ge=0.0, description="Relative safety margin added to derived bounds")

    @model_validator(mode="after")
    def validate_manual_value(self) -> "BigMConfigSection":
        """Manual mode needs an explicit value."""
        if self.mode == "manual" and self.value is None:
            raise ValueError("big_m.value is required when big_m.mode is 'manual'")
        return self


class ReachConfig(BaseModel):
    """Reachability defaults."""

    model_config = {"strict": True}

    template: Literal["box", "oct"] = "box"
    workers: int = Field(default=1, ge=1, le=256, description="Processes used for per-direction MILPs")


class CertifyConfig(BaseModel):
    """Certification defaults."""

    model_config = {"strict": True}

    epsilon_shrink: float = Field(default=1e-3, gt=0.0, description="Shrink slack of the terminal-set test")
    k_limit: int = Field(default=200, ge=1, description="Maximum iterations searching the terminal set")
    iter_limit: int = Field(default=50, ge=1, description="Maximum iterations of the maximal PI set loop")
    lyapunov_samples: int = Field(default=10000, ge=1, description="Samples for the Lyapunov decrease check")
    boundary_samples: int = Field(default=720, ge=4, description="Samples on the ellipsoid boundary")


class SimConfig(BaseModel):
    """Simulation and audit defaults."""

    model_config = {"strict": True}

    seed: int = Field(default=42, ge=0, description=_DESC_SEED)
    audit_samples: int = Field(default=10000, ge=1, description="One-step samples drawn by grid_audit")
    audit_trajectories: int = Field(default=1000, ge=1, description="Trajectories drawn by the certificate audit")


class ModelsConfig(BaseModel):
    """Model validation settings."""

    model_config = {"strict": True}

    coverage_grid: int = Field(default=11, ge=2, le=101, description="Grid points per axis of the coverage check")
    origin_tol: float = Field(default=1e-9, gt=0.0, description="Tolerance of origin membership and Phi(0)=0 checks")

    @field_validator("coverage_grid")
    @classmethod
    def validate_odd_grid(cls, v: int) -> int:
        """An odd grid keeps the origin of symmetric boxes on the grid."""
        if v % 2 == 0:
            raise ValueError(f"coverage_grid must be odd, got {v}")
        return v


class Config(BaseModel):
    """Root configuration model with all sections."""

    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    big_m: BigMConfigSection = Field(default_factory=BigMConfigSection)
    reach: ReachConfig = Field(default_factory=ReachConfig)
    certify: CertifyConfig = Field(default_factory=CertifyConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    models: ModelsConfig = Field(default_factory=ModelsConfig)


# Default configuration (used as fallback if config.yaml is not found or incomplete)
DEFAULT_CONFIG: Dict[str, Any] = Config().model_dump()


def _format_validation_error(error: Dict[str, Any]) -> str:
    """
    Format a single Pydantic validation error into a user-friendly message.

    Parameters:
        error (dict): A single error dictionary from ValidationError.errors()

    Returns:
        str: A formatted, user-friendly error message
    """
    field_path = ".".join(str(loc) for loc in error["loc"])
    error_type = error["type"]
    error_msg = error["msg"]

    if "literal_error" in error_type:
        expected = error.get("ctx", {}).get("expected", "")
        return f"Invalid value for '{field_path}': {error_msg} Expected one of: {expected}"
    elif any(keyword in error_type for keyword in ["greater_than", "less_than"]):
        return f"Invalid value for '{field_path}': {error_msg}"
    elif "int_" in error_type or "float_" in error_type:
        input_value = error.get("input", "")
        expected_type = "integer" if "int" in error_type else "float"
        return f"Invalid type for '{field_path}': expected {expected_type}, got '{input_value}'"
    else:
        return f"Invalid configuration for '{field_path}': {error_msg}"


def validate_config(merged_config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate configuration using Pydantic and return the validated dict.

    Also used by the model loader for per-model ``options`` overrides.

    Parameters:
        merged_config (dict): Merged configuration dictionary

    Returns:
        dict: Validated configuration dictionary

    Raises:
        ConfigurationError: If validation fails
    """
    try:
        return Config(**merged_config).model_dump()
    except ValidationError as e:
        error_messages = [_format_validation_error(error) for error in e.errors()]
        error_summary = "\n  - ".join(error_messages)
        raise ConfigurationError(f"Configuration validation failed:\n  - {error_summary}") from e


def load_config() -> Dict[str, Any]:
    """
    Load configuration from config.yaml with type validation.

    Returns:
        dict: Configuration dictionary. Falls back to defaults if the file is
              missing, unreadable or not valid YAML.

    Raises:
        ConfigurationError: If a value fails validation.
    """
    if not os.path.exists(CONFIG_FILE):
        plog.log_info(None, f"config.yaml not found at {CONFIG_FILE}")
        plog.log_info(None, _DEFAULT_CONFIG_MSG)
        return merge_configs(DEFAULT_CONFIG, None)

    try:
        with open(CONFIG_FILE, "r") as f:
            raw_config = yaml.safe_load(f)
        return validate_config(merge_configs(DEFAULT_CONFIG, raw_config))
    except (FileNotFoundError, PermissionError) as e:
        plog.log_error(None, f"Could not access config.yaml: {e}")
    except yaml.YAMLError as e:
        plog.log_error(None, f"Invalid YAML in config.yaml: {e}")
    except ConfigurationError:
        raise
    except Exception as e:
        plog.log_error(None, f"Unexpected error loading config.yaml: {e}")
        raise ConfigurationError(f"Unexpected error loading config.yaml: {e}") from e
    plog.log_info(None, _DEFAULT_CONFIG_MSG)
    return merge_configs(DEFAULT_CONFIG, None)


def merge_configs(default: Dict[str, Any], custom: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """
    Merge a custom configuration over a default one, section by section.

    Neither input is modified.

    Parameters:
        default (dict): Default configuration
        custom (dict): Custom values (may be None)

    Returns:
        dict: Merged configuration
    """
    merged: Dict[str, Any] = {}
    for key, value in default.items():
        merged[key] = merge_configs(value, None) if isinstance(value, dict) else value
    if not custom:
        return merged
    for key, value in custom.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_configs(merged[key], value)
        else:
            merged[key] = value
    return merged


def get_config() -> Dict[str, Any]:
    """
    Get the configuration dictionary.

    Returns:
        dict: Configuration dictionary with all parameters.
    """
    return load_config()


# Load configuration once when module is imported
config = load_config()
