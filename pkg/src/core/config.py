"""
Configuration models for occuflow runs.
This module provides validated configuration sections, YAML loading/dumping and CLI overrides.
"""

import logging
import os
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, root_validator, validator

from core.errors import ConfigError
from core.models import InflowFamily

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THREADS_ENV_VAR = "OCCUFLOW_THREADS"


class PanelSchema(BaseModel):
    """Column names of the occupancy CSV."""
    date_column: str = "date"
    district_column: str = "district_id"
    occupancy_column: str = "occupancy"
    population_column: Optional[str] = "population"
    longitude_column: Optional[str] = "longitude"
    latitude_column: Optional[str] = "latitude"
    # None loads every remaining numeric column as a covariate
    covariate_columns: Optional[List[str]] = None

    class Config:
        extra = "forbid"


class CovariateSpec(BaseModel):
    """Parametric part of the inflow design."""
    columns: Optional[List[str]] = None
    infection_rates: List[str] = Field(default_factory=list)
    log_epsilon: float = 1.0
    weekday: bool = False

    class Config:
        extra = "forbid"

    @validator("log_epsilon")
    def _epsilon_nonnegative(cls, value):
        if value < 0:
            raise ValueError("log_epsilon must be >= 0")
        return value


class BasisSpec(BaseModel):
    """Fixed-rank smooth terms of the inflow intensity."""
    time_smooth: bool = False
    time_basis_size: int = 10
    time_penalty: float = 1.0
    space_smooth: bool = False
    space_basis_size: int = 10
    space_penalty: float = 1.0
    select_by_aic: bool = False
    aic_grid: List[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, 100.0])

    class Config:
        extra = "forbid"

    @validator("time_penalty", "space_penalty")
    def _penalty_nonnegative(cls, value):
        if value < 0:
            raise ValueError("penalty weights must be >= 0")
        return value

    @root_validator(skip_on_failure=True)
    def _enough_basis_functions(cls, values):
        if values["time_smooth"] and values["time_basis_size"] < 4:
            raise ValueError("time_basis_size must be >= 4 for a cubic B-spline basis")
        if values["space_smooth"] and values["space_basis_size"] < 3:
            raise ValueError("space_basis_size must be >= 3")
        return values


class SemConfig(BaseModel):
    """Stochastic EM settings."""
    max_lag: int = 12
    iterations_pre: int = 200
    iterations_corrected: int = 150
    summary_window: int = 100
    seed: int = 0
    tail_tol: float = 1e-10
    irls_tol: float = 1e-8
    irls_max_iter: int = 100
    exit_tol: float = 1e-8
    exit_max_iter: int = 200
    correction_direction: str = "expand"
    c_min: float = 0.01
    c_max: float = 100.0
    max_consecutive_failures: int = 3

    class Config:
        extra = "forbid"

    @validator("max_lag", "iterations_pre", "summary_window", "irls_max_iter", "exit_max_iter")
    def _at_least_one(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("iterations_corrected")
    def _nonnegative(cls, value):
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @validator("correction_direction")
    def _known_direction(cls, value):
        if value not in ("expand", "shrink"):
            raise ValueError("correction_direction must be 'expand' or 'shrink'")
        return value

    @validator("tail_tol")
    def _tail_in_unit_interval(cls, value):
        if not 0 < value < 1:
            raise ValueError("tail_tol must lie in (0, 1)")
        return value

    @root_validator(skip_on_failure=True)
    def _window_fits(cls, values):
        available = values["iterations_corrected"] or values["iterations_pre"]
        if values["summary_window"] > available:
            raise ValueError(
                f"summary_window {values['summary_window']} exceeds the {available} iterations it summarizes"
            )
        if not 0 < values["c_min"] <= 1 <= values["c_max"]:
            raise ValueError("c bounds must satisfy 0 < c_min <= 1 <= c_max")
        return values

    @property
    def total_iterations(self) -> int:
        return self.iterations_pre + self.iterations_corrected

    def window(self) -> tuple:
        total = self.total_iterations
        return total - self.summary_window, total


class SimSpec(BaseModel):
    """Synthetic panel generator settings."""
    districts: int = 200
    days: int = 200
    inflow_family: InflowFamily = InflowFamily.POISSON
    theta: Optional[float] = None
    beta: List[float] = Field(default_factory=lambda: [0.5, 1.0, 0.2])
    x1_shape: float = 0.1
    x1_rate: float = 0.5
    x2_shape: float = 1.0
    x2_rate: float = 3.0
    los_decay: float = 0.4
    los_max: int = 10
    fit_lag: int = 12
    start_date: str = "2021-08-01"
    seed: int = 0

    class Config:
        extra = "forbid"
        use_enum_values = True
        validate_all = True

    @validator("districts", "days", "los_max", "fit_lag")
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("beta")
    def _three_coefficients(cls, value):
        if len(value) != 3:
            raise ValueError("beta holds (intercept, x1, x2)")
        return value

    @root_validator(skip_on_failure=True)
    def _theta_for_negbin(cls, values):
        family = InflowFamily(values["inflow_family"])
        if family == InflowFamily.NEGATIVE_BINOMIAL:
            if values.get("theta") is None or values["theta"] <= 0:
                raise ValueError("theta > 0 is required for Negative-Binomial inflows")
        if values["fit_lag"] < values["los_max"]:
            raise ValueError("fit_lag must be >= los_max")
        return values


class RunConfig(BaseModel):
    """Complete, versioned run configuration."""
    schema_version: int = SCHEMA_VERSION
    seed: Optional[int] = None
    threads: Optional[int] = None
    panel: PanelSchema = Field(default_factory=PanelSchema)
    covariates: CovariateSpec = Field(default_factory=CovariateSpec)
    basis: BasisSpec = Field(default_factory=BasisSpec)
    sem: SemConfig = Field(default_factory=SemConfig)
    simulation: SimSpec = Field(default_factory=SimSpec)

    class Config:
        extra = "forbid"
        use_enum_values = True
        validate_all = True

    @validator("schema_version")
    def _supported_version(cls, value):
        if value != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value}; expected {SCHEMA_VERSION}")
        return value

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.dict(), sort_keys=True)


def parse_config(data: Optional[Dict[str, Any]]) -> RunConfig:
    """Validate a raw mapping into a RunConfig."""
    try:
        return RunConfig.parse_obj(data or {})
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: Optional[str]) -> RunConfig:
    """Load a YAML config file; a missing path yields the defaults."""
    if path is None:
        return parse_config({})
    if not os.path.exists(path):
        raise ConfigError(f"Config file {path} not found")
    with open(path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {path} is not valid YAML: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    logger.info(f"Loaded configuration from {path}")
    return parse_config(data)


def dump_config(config: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(config.to_yaml())


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides (e.g. ``sem.max_lag``); None values are ignored."""
    data = config.dict()
    for key, value in overrides.items():
        if value is None:
            continue
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"Unknown config section in override {key}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"Unknown config key {key}")
        target[parts[-1]] = value
    return parse_config(data)


def resolve_threads(flag: Optional[int], config: RunConfig) -> int:
    """--threads wins, then the config, then OCCUFLOW_THREADS (environment or .env), then 1."""
    if flag is not None:
        return max(1, int(flag))
    if config.threads is not None:
        return max(1, int(config.threads))
    load_dotenv()
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    return 1
