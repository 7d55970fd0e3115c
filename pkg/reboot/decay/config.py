"""
Experiment configuration: a TOML file, overridden by command line
flags, validated by `pydantic`.

    # experiment.toml
    lambda = 0.5
    service = "trunc(exp:1.0,8.0)"
    discipline = "fb"
    customers = 1_000_000
    seed = 7
"""

import os
import tomllib
from log.log import get_logger
from pathlib import Path
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from reboot.decay.analytic import QueueModel
from reboot.decay.distributions import ServiceDistribution, parse_service
from reboot.decay.errors import ConfigError
from reboot.decay.estimator import (
    BUSY_PERIOD_POWER,
    DEFAULT_Q_HI,
    DEFAULT_Q_LO,
    Correction,
)
from reboot.decay.schedulers import DISCIPLINES, Discipline
from reboot.decay.simulator import DEFAULT_STRIDE, DEFAULT_WARMUP
from typing import Any, Literal, Optional

logger = get_logger(__name__)

OUTPUT_DIR_ENVIRONMENT_VARIABLE = "DURABLE_DECAY_OUTPUT_DIR"

LOG_LEVEL_ENVIRONMENT_VARIABLE = "DURABLE_DECAY_LOG_LEVEL"

DEFAULT_OUTPUT_DIR = Path("decay-output")

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

SimulationMode = Literal["sojourn", "busy"]


def default_output_dir() -> Path:
    return Path(
        os.environ.get(OUTPUT_DIR_ENVIRONMENT_VARIABLE, DEFAULT_OUTPUT_DIR)
    )


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        populate_by_name=True,
    )

    arrival_rate: float = Field(default=0.5, alias="lambda", gt=0)
    service: str = "exp:1.0"

    discipline: Discipline = "fb"
    disciplines: list[Discipline] = Field(
        default_factory=lambda: list(DISCIPLINES),
    )
    mode: SimulationMode = "sojourn"

    customers: int = Field(default=1_000_000, ge=1)
    # Defaults to min(10^4, customers / 10).
    warmup: Optional[int] = Field(default=None, ge=0)
    samples: int = Field(default=100_000, ge=1)
    stride: int = Field(default=DEFAULT_STRIDE, ge=1)

    seed: int = Field(default=0, ge=0)
    seeds: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)
    replications: int = Field(default=1, ge=1)

    taus: list[float] = Field(
        default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
    )
    tau: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=1.0, gt=0)

    q_lo: float = DEFAULT_Q_LO
    q_hi: float = DEFAULT_Q_HI
    correction: Correction = "none"
    power: float = BUSY_PERIOD_POWER

    output_dir: Path = Field(default_factory=default_output_dir)
    out: Optional[Path] = None

    log_level: LogLevel = "WARNING"

    @field_validator("service")
    @classmethod
    def _parse_service(cls, value: str) -> str:
        # Normalize to the printed spec so reruns compare equal.
        return parse_service(value).spec

    @model_validator(mode="after")
    def _check(self) -> 'ExperimentConfig':
        if not 0 < self.q_lo < self.q_hi < 1:
            raise ValueError(
                f"Need 0 < q_lo < q_hi < 1, got q_lo={self.q_lo}, "
                f"q_hi={self.q_hi}"
            )
        if self.warmup is not None and self.warmup > self.customers:
            raise ValueError(
                f"Warmup {self.warmup} exceeds customers {self.customers}"
            )
        return self

    @property
    def service_distribution(self) -> ServiceDistribution:
        return parse_service(self.service)

    @property
    def resolved_warmup(self) -> int:
        if self.warmup is not None:
            return self.warmup
        return min(DEFAULT_WARMUP, self.customers // 10)

    def queue_model(self) -> QueueModel:
        return QueueModel(self.arrival_rate, self.service_distribution)


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Reads `path` (TOML) if given, then applies `overrides`, skipping
    those that are `None`.
    """
    values: dict[str, Any] = {}

    if path is not None:
        try:
            with open(path, "rb") as file:
                values.update(tomllib.load(file))
        except OSError as error:
            raise ConfigError(f"Cannot read config '{path}': {error}")
        except tomllib.TOMLDecodeError as error:
            raise ConfigError(f"Malformed config '{path}': {error}")
        logger.debug(f"Loaded config from '{path}': {values}")

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as error:
        # Surface our own spec errors unchanged.
        for detail in error.errors():
            cause = (detail.get("ctx") or {}).get("error")
            if isinstance(cause, ConfigError):
                raise cause
        raise ConfigError(f"Invalid configuration: {error}")


def server_log_level() -> LogLevel:
    """Log level of the MCP server, from `DURABLE_DECAY_LOG_LEVEL`."""
    return load_config(
        overrides={
            "log_level": os.environ.get(LOG_LEVEL_ENVIRONMENT_VARIABLE),
        },
    ).log_level
