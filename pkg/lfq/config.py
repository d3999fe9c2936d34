"""
Configuration models and helpers.

Every tunable of the laboratory is a pydantic model so that values coming from
command line flags, a JSON config file or the environment are validated in one
place. Flags win over the config file, the file wins over the defaults.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from lfq.errors import ConfigurationError

# Environment variables
WORKERS_ENV = "LFQ_WORKERS"

# Constants
PACKET_SIZE_BYTES = 1500
TICKS_PER_MS = 1_000
TICKS_PER_SECOND = 1_000_000
OFFLINE_BATCH_SIZE = 20
ONLINE_BATCH_SIZE = 40
DEFAULT_SAMPLE_INTERVAL = 10
LEARNING_RATE = 0.01
FEATURE_ORDER_VERSION = 1


def get_optional_env_var(var_name: str, default: Any) -> Any:
    """Get an optional environment variable with a default value."""
    return os.getenv(var_name, default)


def default_workers() -> int:
    """Worker count from LFQ_WORKERS, 1 when unset or unreadable."""
    raw = get_optional_env_var(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except (TypeError, ValueError):
        raise ConfigurationError(f"Environment variable '{WORKERS_ENV}' must be an integer, got {raw!r}")


class FlowRanges(BaseModel):
    """Uniform ranges flows are drawn from."""
    model_config = ConfigDict(frozen=True)

    bandwidth_mbps: Tuple[float, float] = (5.0, 25.0)
    delay_ms: Tuple[float, float] = (5.0, 25.0)
    duration_s: Tuple[float, float] = (3.75, 6.25)

    @model_validator(mode="after")
    def _check_bounds(self) -> "FlowRanges":
        for name in ("bandwidth_mbps", "delay_ms", "duration_s"):
            low, high = getattr(self, name)
            if low <= 0 or high < low:
                raise ValueError(f"{name} must satisfy 0 < low <= high, got ({low}, {high})")
        return self


class TcpParams(BaseModel):
    """Sender parameters shared by New Reno and BIC."""
    model_config = ConfigDict(frozen=True)

    initial_cwnd: float = Field(10.0, ge=1.0)
    reno_beta: float = Field(0.5, gt=0.0, lt=1.0)
    bic_beta: float = Field(0.7, gt=0.0, lt=1.0)
    bic_s_max: float = Field(32.0, gt=0.0)
    bic_s_min: float = Field(0.01, gt=0.0)
    dupack_threshold: int = Field(3, ge=1)


class FeatureParams(BaseModel):
    """Controls the rate feature warm-up rule."""
    model_config = ConfigDict(frozen=True)

    # linear: weight 2^-n needs n samples; exponential: needs 2^n samples
    warmup: Literal["linear", "exponential"] = "linear"


class TrainingConfig(BaseModel):
    """Everything a training run needs besides the networks."""
    model_config = ConfigDict(frozen=True)

    mode: Literal["offline", "online"] = "offline"
    alpha: float = Field(0.01, ge=0.0)
    flows: int = Field(2000, ge=0)
    batch: Optional[int] = Field(None, ge=1)
    seed: int = 0
    sample_interval: int = Field(DEFAULT_SAMPLE_INTERVAL, ge=1)
    learning_rate: float = Field(LEARNING_RATE, gt=0.0)
    workers: int = Field(1, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    eval_every: int = Field(0, ge=0)
    ranges: FlowRanges = FlowRanges()
    tcp: TcpParams = TcpParams()
    features: FeatureParams = FeatureParams()

    @property
    def batch_size(self) -> int:
        if self.batch is not None:
            return self.batch
        return OFFLINE_BATCH_SIZE if self.mode == "offline" else ONLINE_BATCH_SIZE


class SweepConfig(BaseModel):
    """Settings shared by the evaluation commands (sweep, compare, trace, oracle)."""
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    alpha: float = Field(0.01, ge=0.0)
    sample_interval: int = Field(DEFAULT_SAMPLE_INTERVAL, ge=1)
    workers: int = Field(1, ge=1)
    points: int = Field(100, ge=2)
    duration_s: float = Field(5.0, gt=0.0)
    fixed_bandwidth_mbps: float = Field(15.0, gt=0.0)
    fixed_delay_ms: float = Field(15.0, gt=0.0)
    measure_from_s: float = Field(0.0, ge=0.0)
    ranges: FlowRanges = FlowRanges()
    tcp: TcpParams = TcpParams()
    features: FeatureParams = FeatureParams()

    @model_validator(mode="after")
    def _check_window(self) -> "SweepConfig":
        if self.measure_from_s >= self.duration_s:
            raise ValueError("measure_from_s must be below duration_s")
        return self


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """
    Read an optional JSON config file into a plain dictionary.

    Args:
        path: File path or None

    Returns:
        Parsed key-value mapping (empty when no path is given)

    Raises:
        ConfigurationError: If the file is missing or is not a JSON object
    """
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigurationError(f"Config file '{path}' does not exist")
    try:
        data = json.loads(config_path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file '{path}' is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file '{path}' must contain a JSON object")
    return {key.replace("-", "_"): value for key, value in data.items()}


def merge_settings(file_values: Dict[str, Any], flag_values: Dict[str, Any]) -> Dict[str, Any]:
    """Overlay explicitly passed flags on top of config file values."""
    merged = dict(file_values)
    merged.update({key: value for key, value in flag_values.items() if value is not None})
    return merged


def build_model(model_cls: type, values: Dict[str, Any]) -> BaseModel:
    """Validate values against a pydantic model, mapping failures to ConfigurationError."""
    known = {key: value for key, value in values.items() if key in model_cls.model_fields}
    try:
        return model_cls(**known)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"Invalid {model_cls.__name__}: {problems}")
