"""Run configuration: a ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import voluptuous as vol
from slugify import slugify

from .const import (
    CONF_AA_AUTO,
    CONF_AA_MARGIN,
    CONF_BATCH_SIZE,
    CONF_CLASSES,
    CONF_DATASET,
    CONF_DELTA,
    CONF_DISCLOSE,
    CONF_DROPOUT,
    CONF_EMD,
    CONF_EPSILON,
    CONF_GAS_LIMIT,
    CONF_HIDDEN,
    CONF_IDX_IMAGES,
    CONF_IDX_LABELS,
    CONF_INPUT_DIM,
    CONF_LAMBDA,
    CONF_LEARNING_RATE,
    CONF_LOCAL_EPOCHS,
    CONF_LOCAL_EVALUATION,
    CONF_LOG_LEVEL,
    CONF_MINERS,
    CONF_MIX,
    CONF_MODEL,
    CONF_OUT_DIR,
    CONF_PER_CLASS,
    CONF_POPULATION,
    CONF_RATIONAL,
    CONF_RECORD_TIMING,
    CONF_REPEATS,
    CONF_REWARD,
    CONF_ROUNDS,
    CONF_SEED,
    CONF_SENSITIVITY,
    CONF_SEPARATION,
    CONF_SIGMA_OVERRIDE,
    CONF_TEST_FRACTION,
    CONF_TEST_GROUPS,
    CONF_THRESHOLD,
    CONF_WORKERS,
    DATASET_IDX,
    DATASET_SYNTHETIC,
    DEFAULT_AA_MARGIN,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BLOCK_GAS_LIMIT,
    DEFAULT_CLASSES,
    DEFAULT_DELTA_EXPONENT,
    DEFAULT_DROPOUT_RATE,
    DEFAULT_EMD,
    DEFAULT_EPSILON,
    DEFAULT_INPUT_DIM,
    DEFAULT_LAMBDA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOCAL_EPOCHS,
    DEFAULT_MINERS,
    DEFAULT_MIX,
    DEFAULT_OUT_DIR,
    DEFAULT_PER_CLASS,
    DEFAULT_POPULATION,
    DEFAULT_REPEATS,
    DEFAULT_REWARD,
    DEFAULT_ROUNDS,
    DEFAULT_SENSITIVITY,
    DEFAULT_SEPARATION,
    DEFAULT_TEST_FRACTION,
    DEFAULT_TEST_GROUPS,
    DEFAULT_WORKERS,
)
from .exceptions import ConfigError
from .model import ModelKind, ModelSpec, TrainingConfig
from .privacy import PrivacyParams

if TYPE_CHECKING:
    from collections.abc import Mapping

_EXP_PATTERN = re.compile(r"^exp\(\s*(-?\d+(?:\.\d+)?)\s*\)$")
_NONE_WORDS = {"", "none", "null"}
_LOG_LEVELS = ["debug", "info", "warning", "error", "critical"]


def parse_delta(value: Any) -> float:
    """Accept a float or ``exp(-k)`` notation."""
    if isinstance(value, str):
        match = _EXP_PATTERN.match(value.strip().lower())
        if match:
            return math.exp(float(match.group(1)))
    try:
        return float(value)
    except (TypeError, ValueError) as err:
        msg = f"expected a float or exp(-k), got {value!r}"
        raise vol.Invalid(msg) from err


def _float_list(value: Any) -> tuple[float, ...]:
    if isinstance(value, str):
        value = [part for part in re.split(r"[,\s]+", value.strip()) if part]
    try:
        return tuple(float(part) for part in value)
    except (TypeError, ValueError) as err:
        msg = f"expected a comma-separated list of numbers, got {value!r}"
        raise vol.Invalid(msg) from err


def _int_list(value: Any) -> tuple[int, ...]:
    floats = _float_list(value)
    if any(not number.is_integer() for number in floats):
        msg = f"expected whole numbers, got {value!r}"
        raise vol.Invalid(msg)
    return tuple(int(number) for number in floats)


def _optional_float(value: Any) -> float | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _NONE_WORDS):
        return None
    try:
        number = float(value)
    except (TypeError, ValueError) as err:
        msg = f"expected a number or none, got {value!r}"
        raise vol.Invalid(msg) from err
    if number < 0:
        msg = "must not be negative"
        raise vol.Invalid(msg)
    return number


def _optional_path(value: Any) -> str | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _NONE_WORDS):
        return None
    return str(value)


_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))


def _unit_interval(*, min_included: bool = True, max_included: bool = True) -> Any:
    return vol.All(
        vol.Coerce(float),
        vol.Range(min=0.0, max=1.0, min_included=min_included, max_included=max_included),
    )


RUN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=0): vol.All(
            vol.Coerce(int), vol.Range(min=0, max=(1 << 64) - 1)
        ),
        vol.Optional(CONF_POPULATION, default=DEFAULT_POPULATION): _POSITIVE_INT,
        vol.Optional(CONF_MIX, default=DEFAULT_MIX): vol.All(
            _float_list, vol.Length(min=3, max=3)
        ),
        vol.Optional(CONF_LAMBDA, default=DEFAULT_LAMBDA): _unit_interval(),
        vol.Optional(CONF_EMD, default=DEFAULT_EMD): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=2.0)
        ),
        vol.Optional(CONF_RATIONAL, default=False): vol.Boolean(),
        vol.Optional(CONF_MODEL, default=ModelKind.LOGISTIC.value): vol.All(
            vol.Lower, vol.In([kind.value for kind in ModelKind])
        ),
        vol.Optional(CONF_HIDDEN, default=()): _int_list,
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_LEARNING_RATE): vol.All(
            vol.Coerce(float), vol.Range(min=0.0)
        ),
        vol.Optional(CONF_LOCAL_EPOCHS, default=DEFAULT_LOCAL_EPOCHS): _POSITIVE_INT,
        vol.Optional(CONF_DROPOUT, default=DEFAULT_DROPOUT_RATE): _unit_interval(
            max_included=False
        ),
        vol.Optional(CONF_EPSILON, default=DEFAULT_EPSILON): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
        vol.Optional(CONF_DELTA, default=math.exp(-DEFAULT_DELTA_EXPONENT)): vol.All(
            parse_delta, vol.Range(min=0.0, max=1.0, min_included=False, max_included=False)
        ),
        vol.Optional(CONF_SENSITIVITY, default=DEFAULT_SENSITIVITY): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
        vol.Optional(CONF_SIGMA_OVERRIDE, default=None): _optional_float,
        vol.Optional(CONF_THRESHOLD, default=0.0): _unit_interval(),
        vol.Optional(CONF_AA_AUTO, default=False): vol.Boolean(),
        vol.Optional(CONF_AA_MARGIN, default=DEFAULT_AA_MARGIN): _unit_interval(),
        vol.Optional(CONF_REPEATS, default=DEFAULT_REPEATS): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional(CONF_REWARD, default=DEFAULT_REWARD): _POSITIVE_INT,
        vol.Optional(CONF_ROUNDS, default=DEFAULT_ROUNDS): _POSITIVE_INT,
        vol.Optional(CONF_GAS_LIMIT, default=DEFAULT_BLOCK_GAS_LIMIT): _POSITIVE_INT,
        vol.Optional(CONF_MINERS, default=DEFAULT_MINERS): _POSITIVE_INT,
        vol.Optional(CONF_LOCAL_EVALUATION, default=False): vol.Boolean(),
        vol.Optional(CONF_DISCLOSE, default=True): vol.Boolean(),
        vol.Optional(CONF_DATASET, default=DATASET_SYNTHETIC): vol.All(
            vol.Lower, vol.In([DATASET_SYNTHETIC, DATASET_IDX])
        ),
        vol.Optional(CONF_CLASSES, default=DEFAULT_CLASSES): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional(CONF_PER_CLASS, default=DEFAULT_PER_CLASS): _POSITIVE_INT,
        vol.Optional(CONF_INPUT_DIM, default=DEFAULT_INPUT_DIM): _POSITIVE_INT,
        vol.Optional(CONF_SEPARATION, default=DEFAULT_SEPARATION): vol.All(
            vol.Coerce(float), vol.Range(min=0.0)
        ),
        vol.Optional(CONF_IDX_IMAGES, default=None): _optional_path,
        vol.Optional(CONF_IDX_LABELS, default=None): _optional_path,
        vol.Optional(CONF_TEST_FRACTION, default=DEFAULT_TEST_FRACTION): _unit_interval(
            min_included=False, max_included=False
        ),
        vol.Optional(CONF_TEST_GROUPS, default=DEFAULT_TEST_GROUPS): _POSITIVE_INT,
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): _POSITIVE_INT,
        vol.Optional(CONF_OUT_DIR, default=DEFAULT_OUT_DIR): str,
        vol.Optional(CONF_RECORD_TIMING, default=False): vol.Boolean(),
        vol.Optional(CONF_LOG_LEVEL, default="info"): vol.All(vol.Lower, vol.In(_LOG_LEVELS)),
    },
    extra=vol.PREVENT_EXTRA,
)

OPTION_KEYS: tuple[str, ...] = tuple(str(key) for key in RUN_SCHEMA.schema)

# configuration keys whose dataclass field is named differently
_FIELD_NAMES = {
    CONF_POPULATION: "population_size",
    CONF_LAMBDA: "flip_rate",
    CONF_ROUNDS: "max_rounds",
    CONF_MINERS: "miner_count",
}


@dataclass(frozen=True)
class RunConfig:
    """A validated simulation configuration."""

    seed: int
    population_size: int
    mix: tuple[float, ...]
    flip_rate: float
    emd: float
    rational: bool
    model: str
    hidden: tuple[int, ...]
    batch_size: int
    learning_rate: float
    local_epochs: int
    dropout: float
    epsilon: float
    delta: float
    sensitivity: float
    sigma_override: float | None
    threshold: float
    aa_auto: bool
    aa_margin: float
    repeats: int
    reward_total: int
    max_rounds: int
    gas_limit: int
    miner_count: int
    local_evaluation: bool
    disclose_test_data: bool
    dataset: str
    classes: int
    per_class: int
    input_dim: int
    separation: float
    idx_images: str | None
    idx_labels: str | None
    test_fraction: float
    test_groups: int
    workers: int
    out_dir: str
    record_timing: bool
    log_level: str

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> RunConfig:
        """Validate raw values (strings or native types) against the schema."""
        try:
            data = RUN_SCHEMA(dict(values))
        except vol.Invalid as err:
            msg = f"Invalid configuration: {err}"
            raise ConfigError(msg) from err
        config = cls(**{_FIELD_NAMES.get(key, key): value for key, value in data.items()})
        config.check()
        return config

    def check(self) -> None:
        """Cross-field validation."""
        if abs(sum(self.mix) - 1.0) > 1e-9 or min(self.mix) < 0:
            msg = f"mix must be three non-negative fractions summing to 1, got {self.mix}"
            raise ConfigError(msg)
        if self.model == ModelKind.MLP and not self.hidden:
            msg = "model = mlp needs hidden layer sizes"
            raise ConfigError(msg)
        if self.model == ModelKind.LOGISTIC and self.hidden:
            msg = "model = logistic takes no hidden layers"
            raise ConfigError(msg)
        if self.dataset == DATASET_IDX and not (self.idx_images and self.idx_labels):
            msg = "dataset = idx needs idx_images and idx_labels"
            raise ConfigError(msg)
        if math.isinf(self.sensitivity) and self.sigma_override is None:
            msg = "sensitivity = inf needs sigma_override"
            raise ConfigError(msg)

    def replace(self, **changes: Any) -> RunConfig:
        """Return a copy with ``changes`` applied and re-validated."""
        config = dataclasses.replace(self, **changes)
        config.check()
        return config

    def privacy(self) -> PrivacyParams:
        """Privacy parameters for the devices."""
        return PrivacyParams(
            epsilon=self.epsilon,
            delta=self.delta,
            sensitivity=self.sensitivity,
            sigma_override=self.sigma_override,
        )

    def training(self) -> TrainingConfig:
        """Local training settings."""
        return TrainingConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            local_epochs=self.local_epochs,
            dropout_rate=self.dropout,
        )

    def model_spec(self, input_dim: int, class_count: int) -> ModelSpec:
        """Model for data of the given shape."""
        return ModelSpec(
            kind=ModelKind(self.model),
            input_dim=input_dim,
            class_count=class_count,
            hidden=self.hidden,
        )

    @property
    def run_name(self) -> str:
        """Directory-safe name of the scenario."""
        return slugify(
            f"seed {self.seed} p {self.population_size} lambda {self.flip_rate} "
            f"emd {self.emd} delta {self.delta:.3g}"
        )

    def as_dict(self) -> dict[str, Any]:
        """Configuration keyed as in the config file."""
        fields = {value: key for key, value in _FIELD_NAMES.items()}
        return {
            fields.get(name, name): list(value) if isinstance(value, tuple) else value
            for name, value in dataclasses.asdict(self).items()
        }


def read_config_file(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment and blank lines are skipped."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        msg = f"Cannot read configuration {path}: {err}"
        raise ConfigError(msg) from err
    values: dict[str, str] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition("=")
        if not separator or not key.strip():
            msg = f"{path}:{number}: expected 'key = value'"
            raise ConfigError(msg)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_config(
    path: Path | str | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Schema defaults, then the config file, then ``overrides`` (None values are ignored)."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(Path(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key.replace("-", "_")] = value
    return RunConfig.from_mapping(values)
