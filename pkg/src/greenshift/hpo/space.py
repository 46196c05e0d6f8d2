"""The DSNN hyperparameter configuration space and concrete configurations."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ..optim import OptimizerKind

OPTIMIZERS = tuple(k.value for k in OptimizerKind)
SHIFT_TYPES = ("Q", "PS")
ROUNDINGS = ("deterministic", "stochastic")

# Optimizers listed for the original search space but not implemented here.
OPTIMIZER_SUBSTITUTES = {"Ranger": "SGD", "RAdam": "Adam"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))

    def contains(self, value) -> bool:
        return isinstance(value, (int, np.integer)) and not isinstance(value, bool) and self.low <= value <= self.high

    def encode(self, value) -> float:
        return 0.0 if self.high == self.low else (value - self.low) / (self.high - self.low)

    def within(self, other: IntRange) -> bool:
        return other.low <= self.low <= self.high <= other.high


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float
    log: bool = False

    def sample(self, rng: np.random.Generator) -> float:
        if self.low == self.high:
            return float(self.low)
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and self.low <= value <= self.high

    def encode(self, value) -> float:
        if self.high == self.low:
            return 0.0
        if self.log:
            return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (value - self.low) / (self.high - self.low)

    def within(self, other: RealRange) -> bool:
        return other.low <= self.low <= self.high <= other.high


@dataclass(frozen=True)
class Choice:
    options: tuple

    def sample(self, rng: np.random.Generator):
        return self.options[int(rng.integers(len(self.options)))]

    def contains(self, value) -> bool:
        return value in self.options

    def encode(self, value) -> float:
        n = len(self.options)
        return 0.0 if n == 1 else self.options.index(value) / (n - 1)

    def within(self, other: Choice) -> bool:
        return set(self.options) <= set(other.options)


@dataclass(frozen=True)
class HyperparameterConfig:
    batch_size: int
    optimizer: str
    learning_rate: float
    momentum: float
    epochs: int
    weight_bits: int
    activation_integer_bits: int
    activation_fraction_bits: int
    shift_depth: int
    shift_type: str
    rounding: str
    weight_decay: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, substitute_optimizers: bool = True) -> HyperparameterConfig:
        """Strict parse: unknown or missing keys are errors.

        With ``substitute_optimizers`` the two out-of-scope optimizer names are
        mapped to their closest implemented relative, with a warning.
        """
        names = [f.name for f in fields(cls)]
        unknown = [k for k in data if k not in names]
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(map(repr, unknown))}")
        missing = [k for k in names if k not in data]
        if missing:
            raise ConfigError(f"missing configuration key(s): {', '.join(map(repr, missing))}")
        values = dict(data)
        opt = values["optimizer"]
        if substitute_optimizers and opt in OPTIMIZER_SUBSTITUTES:
            values["optimizer"] = OPTIMIZER_SUBSTITUTES[opt]
            warnings.warn(
                f"optimizer {opt!r} is not implemented; using {values['optimizer']!r} instead",
                stacklevel=2,
            )
        for name in ("learning_rate", "momentum", "weight_decay"):
            if isinstance(values[name], int) and not isinstance(values[name], bool):
                values[name] = float(values[name])
        return cls(**values)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def key(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]


SEARCH_DIMENSIONS: dict[str, IntRange | RealRange | Choice] = {
    "batch_size": IntRange(32, 128),
    "optimizer": Choice(OPTIMIZERS),
    "learning_rate": RealRange(0.001, 0.1, log=True),
    "momentum": RealRange(0.0, 0.9),
    "epochs": IntRange(5, 100),
    "weight_bits": IntRange(2, 8),
    "activation_integer_bits": IntRange(2, 32),
    "activation_fraction_bits": IntRange(2, 32),
    "shift_depth": IntRange(0, 20),
    "shift_type": Choice(SHIFT_TYPES),
    "rounding": Choice(ROUNDINGS),
    "weight_decay": RealRange(1e-6, 1e-2, log=True),
}

PUBLISHED_DEFAULT = {
    "batch_size": 128,
    "optimizer": "SGD",
    "learning_rate": 0.1,
    "momentum": 0.9,
    "epochs": 200,
    "weight_bits": 5,
    "activation_integer_bits": 16,
    "activation_fraction_bits": 16,
    "shift_depth": 20,
    "shift_type": "PS",
    "rounding": "deterministic",
    "weight_decay": 0.0001,
}

PUBLISHED_POS1 = {
    "batch_size": 97,
    "optimizer": "Ranger",
    "learning_rate": 0.0847,
    "momentum": 0.5016,
    "epochs": 67,
    "weight_bits": 4,
    "activation_integer_bits": 4,
    "activation_fraction_bits": 4,
    "shift_depth": 5,
    "shift_type": "Q",
    "rounding": "stochastic",
    "weight_decay": 0.0026,
}

PUBLISHED_POS2 = {
    "batch_size": 102,
    "optimizer": "SGD",
    "learning_rate": 0.0798,
    "momentum": 0.6738,
    "epochs": 91,
    "weight_bits": 7,
    "activation_integer_bits": 29,
    "activation_fraction_bits": 10,
    "shift_depth": 16,
    "shift_type": "Q",
    "rounding": "deterministic",
    "weight_decay": 0.00012,
}


class ConfigSpace:
    def __init__(self, dimensions: dict | None = None):
        self.dimensions = dict(SEARCH_DIMENSIONS if dimensions is None else dimensions)
        if list(self.dimensions) != list(SEARCH_DIMENSIONS):
            raise ConfigError("a configuration space must define every dimension, in canonical order")

    @classmethod
    def with_overrides(cls, overrides: dict | None) -> ConfigSpace:
        """Narrow dimensions; ``[low, high]`` for ranges, a list of options for choices."""
        dims = dict(SEARCH_DIMENSIONS)
        for name, value in (overrides or {}).items():
            if name not in dims:
                raise ConfigError(f"unknown configuration dimension {name!r}")
            base = dims[name]
            if isinstance(base, Choice):
                new = Choice(tuple(value))
            elif isinstance(base, IntRange):
                new = IntRange(int(value[0]), int(value[1]))
            else:
                new = RealRange(float(value[0]), float(value[1]), base.log)
            if isinstance(new, (IntRange, RealRange)) and new.low > new.high:
                raise ConfigError(f"{name}: empty range {list(value)}")
            if not new.within(base):
                raise ConfigError(f"{name}: override {value!r} leaves the allowed range")
            dims[name] = new
        return cls(dims)

    def pinned(self, **values) -> ConfigSpace:
        """Copy of the space with the given dimensions fixed to one value."""
        dims = dict(self.dimensions)
        for name, value in values.items():
            base = dims[name]
            if isinstance(base, Choice):
                dims[name] = Choice((value,))
            elif isinstance(base, IntRange):
                dims[name] = IntRange(value, value)
            else:
                dims[name] = RealRange(value, value, base.log)
        return ConfigSpace(dims)

    def validate(self, config: HyperparameterConfig) -> None:
        for name, dim in self.dimensions.items():
            value = getattr(config, name)
            if not dim.contains(value):
                raise ConfigError(f"{name}={value!r} is outside the configuration space")

    def encode(self, config: HyperparameterConfig) -> np.ndarray:
        return np.array([dim.encode(getattr(config, name)) for name, dim in self.dimensions.items()])

    def clamp(self, values: dict) -> HyperparameterConfig:
        """Force numeric values into their ranges (used for published defaults)."""
        out = dict(values)
        for name, dim in self.dimensions.items():
            if isinstance(dim, (IntRange, RealRange)):
                out[name] = type(out[name])(min(max(out[name], dim.low), dim.high))
        return HyperparameterConfig(**out)


def sample_config(space: ConfigSpace, rng: np.random.Generator) -> HyperparameterConfig:
    return HyperparameterConfig(**{name: dim.sample(rng) for name, dim in space.dimensions.items()})


def default_config(space: ConfigSpace | None = None) -> HyperparameterConfig:
    """The published default, with its 200 epochs clamped into the 5-100 search range."""
    return (space or ConfigSpace()).clamp(PUBLISHED_DEFAULT)


def preset(name: str) -> HyperparameterConfig:
    presets = {"default": None, "pos1": PUBLISHED_POS1, "pos2": PUBLISHED_POS2}
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    if name == "default":
        return default_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return HyperparameterConfig.from_dict(presets[name])


def with_values(config: HyperparameterConfig, **changes) -> HyperparameterConfig:
    return replace(config, **changes)
