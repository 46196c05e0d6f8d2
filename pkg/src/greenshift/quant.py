"""Power-of-two weight quantization and fixed-point activation quantization.

Two training flavours are supported:

* ``Q``: float master weights are snapped to the nearest signed power of two.
* ``PS``: trainable real-valued shift exponents and sign values are rounded
  directly into a shift/sign pair.

Everything here is a pure function of its inputs plus an explicitly passed
``numpy.random.Generator``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

MIN_WEIGHT_BITS = 2
MAX_WEIGHT_BITS = 8


class InvalidInputError(ValueError):
    """Raised for non-finite or malformed quantizer inputs."""


class RoundingMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class FixedPointFormat:
    integer_bits: int
    fraction_bits: int

    def __post_init__(self) -> None:
        for name in ("integer_bits", "fraction_bits"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 1 <= value <= 32:
                raise InvalidInputError(f"{name} must be an integer in [1, 32], got {value!r}")

    @property
    def step(self) -> float:
        return 2.0 ** -self.fraction_bits

    @property
    def lower(self) -> float:
        return -(2.0 ** (self.integer_bits - 1))

    @property
    def upper(self) -> float:
        return 2.0 ** (self.integer_bits - 1) - self.step


@dataclass
class ShiftWeights:
    """Sign matrix in {-1, 0, +1} plus integer base-2 exponents."""

    signs: np.ndarray
    powers: np.ndarray

    def __post_init__(self) -> None:
        self.signs = np.asarray(self.signs, dtype=np.int8)
        self.powers = np.asarray(self.powers, dtype=np.int64)
        if self.signs.shape != self.powers.shape:
            raise InvalidInputError(
                f"signs shape {self.signs.shape} != powers shape {self.powers.shape}"
            )
        if (np.abs(self.signs) > 1).any():
            raise InvalidInputError("signs must lie in {-1, 0, +1}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.signs.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ShiftWeights):
            return NotImplemented
        return np.array_equal(self.signs, other.signs) and np.array_equal(self.powers, other.powers)


def power_range(weight_bits: int, p_offset: int = 0) -> tuple[int, int]:
    """Return ``(p_min, p_max)``: one sign bit plus ``weight_bits - 1`` exponent bits."""
    if not MIN_WEIGHT_BITS <= weight_bits <= MAX_WEIGHT_BITS:
        raise InvalidInputError(
            f"weight_bits must be in [{MIN_WEIGHT_BITS}, {MAX_WEIGHT_BITS}], got {weight_bits}"
        )
    p_max = p_offset
    p_min = -(2 ** (weight_bits - 1) - 1) + p_offset
    return p_min, p_max


def _check_finite(x: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        index = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidInputError(f"non-finite {what} at index {index}: {x[index]!r}")


def round_array(
    x: np.ndarray, mode: RoundingMode | str, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Round to integers; ties to even (deterministic) or unbiased stochastic rounding."""
    mode = RoundingMode(mode)
    x = np.asarray(x, dtype=np.float64)
    if mode is RoundingMode.DETERMINISTIC:
        return np.rint(x)
    if rng is None:
        raise InvalidInputError("stochastic rounding needs a random generator")
    floor = np.floor(x)
    return floor + (rng.random(x.shape) < (x - floor))


def round_value(x: float, mode: RoundingMode | str, rng: np.random.Generator | None = None) -> int:
    return int(round_array(np.asarray(x), mode, rng))


def quantize_q(
    w: np.ndarray,
    weight_bits: int,
    mode: RoundingMode | str = RoundingMode.DETERMINISTIC,
    rng: np.random.Generator | None = None,
    p_offset: int = 0,
) -> ShiftWeights:
    """Snap float weights to the nearest signed power of two.

    Zero weights get sign 0 and the minimum power; magnitudes outside the
    representable range saturate at the clamp bounds.
    """
    w = np.asarray(w, dtype=np.float64)
    _check_finite(w, "weight")
    p_min, p_max = power_range(weight_bits, p_offset)
    signs = np.sign(w).astype(np.int8)
    nonzero = signs != 0
    magnitude = np.where(nonzero, np.abs(w), 1.0)
    powers = round_array(np.log2(magnitude), mode, rng)
    powers = np.where(nonzero, np.clip(powers, p_min, p_max), p_min)
    return ShiftWeights(signs, powers.astype(np.int64))


def quantize_ps(
    raw_powers: np.ndarray,
    raw_signs: np.ndarray,
    weight_bits: int,
    mode: RoundingMode | str = RoundingMode.DETERMINISTIC,
    rng: np.random.Generator | None = None,
    p_offset: int = 0,
) -> ShiftWeights:
    """Round trainable shift exponents and sign values into a shift/sign pair.

    The rounding mode applies to the exponents; signs are always rounded to
    nearest (ties to even) so a sign never flips at random.
    """
    raw_powers = np.asarray(raw_powers, dtype=np.float64)
    raw_signs = np.asarray(raw_signs, dtype=np.float64)
    if raw_powers.shape != raw_signs.shape:
        raise InvalidInputError(
            f"raw_powers shape {raw_powers.shape} != raw_signs shape {raw_signs.shape}"
        )
    _check_finite(raw_powers, "raw power")
    _check_finite(raw_signs, "raw sign")
    p_min, p_max = power_range(weight_bits, p_offset)
    powers = np.clip(round_array(raw_powers, mode, rng), p_min, p_max)
    signs = np.sign(np.rint(raw_signs)).astype(np.int8)
    return ShiftWeights(signs, powers.astype(np.int64))


def dequantize(sw: ShiftWeights) -> np.ndarray:
    # ldexp scales by an exact power of two, so no rounding happens here.
    return np.ldexp(sw.signs.astype(np.float64), sw.powers)


def quantize_activation(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Clamp to the signed fixed-point range, then round onto its grid (ties to even)."""
    x = np.clip(np.asarray(x, dtype=np.float64), fmt.lower, fmt.upper)
    scale = 2.0 ** fmt.fraction_bits
    return np.rint(x * scale) / scale


def activation_pass_mask(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Straight-through mask: 1 inside the clamp range, 0 where the quantizer saturates."""
    return (x >= fmt.lower) & (x <= fmt.upper)
