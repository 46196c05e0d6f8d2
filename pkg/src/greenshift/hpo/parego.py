"""ParEGO building blocks: objective normalization, weight draws, augmented Tchebycheff."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SENTINEL_NORMALIZED = 2.0
WEIGHT_GRID_STEPS = 10
DEFAULT_RHO = 0.05


@dataclass(frozen=True)
class ScalarizationWeights:
    w: tuple[float, float]
    rho: float = DEFAULT_RHO

    def __post_init__(self) -> None:
        if min(self.w) < 0 or abs(sum(self.w) - 1.0) > 1e-12:
            raise ValueError(f"weights {self.w} are not on the unit simplex")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")


@dataclass(frozen=True)
class AffineMap:
    low: float
    high: float

    def __call__(self, value: float) -> float:
        if not math.isfinite(value):
            return SENTINEL_NORMALIZED
        if self.high == self.low:
            return 0.0
        return (value - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class Normalizer:
    maps: tuple[AffineMap, ...]
    degenerate: bool = False

    def __call__(self, objectives: Sequence[float]) -> tuple[float, ...]:
        return tuple(m(v) for m, v in zip(self.maps, objectives))


def normalize_objectives(objective_vectors: Sequence[Sequence[float]]) -> Normalizer:
    """Fit per-objective maps sending the observed finite [min, max] onto [0, 1].

    Non-finite sentinels never influence the fit and map to 2.0. With fewer
    than two finite observations of an objective the map is the identity and
    ``degenerate`` is set.
    """
    data = np.asarray(objective_vectors, dtype=np.float64).reshape(-1, 2)
    maps = []
    degenerate = False
    for column in data.T:
        finite = column[np.isfinite(column)]
        if len(finite) < 2:
            maps.append(AffineMap(0.0, 1.0))
            degenerate = True
        else:
            maps.append(AffineMap(float(finite.min()), float(finite.max())))
    return Normalizer(tuple(maps), degenerate)


def parego_scalarize(obj: Sequence[float], weights: ScalarizationWeights) -> float:
    weighted = [w * f for w, f in zip(weights.w, obj)]
    return max(weighted) + weights.rho * sum(weighted)


def weight_grid(steps: int = WEIGHT_GRID_STEPS) -> list[ScalarizationWeights]:
    return [ScalarizationWeights((i / steps, 1.0 - i / steps)) for i in range(steps + 1)]


def draw_weights(seed: int, iteration: int, steps: int = WEIGHT_GRID_STEPS) -> ScalarizationWeights:
    """Uniform draw from the simplex grid, a pure function of ``(seed, iteration)``."""
    rng = np.random.default_rng([seed, iteration, 0x9A4E60])
    i = int(rng.integers(steps + 1))
    return ScalarizationWeights((i / steps, 1.0 - i / steps), DEFAULT_RHO)


LOSS_ONLY = ScalarizationWeights((1.0, 0.0), rho=0.0)
