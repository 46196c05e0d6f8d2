"""Deterministic energy and emissions proxy built from operation counts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .network import OpCounts

JOULES_PER_KWH = 3.6e6


@dataclass(frozen=True)
class EnergyModel:
    """Per-operation energy costs in joules plus grid carbon intensity (gCO2eq/kWh).

    Defaults are order-of-magnitude 45 nm figures; results are meant to be
    compared relative to each other.
    """

    joules_per_multiply: float = 3.7e-12
    joules_per_add: float = 0.9e-12
    joules_per_shift: float = 0.13e-12
    joules_per_sign_flip: float = 0.05e-12
    overhead_joules_per_sample: float = 1e-6
    carbon_intensity: float = 400.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")
        if self.joules_per_shift > self.joules_per_multiply:
            raise ValueError("joules_per_shift must not exceed joules_per_multiply")

    @classmethod
    def from_dict(cls, overrides: dict | None) -> EnergyModel:
        overrides = dict(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown energy model field(s): {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in overrides.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnergyReport:
    total_joules: float
    emissions_g: float
    op_totals: OpCounts = field(default_factory=OpCounts)
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_joules": self.total_joules,
            "emissions_g": self.emissions_g,
            "op_totals": asdict(self.op_totals),
            "wall_seconds": self.wall_seconds,
        }


def joules_to_emissions(joules: float, carbon_intensity: float) -> float:
    return joules / JOULES_PER_KWH * carbon_intensity


def estimate_energy(
    ops: OpCounts, samples_processed: int, model: EnergyModel | None = None, wall_seconds: float = 0.0
) -> EnergyReport:
    model = model or EnergyModel()
    total = (
        ops.multiplies * model.joules_per_multiply
        + ops.adds * model.joules_per_add
        + ops.shifts * model.joules_per_shift
        + ops.sign_flips * model.joules_per_sign_flip
        + samples_processed * model.overhead_joules_per_sample
    )
    return EnergyReport(total, joules_to_emissions(total, model.carbon_intensity), ops, wall_seconds)


def compare_report(a: EnergyReport, b: EnergyReport) -> int:
    """Three-way comparison by emissions, ties broken by total joules."""
    ka = (a.emissions_g, a.total_joules)
    kb = (b.emissions_g, b.total_joules)
    return (ka > kb) - (ka < kb)
