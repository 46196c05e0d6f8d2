"""Pareto dominance and the non-dominated archive."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True if ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated_mask(points: np.ndarray) -> np.ndarray:
    """Brute-force O(n^2) filter, kept deliberately simple."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and dominates(points[j], points[i]):
                keep[i] = False
                break
    return keep


@dataclass
class ParetoArchive:
    """Non-dominated set over the highest-fidelity evaluation of every configuration.

    Records are any objects with ``config_key``, ``fidelity`` and ``objectives``
    attributes (``objectives`` being a ``(loss, emissions)`` pair).
    """

    entries: list = field(default_factory=list)
    _eligible: dict = field(default_factory=dict, repr=False)

    def update(self, record) -> bool:
        """Offer ``record``; returns whether it is in the archive afterwards."""
        if not all(math.isfinite(v) for v in record.objectives):
            return False
        key = record.config_key
        previous = self._eligible.get(key)
        if previous is not None and previous.fidelity > record.fidelity:
            return False
        self._eligible[key] = record
        if previous is not None:
            # A superseded entry may have been shadowing others; rebuild from scratch.
            self._rebuild()
            return any(e is record for e in self.entries)
        if any(dominates(e.objectives, record.objectives) for e in self.entries):
            return False
        self.entries = [e for e in self.entries if not dominates(record.objectives, e.objectives)]
        self.entries.append(record)
        return True

    def _rebuild(self) -> None:
        candidates = list(self._eligible.values())
        kept = []
        for r in candidates:
            if not any(dominates(o.objectives, r.objectives) for o in candidates if o is not r):
                kept.append(r)
        order = {id(r): i for i, r in enumerate(self._insertion_order(candidates))}
        self.entries = sorted(kept, key=lambda r: order[id(r)])

    @staticmethod
    def _insertion_order(records: list) -> list:
        return sorted(records, key=lambda r: getattr(r, "index", 0))

    def points(self) -> np.ndarray:
        return np.array([e.objectives for e in self.entries], dtype=np.float64).reshape(-1, 2)


def update_archive(archive: ParetoArchive, record) -> ParetoArchive:
    archive.update(record)
    return archive
