"""HyperBand bracket schedules over integer shift-depth fidelities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Round:
    num_configs: int
    fidelity: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rounds: tuple[Round, ...]

    @property
    def budget(self) -> int:
        return sum(r.num_configs * r.fidelity for r in self.rounds)


@dataclass(frozen=True)
class HyperBandSchedule:
    eta: int
    min_fidelity: int
    max_fidelity: int
    brackets: tuple[Bracket, ...]

    @property
    def evaluations_per_iteration(self) -> int:
        return sum(r.num_configs for b in self.brackets for r in b.rounds)


def _floor_log(x: float, base: int) -> int:
    s = int(math.floor(math.log(x, base)))
    # guard against log rounding just below an exact power
    while base ** (s + 1) <= x:
        s += 1
    while s > 0 and base**s > x:
        s -= 1
    return s


def build_schedule(min_f: int, max_f: int, eta: int) -> HyperBandSchedule:
    """Brackets ordered most exploratory first (``s = s_max`` down to 0).

    Bracket ``s`` starts ``ceil((s_max + 1) / (s + 1) * eta**s)`` configs at
    fidelity ``max_f * eta**-s``; every round keeps ``floor(n / eta)`` and
    multiplies the fidelity by ``eta``.
    """
    if eta < 2:
        raise ValueError(f"eta must be >= 2, got {eta}")
    if min_f < 1 or max_f < min_f:
        raise ValueError(f"need 1 <= min_f <= max_f, got min_f={min_f}, max_f={max_f}")
    if min_f == max_f:
        return HyperBandSchedule(eta, min_f, max_f, (Bracket(0, (Round(1, max_f),)),))
    s_max = _floor_log(max_f / min_f, eta)
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) * eta**s / (s + 1))
        rounds = []
        for i in range(s + 1):
            n_i = n // eta**i
            fidelity = min(max_f, max(min_f, round(max_f * eta ** (i - s))))
            if n_i < 1:
                break
            if rounds and fidelity <= rounds[-1].fidelity:
                # integer rounding collapsed two rounds onto one depth; keep the smaller cohort
                rounds[-1] = Round(n_i, fidelity)
                continue
            rounds.append(Round(n_i, fidelity))
        brackets.append(Bracket(s, tuple(rounds)))
    return HyperBandSchedule(eta, min_f, max_f, tuple(brackets))


def promote(scores: Sequence[float], eta: int, final_round: bool = False) -> list[int]:
    """Indices of survivors: the ``floor(n / eta)`` smallest scores, ties to the earlier entry.

    On the final round every entry "survives" (there is nowhere to promote to).
    """
    if not scores:
        raise ValueError("no results to promote from")
    if final_round:
        return list(range(len(scores)))
    return top_k(scores, len(scores) // eta)


def top_k(scores: Sequence[float], k: int) -> list[int]:
    """Indices of the ``k`` smallest scores in original order; stable on ties."""
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    return sorted(order[:k])
