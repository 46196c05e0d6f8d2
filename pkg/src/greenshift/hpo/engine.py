"""Multi-fidelity (HyperBand over shift depth) and multi-objective (ParEGO) search loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data import DatasetSplits
from ..energy import EnergyModel
from ..network import LayerSpec, build_network, desk_cnn
from ..trainer import train
from .history import HistoryCorruptedError, Record, RunHistory
from .hyperband import HyperBandSchedule, build_schedule, top_k
from .parego import LOSS_ONLY, ScalarizationWeights, draw_weights, normalize_objectives, parego_scalarize
from .pareto import ParetoArchive
from .space import ConfigSpace, HyperparameterConfig, sample_config
from .surrogate import InsufficientDataError, RandomForestSurrogate, expected_improvement

log = logging.getLogger(__name__)

N_CANDIDATES = 500
RANDOM_INTERLEAVE = 5

Evaluator = Callable[[HyperparameterConfig, int, int], dict]


@dataclass
class SearchSettings:
    budget: int
    seed: int = 0
    eta: int = 2
    min_fidelity: int = 1
    max_fidelity: int = 5
    n_candidates: int = N_CANDIDATES

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be at least 1")


@dataclass
class SurrogateModel:
    forest: RandomForestSurrogate
    space: ConfigSpace
    max_fidelity: int
    incumbents: dict[int, float]
    best: float

    def features(self, configs: list[HyperparameterConfig], fidelity: int) -> np.ndarray:
        X = np.array([self.space.encode(c) for c in configs])
        return np.hstack([X, np.full((len(configs), 1), fidelity / self.max_fidelity)])

    def predict(self, configs: list[HyperparameterConfig], fidelity: int) -> tuple[np.ndarray, np.ndarray]:
        return self.forest.predict(self.features(configs, fidelity))

    def incumbent(self, fidelity: int) -> float:
        return self.incumbents.get(fidelity, self.best)


def scalar_targets(records: list[Record], weights: ScalarizationWeights, history: RunHistory) -> list[float]:
    """ParEGO scalars of ``records`` under a normalization fitted on the whole history."""
    normalizer = normalize_objectives([r.objectives for r in history])
    return [parego_scalarize(normalizer(r.objectives), weights) for r in records]


def fit_surrogate(
    history: RunHistory,
    weights: ScalarizationWeights,
    space: ConfigSpace,
    max_fidelity: int,
    rng: np.random.Generator,
) -> SurrogateModel:
    """Fit the forest on scalarized, normalized objectives; diverged runs enter as 2.0 after normalization."""
    if sum(r.finite for r in history) < 2:
        raise InsufficientDataError("need at least 2 finite observations")
    records = list(history)
    y = np.array(scalar_targets(records, weights, history))
    proto = SurrogateModel(None, space, max_fidelity, {}, float(y.min()))
    X = np.vstack([proto.features([r.config], r.fidelity) for r in records])
    proto.forest = RandomForestSurrogate.fit(X, y, rng)
    for r, target in zip(records, y):
        proto.incumbents[r.fidelity] = min(proto.incumbents.get(r.fidelity, math.inf), float(target))
    return proto


def suggest(
    space: ConfigSpace,
    surrogate: SurrogateModel | None,
    history: RunHistory,
    rng: np.random.Generator,
    n_candidates: int = N_CANDIDATES,
    fidelity: int = 1,
    exclude: list[HyperparameterConfig] = (),
    force_random: bool = False,
) -> HyperparameterConfig:
    """Best expected-improvement config among random candidates, or a random config.

    Configs already evaluated at ``fidelity`` (or listed in ``exclude``) are never returned.
    """

    def fresh(c: HyperparameterConfig) -> bool:
        return c not in exclude and not history.evaluated(c, fidelity)

    if surrogate is None or force_random:
        for _ in range(10_000):
            config = sample_config(space, rng)
            if fresh(config):
                return config
        raise RuntimeError("configuration space exhausted")
    candidates = [sample_config(space, rng) for _ in range(n_candidates)]
    mean, var = surrogate.predict(candidates, fidelity)
    ei = expected_improvement(mean, var, surrogate.incumbent(fidelity))
    for i in np.argsort(-ei, kind="stable"):
        if fresh(candidates[i]):
            return candidates[i]
    return suggest(space, None, history, rng, n_candidates, fidelity, exclude, force_random=True)


class _BudgetExhausted(Exception):
    pass


@dataclass
class SearchResult:
    history: RunHistory
    archive: ParetoArchive
    incumbent: Record | None = None
    completed: bool = True
    schedule: HyperBandSchedule | None = None
    weights_used: list[ScalarizationWeights] = field(default_factory=list)


class _Search:
    def __init__(
        self,
        space: ConfigSpace,
        evaluator: Evaluator,
        settings: SearchSettings,
        multi_objective: bool,
        replay: RunHistory | None,
        on_record: Callable[[Record], None] | None,
        stop_after: int | None,
    ):
        if not 0 <= settings.max_fidelity <= space.dimensions["shift_depth"].high:
            raise ValueError("max_fidelity lies outside the shift_depth range")
        # shift depth is the fidelity axis, so it is not searched as a hyperparameter
        self.space = space.pinned(shift_depth=settings.max_fidelity)
        self.evaluator = evaluator
        self.settings = settings
        self.multi_objective = multi_objective
        self.replay = replay or RunHistory()
        self.on_record = on_record
        self.limit = settings.budget if stop_after is None else min(stop_after, settings.budget)
        self.history = RunHistory()
        self.archive = ParetoArchive()
        self.rng = np.random.default_rng([settings.seed, 1])
        self.suggestions = 0
        self.weights_used: list[ScalarizationWeights] = []
        if len(self.replay) > settings.budget:
            raise HistoryCorruptedError("persisted history is longer than the evaluation budget")

    def evaluate(self, config: HyperparameterConfig, fidelity: int) -> Record:
        if len(self.history) >= self.limit:
            raise _BudgetExhausted
        index = len(self.history)
        seed = self.settings.seed
        if index < len(self.replay):
            record = self.replay.records[index]
            expected = Record(index, config, fidelity, seed, 0.0, 0.0)
            if not record.same_evaluation(expected):
                raise HistoryCorruptedError(
                    f"persisted record {index} does not match this run (different experiment or seed?)"
                )
        else:
            result = self.evaluator(config, fidelity, seed)
            record = Record(index=index, config=config, fidelity=fidelity, seed=seed, **result)
            if self.on_record is not None:
                self.on_record(record)
        self.history.append(record)
        self.archive.update(record)
        log.info(
            "eval %d fidelity=%d loss=%.4g emissions=%.4g", index, fidelity, record.loss, record.emissions
        )
        return record

    def run(self, schedule: HyperBandSchedule) -> bool:
        iteration = 0
        try:
            while True:
                for bracket in schedule.brackets:
                    weights = draw_weights(self.settings.seed, iteration) if self.multi_objective else LOSS_ONLY
                    self.weights_used.append(weights)
                    self.run_bracket(bracket, weights)
                    iteration += 1
        except _BudgetExhausted:
            return len(self.history) >= self.settings.budget

    def run_bracket(self, bracket, weights: ScalarizationWeights) -> None:
        first = bracket.rounds[0]
        try:
            surrogate = fit_surrogate(
                self.history, weights, self.space, self.settings.max_fidelity, self.rng
            )
        except InsufficientDataError:
            surrogate = None
        cohort: list[HyperparameterConfig] = []
        for _ in range(first.num_configs):
            force_random = self.suggestions % RANDOM_INTERLEAVE == RANDOM_INTERLEAVE - 1
            self.suggestions += 1
            cohort.append(
                suggest(
                    self.space, surrogate, self.history, self.rng,
                    self.settings.n_candidates, first.fidelity, cohort, force_random,
                )
            )
        for i, rnd in enumerate(bracket.rounds):
            results = [self.evaluate(config, rnd.fidelity) for config in cohort]
            if i + 1 == len(bracket.rounds):
                break
            if self.multi_objective:
                scores = scalar_targets(results, weights, self.history)
            else:
                scores = [r.loss for r in results]
            # equals promote(scores, eta) unless integer fidelities merged two rounds
            survivors = top_k(scores, bracket.rounds[i + 1].num_configs)
            cohort = [cohort[j] for j in survivors]
            if not cohort:
                break


def mf_incumbent(history: RunHistory) -> Record | None:
    """Lowest validation loss among finite records at the highest fidelity evaluated; earliest on ties."""
    finite = [r for r in history if r.finite]
    if not finite:
        return None
    top = max(r.fidelity for r in finite)
    return min((r for r in finite if r.fidelity == top), key=lambda r: (r.loss, r.index))


def run_search(
    space: ConfigSpace,
    evaluator: Evaluator,
    settings: SearchSettings,
    multi_objective: bool,
    replay: RunHistory | None = None,
    on_record: Callable[[Record], None] | None = None,
    stop_after: int | None = None,
) -> SearchResult:
    schedule = build_schedule(settings.min_fidelity, settings.max_fidelity, settings.eta)
    search = _Search(space, evaluator, settings, multi_objective, replay, on_record, stop_after)
    completed = search.run(schedule)
    incumbent = None if multi_objective else mf_incumbent(search.history)
    return SearchResult(search.history, search.archive, incumbent, completed, schedule, search.weights_used)


def make_train_evaluator(
    splits: DatasetSplits,
    energy_model: EnergyModel | None = None,
    arch: list[LayerSpec] | None = None,
    include_test_energy: bool = False,
) -> Evaluator:
    """Evaluator that trains a freshly initialized network per call (no warm starts across fidelities)."""
    arch = arch or desk_cnn(splits.input_shape, splits.num_classes)

    def evaluate(config: HyperparameterConfig, fidelity: int, seed: int) -> dict:
        model = build_network(arch, splits.input_shape, seed)
        _, outcome = train(model, splits, config, fidelity, seed, energy_model, include_test_energy)
        return {
            "loss": outcome.val_loss,
            "emissions": outcome.energy.emissions_g,
            "val_accuracy": outcome.val_accuracy,
            "test_accuracy": outcome.test_accuracy,
            "total_joules": outcome.energy.total_joules,
            "diverged": outcome.diverged,
            "wall_seconds": outcome.wall_seconds,
        }

    return evaluate


def run_mfmo(
    space: ConfigSpace,
    splits: DatasetSplits,
    energy_model: EnergyModel | None,
    budget: int,
    seed: int,
    **kwargs,
) -> tuple[RunHistory, ParetoArchive]:
    settings, evaluator, extra = _prepare(splits, energy_model, budget, seed, kwargs)
    result = run_search(space, evaluator, settings, multi_objective=True, **extra)
    return result.history, result.archive


def run_mf_single(
    space: ConfigSpace,
    splits: DatasetSplits,
    energy_model: EnergyModel | None,
    budget: int,
    seed: int,
    **kwargs,
) -> tuple[RunHistory, Record | None]:
    settings, evaluator, extra = _prepare(splits, energy_model, budget, seed, kwargs)
    result = run_search(space, evaluator, settings, multi_objective=False, **extra)
    return result.history, result.incumbent


def _prepare(splits, energy_model, budget, seed, kwargs):
    arch = kwargs.pop("arch", None)
    include_test_energy = kwargs.pop("include_test_energy", False)
    extra = {k: kwargs.pop(k) for k in ("replay", "on_record", "stop_after") if k in kwargs}
    settings = SearchSettings(budget=budget, seed=seed, **kwargs)
    evaluator = make_train_evaluator(splits, energy_model, arch, include_test_energy)
    return settings, evaluator, extra
