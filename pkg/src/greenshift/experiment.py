"""Experiment configuration files (JSON) for the command-line workflows."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSplits, load_cifar, load_idx, split_dataset, synthetic_splits
from .energy import EnergyModel
from .hpo.space import ConfigSpace


class ExperimentError(ValueError):
    pass


_TOP_KEYS = {"dataset", "subset", "space", "energy", "hpo", "include_test_energy", "out"}
_HPO_KEYS = {"budget", "seed", "eta", "min_fidelity", "max_fidelity", "n_candidates"}
_DATASET_KEYS = {
    "synthetic": {"kind", "seed", "num_classes", "image_size", "blobs_per_class", "jitter", "noise"},
    "idx": {"kind", "images", "labels", "pool", "seed"},
    "cifar": {"kind", "paths", "pool", "seed"},
}


def _strict(section: str, data: dict, allowed: set) -> None:
    if not isinstance(data, dict):
        raise ExperimentError(f"{section} must be an object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ExperimentError(f"unknown key(s) in {section}: {', '.join(unknown)}")


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "seed": 0})
    subset: dict = field(default_factory=lambda: {"train": 4000, "val": 1000, "test": 1000})
    space: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    hpo: dict = field(default_factory=lambda: {"budget": 33, "seed": 0, "eta": 2, "min_fidelity": 1, "max_fidelity": 5})
    include_test_energy: bool = False
    out: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> ExperimentConfig:
        _strict("experiment", data, _TOP_KEYS)
        cfg = cls(base_dir=base_dir or Path.cwd())
        if "dataset" in data:
            kind = data["dataset"].get("kind") if isinstance(data["dataset"], dict) else None
            if kind not in _DATASET_KEYS:
                raise ExperimentError(f"dataset.kind must be one of {sorted(_DATASET_KEYS)}, got {kind!r}")
            _strict("dataset", data["dataset"], _DATASET_KEYS[kind])
            cfg.dataset = dict(data["dataset"])
        if "subset" in data:
            _strict("subset", data["subset"], {"train", "val", "test"})
            cfg.subset = {**cfg.subset, **data["subset"]}
        for name in ("train", "val", "test"):
            value = cfg.subset[name]
            if not isinstance(value, int) or value < 1:
                raise ExperimentError(f"subset.{name} must be a positive integer")
        if "hpo" in data:
            _strict("hpo", data["hpo"], _HPO_KEYS)
            cfg.hpo = {**cfg.hpo, **data["hpo"]}
        cfg.space = dict(data.get("space", {}))
        cfg.energy = dict(data.get("energy", {}))
        cfg.include_test_energy = bool(data.get("include_test_energy", False))
        cfg.out = data.get("out")
        try:
            cfg.config_space()
            cfg.energy_model()
        except ValueError as exc:
            raise ExperimentError(str(exc)) from exc
        for path in cfg._paths():
            if not path.exists():
                raise ExperimentError(f"dataset file not found: {path}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ExperimentError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=path.resolve().parent)

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def _paths(self) -> list[Path]:
        kind = self.dataset["kind"]
        if kind == "idx":
            return [self._resolve(self.dataset["images"]), self._resolve(self.dataset["labels"])]
        if kind == "cifar":
            return [self._resolve(p) for p in self.dataset["paths"]]
        return []

    def config_space(self) -> ConfigSpace:
        return ConfigSpace.with_overrides(self.space)

    def energy_model(self) -> EnergyModel:
        return EnergyModel.from_dict(self.energy)

    def load_splits(self) -> DatasetSplits:
        d = self.dataset
        n = self.subset
        seed = d.get("seed", 0)
        if d["kind"] == "synthetic":
            kwargs = {k: v for k, v in d.items() if k not in ("kind", "seed")}
            return synthetic_splits(n["train"], n["val"], n["test"], seed=seed, **kwargs)
        if d["kind"] == "idx":
            images, labels = self._paths()
            x, y = load_idx(images, labels, pool=d.get("pool", 1))
        else:
            x, y = load_cifar(self._paths(), pool=d.get("pool", 1))
        return split_dataset(x, y, n["train"], n["val"], n["test"], seed=seed)
