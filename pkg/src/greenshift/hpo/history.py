"""Run history (the observation log) and its JSON-lines persistence."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .space import HyperparameterConfig

HISTORY_SCHEMA = "greenshift.runhistory/1"
PARETO_SCHEMA = "greenshift.pareto/1"
INCUMBENT_SCHEMA = "greenshift.incumbent/1"


class HistoryCorruptedError(ValueError):
    pass


@dataclass
class Record:
    index: int
    config: HyperparameterConfig
    fidelity: int
    seed: int
    loss: float
    emissions: float
    val_accuracy: float = 0.0
    test_accuracy: float = 0.0
    total_joules: float = 0.0
    diverged: bool = False
    wall_seconds: float = 0.0

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.loss, self.emissions)

    @property
    def config_key(self) -> str:
        return self.config.key()

    @property
    def finite(self) -> bool:
        return math.isfinite(self.loss) and math.isfinite(self.emissions)

    def payload(self) -> dict:
        """Reproducible content of the record; wall time lives in the sidecar."""
        return {
            "schema": HISTORY_SCHEMA,
            "index": self.index,
            "config_id": self.config_key,
            "config": self.config.to_dict(),
            "fidelity": self.fidelity,
            "seed": self.seed,
            "objectives": {
                "loss": self.loss if math.isfinite(self.loss) else None,
                "emissions": self.emissions,
            },
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "total_joules": self.total_joules,
            "diverged": self.diverged,
        }

    def to_line(self) -> str:
        body = self.payload()
        body["sha256"] = _digest(body)
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_payload(cls, data: dict) -> Record:
        loss = data["objectives"]["loss"]
        return cls(
            index=data["index"],
            config=HyperparameterConfig.from_dict(data["config"], substitute_optimizers=False),
            fidelity=data["fidelity"],
            seed=data["seed"],
            loss=math.inf if loss is None else loss,
            emissions=data["objectives"]["emissions"],
            val_accuracy=data["val_accuracy"],
            test_accuracy=data["test_accuracy"],
            total_joules=data["total_joules"],
            diverged=data["diverged"],
        )

    def same_evaluation(self, other: Record) -> bool:
        return (
            self.index == other.index
            and self.config == other.config
            and self.fidelity == other.fidelity
            and self.seed == other.seed
        )


def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunHistory:
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: Record) -> None:
        if record.index != len(self.records):
            raise ValueError(f"record index {record.index} does not follow {len(self.records)}")
        self.records.append(record)

    def evaluated(self, config: HyperparameterConfig, fidelity: int) -> bool:
        return any(r.fidelity == fidelity and r.config == config for r in self.records)

    def highest_fidelity_records(self) -> list[Record]:
        """One record per configuration: its evaluation at the highest fidelity (latest on ties)."""
        best: dict[str, Record] = {}
        for r in self.records:
            key = r.config_key
            if key not in best or r.fidelity >= best[key].fidelity:
                best[key] = r
        return sorted(best.values(), key=lambda r: r.index)

    def to_jsonl(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)


def load_history(path: str | Path) -> RunHistory:
    """Parse and checksum-verify a runhistory file."""
    history = RunHistory()
    text = Path(path).read_text(encoding="utf-8")
    if text and not text.endswith("\n"):
        raise HistoryCorruptedError(f"{path}: last line is truncated")
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            data = json.loads(line)
            stored = data.pop("sha256")
        except (json.JSONDecodeError, KeyError, AttributeError) as exc:
            raise HistoryCorruptedError(f"{path}:{lineno}: unreadable record ({exc})") from exc
        if _digest(data) != stored:
            raise HistoryCorruptedError(f"{path}:{lineno}: checksum mismatch")
        if data.get("schema") != HISTORY_SCHEMA:
            raise HistoryCorruptedError(f"{path}:{lineno}: unknown schema {data.get('schema')!r}")
        try:
            history.append(Record.from_payload(data))
        except (KeyError, TypeError, ValueError) as exc:
            raise HistoryCorruptedError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return history


class HistoryWriter:
    """Appends records durably: one line in the history, one in the timing sidecar."""

    def __init__(self, path: str | Path, truncate: bool = True):
        self.path = Path(path)
        self.meta_path = self.path.with_suffix(".meta.jsonl")
        if truncate:
            self.path.write_text("", encoding="utf-8")
            self.meta_path.write_text("", encoding="utf-8")

    def __call__(self, record: Record) -> None:
        self._append(self.path, record.to_line())
        meta = {
            "index": record.index,
            "wall_seconds": record.wall_seconds,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        self._append(self.meta_path, json.dumps(meta, sort_keys=True))

    @staticmethod
    def _append(path: Path, line: str) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def archive_to_json(entries: list[Record]) -> str:
    body = {
        "schema": PARETO_SCHEMA,
        "entries": [
            {
                "index": r.index,
                "config_id": r.config_key,
                "config": r.config.to_dict(),
                "fidelity": r.fidelity,
                "loss": r.loss,
                "emissions": r.emissions,
                "val_accuracy": r.val_accuracy,
                "test_accuracy": r.test_accuracy,
            }
            for r in entries
        ],
    }
    return json.dumps(body, indent=2, sort_keys=True) + "\n"
