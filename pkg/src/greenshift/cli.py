"""Command-line entry point: ``greenshift train | optimize | report``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import DatasetError
from .experiment import ExperimentConfig, ExperimentError
from .hpo.engine import SearchSettings, make_train_evaluator, run_search
from .hpo.history import (
    INCUMBENT_SCHEMA,
    HistoryCorruptedError,
    HistoryWriter,
    Record,
    RunHistory,
    archive_to_json,
    load_history,
)
from .hpo.pareto import non_dominated_mask
from .hpo.space import ConfigError, ConfigSpace, HyperparameterConfig, preset
from .network import build_network, desk_cnn
from .trainer import train

log = logging.getLogger("greenshift")

EXIT_OK = 0
EXIT_ERROR = 1

TABLE_ROWS = [
    ("Batch Size", "batch_size"),
    ("Optimizer", "optimizer"),
    ("Learning Rate", "learning_rate"),
    ("Momentum", "momentum"),
    ("Epochs", "epochs"),
    ("Weight Bits", "weight_bits"),
    ("Activation Integer Bits", "activation_integer_bits"),
    ("Activation Fraction Bits", "activation_fraction_bits"),
    ("Shift Depth", "shift_depth"),
    ("Shift Type", "shift_type"),
    ("Rounding", "rounding"),
    ("Weight Decay", "weight_decay"),
]


class UsageError(Exception):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(value: float) -> str:
    return "inf" if math.isinf(value) else repr(float(value))


def _load_experiment(args) -> ExperimentConfig:
    if args.experiment is None:
        return ExperimentConfig()
    return ExperimentConfig.load(args.experiment)


def _out_dir(args, experiment: ExperimentConfig) -> Path:
    out = args.out or experiment.out
    if out is None:
        raise UsageError("no output directory: pass --out or set 'out' in the experiment file")
    return Path(out)


def load_config_source(source: str) -> HyperparameterConfig:
    """A preset name (default, pos1, pos2) or a path to a JSON configuration."""
    if source in ("default", "pos1", "pos2"):
        return preset(source)
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        config = HyperparameterConfig.from_dict(data)
    for w in caught:
        log.warning("%s", w.message)
    return config


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    experiment = _load_experiment(args)
    out = _out_dir(args, experiment)
    config = load_config_source(args.config)
    ConfigSpace().validate(config)
    splits = experiment.load_splits()
    seed = args.seed if args.seed is not None else experiment.hpo.get("seed", 0)
    arch = desk_cnn(splits.input_shape, splits.num_classes)
    model = build_network(arch, splits.input_shape, seed)
    depth = config.shift_depth if args.depth is None else args.depth
    trained, outcome = train(
        model, splits, config, depth, seed, experiment.energy_model(),
        include_test_energy=experiment.include_test_energy, track_curve=True,
    )
    report = {
        "config": config.to_dict(),
        "config_id": config.key(),
        "seed": seed,
        "effective_shift_depth": trained.shift_depth,
        "val_loss": None if math.isinf(outcome.val_loss) else outcome.val_loss,
        "val_accuracy": outcome.val_accuracy,
        "test_accuracy": outcome.test_accuracy,
        "emissions_g": outcome.energy.emissions_g,
        "total_joules": outcome.energy.total_joules,
        "op_counts": outcome.energy.to_dict()["op_totals"],
        "epochs_run": outcome.epochs_run,
        "diverged": outcome.diverged,
    }
    _write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    rows = [[s.epoch, _num(s.train_loss), _num(s.val_accuracy)] for s in outcome.curve]
    _write(out / "curve.csv", _csv(["epoch", "train_loss", "val_accuracy"], rows))
    meta = {"timestamp": datetime.now(timezone.utc).isoformat(), "wall_seconds": outcome.wall_seconds}
    _write(out / "report.meta.json", json.dumps(meta, indent=2) + "\n")
    if outcome.diverged:
        log.warning("training diverged; report carries the sentinel loss")
    print(
        f"val_loss={report['val_loss']} val_acc={outcome.val_accuracy:.4f} "
        f"test_acc={outcome.test_accuracy:.4f} emissions_g={outcome.energy.emissions_g:.6g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize


def cmd_optimize(args) -> int:
    experiment = _load_experiment(args)
    out = _out_dir(args, experiment)
    hpo = dict(experiment.hpo)
    if args.budget is not None:
        hpo["budget"] = args.budget
    if args.seed is not None:
        hpo["seed"] = args.seed
    settings = SearchSettings(**hpo)
    history_path = out / "runhistory.jsonl"
    replay = None
    if args.resume:
        if history_path.exists():
            replay = load_history(history_path)
            log.info("resuming from %d persisted evaluations", len(replay))
    elif history_path.exists() and history_path.stat().st_size > 0:
        raise UsageError(f"{history_path} already exists; pass --resume or choose another --out")
    out.mkdir(parents=True, exist_ok=True)
    writer = HistoryWriter(history_path, truncate=replay is None)
    splits = experiment.load_splits()
    evaluator = make_train_evaluator(
        splits, experiment.energy_model(), include_test_energy=experiment.include_test_energy
    )
    result = run_search(
        experiment.config_space(), evaluator, settings,
        multi_objective=args.mode == "mfmo", replay=replay, on_record=writer, stop_after=args.stop_after,
    )
    if not result.completed:
        print(f"stopped after {len(result.history)} of {settings.budget} evaluations; rerun with --resume")
        return EXIT_OK
    if args.mode == "mfmo":
        _write(out / "pareto.json", archive_to_json(sorted(result.archive.entries, key=lambda r: r.index)))
        print(f"{len(result.history)} evaluations, {len(result.archive.entries)} Pareto-optimal configurations")
    else:
        inc = result.incumbent
        body = {"schema": INCUMBENT_SCHEMA, "incumbent": None}
        if inc is not None:
            body["incumbent"] = {
                "index": inc.index,
                "config_id": inc.config_key,
                "config": inc.config.to_dict(),
                "fidelity": inc.fidelity,
                "loss": inc.loss,
                "emissions": inc.emissions,
                "val_accuracy": inc.val_accuracy,
                "test_accuracy": inc.test_accuracy,
            }
        _write(out / "incumbent.json", json.dumps(body, indent=2, sort_keys=True) + "\n")
        print(f"{len(result.history)} evaluations, incumbent {inc.config_key if inc else None}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def pareto_records(history: RunHistory) -> list[Record]:
    """Non-dominated finite records among each configuration's highest-fidelity evaluation."""
    eligible = [r for r in history.highest_fidelity_records() if r.finite]
    if not eligible:
        return []
    mask = non_dominated_mask(np.array([r.objectives for r in eligible]))
    return [r for r, keep in zip(eligible, mask) if keep]


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def pareto_table(front: list[Record]) -> str:
    header = ["Parameter"] + [f"POS {i + 1}" for i in range(len(front))]
    rows = [[label] + [_fmt_cell(getattr(r.config, name)) for r in front] for label, name in TABLE_ROWS]
    rows.append(["Evaluated Shift Depth"] + [str(r.fidelity) for r in front])
    rows.append(["Accuracy (in %)"] + [f"{100 * r.test_accuracy:.2f}" for r in front])
    rows.append(["Emissions (in gCO2eq)"] + [f"{r.emissions:.4g}" for r in front])
    rows.append(["Validation Loss"] + [f"{r.loss:.4f}" for r in front])
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + rows]
    rule = "-" * max(len(line) for line in lines)
    return "\n".join([rule, lines[0], rule, *lines[1:], rule]) + "\n"


def cmd_report(args) -> int:
    history = load_history(args.history)
    out = Path(args.out) if args.out else Path(args.history).parent / "report"
    if len(history) == 0:
        log.warning("history is empty; writing header-only outputs")
    front = sorted(pareto_records(history), key=lambda r: (r.loss, r.emissions, r.index))
    _write(
        out / "pareto_front.csv",
        _csv(["loss", "emissions", "config_id"], [[_num(r.loss), _num(r.emissions), r.config_key] for r in front]),
    )
    rows = []
    for fidelity in sorted({r.fidelity for r in history}):
        at = [r for r in history if r.fidelity == fidelity]
        rows.append([
            fidelity, len(at),
            _num(min(r.loss for r in at)), _num(min(r.emissions for r in at)),
            _num(max(r.test_accuracy for r in at)),
        ])
    _write(out / "fidelity_best.csv", _csv(["fidelity", "n_records", "best_loss", "best_emissions", "best_test_accuracy"], rows))
    _write(out / "pareto_table.txt", pareto_table(front))
    config_dir = out / "pareto_configs"
    for i, r in enumerate(front, start=1):
        _write(config_dir / f"pos{i}_{r.config_key}.json", json.dumps(r.config.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"{len(history)} records, {len(front)} Pareto-optimal configurations -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenshift", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--experiment", help="experiment JSON file (defaults to the synthetic desk benchmark)")
    p.add_argument("--config", default="default", help="default | pos1 | pos2 | path to a configuration JSON")
    p.add_argument("--depth", type=int, help="shift depth to train at (defaults to the config's shift_depth)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="run the MF or MFMO search")
    p.add_argument("--experiment")
    p.add_argument("--mode", choices=("mf", "mfmo"), required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true", help="continue from an existing runhistory.jsonl")
    p.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="summarize a runhistory.jsonl")
    p.add_argument("history")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, ExperimentError, DatasetError, HistoryCorruptedError, OSError) as exc:
        print(f"greenshift: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
