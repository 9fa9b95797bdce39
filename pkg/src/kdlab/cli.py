"""Command-line entry point: experiment configuration, teacher training,
distillation runs over seed sweeps, mode comparisons, and the gradient gate.

Every printed number is recomputable from the emitted CSV/JSON artifacts.
Exit codes: 0 success, 2 usage, 3 I/O, 4 contract violation, 5 numeric
check failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

from kdlab.data import (
    Dataset,
    batch_iter,
    gaussian_mixture,
    load_tabular,
    spirals,
    split_train_test,
)
from kdlab.errors import ContractError, DimensionError, NumericError, ParseError
from kdlab.gradcheck import run_checks
from kdlab.losses import MODES, DistillConfig, cross_entropy
from kdlab.models import (
    Model,
    ModelSpec,
    copy_model,
    forward,
    init_model,
    load_model,
    save_model,
)
from kdlab.tensor import Tape, backward
from kdlab.training import (
    OptimizerState,
    Schedule,
    SessionResult,
    evaluate_accuracy,
    lr_at_epoch,
    run_mode,
    sgd_step,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONTRACT = 4
EXIT_NUMERIC = 5

DEFAULT_CONFIG: dict = {
    "task": {
        "kind": "gaussian_mixture",
        "classes": 10,
        "dim": 16,
        "n_per_class": 150,
        "spread": 0.9,
        "seed": 207,
    },
    "teacher": {"hidden": [64, 64, 64], "seed": 13},
    "student": {"hidden": [8]},
    "distill": {
        "alpha": 0.1,
        "tau": 4.0,
        "lambda_w": 1.0,
        "eta_w": 1.0,
        "rho": 0.5,
        "tau_squared": True,
    },
    "schedule": {
        "epochs": 60,
        "batch_size": 64,
        "lr0": 0.05,
        "decay_stages": [35, 45, 55],
        "decay_rate": 0.1,
        "momentum": 0.9,
        "weight_decay": 5e-4,
    },
    "seeds": [1, 2, 3, 4, 5],
    "out": "runs",
}


@dataclass
class ExperimentConfig:
    """Validated view over the merged config document."""

    raw: dict
    task: dict
    teacher_hidden: tuple[int, ...]
    teacher_seed: int
    student_hidden: tuple[int, ...]
    distill: DistillConfig
    schedule: Schedule
    seeds: list[int]
    out: str
    teacher_sweep: list[tuple[int, ...]] = field(default_factory=list)
    _data: "tuple[Dataset, Dataset] | None" = field(default=None, repr=False, compare=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        merged = _merge(DEFAULT_CONFIG, doc)
        seeds = [int(s) for s in merged["seeds"]]
        if not seeds:
            raise ContractError("seeds list must be nonempty")
        if len(set(seeds)) != len(seeds):
            raise ContractError(f"seeds must be distinct, got {seeds}")
        distill = DistillConfig(
            alpha=float(merged["distill"]["alpha"]),
            tau=float(merged["distill"]["tau"]),
            lambda_w=float(merged["distill"]["lambda_w"]),
            eta_w=float(merged["distill"]["eta_w"]),
            rho=float(merged["distill"]["rho"]),
            mode="slkd",
            tau_squared=bool(merged["distill"]["tau_squared"]),
        )
        sched = Schedule(
            epochs=int(merged["schedule"]["epochs"]),
            batch_size=int(merged["schedule"]["batch_size"]),
            lr0=float(merged["schedule"]["lr0"]),
            decay_stages=tuple(int(x) for x in merged["schedule"]["decay_stages"]),
            decay_rate=float(merged["schedule"]["decay_rate"]),
            momentum=float(merged["schedule"]["momentum"]),
            weight_decay=float(merged["schedule"]["weight_decay"]),
        )
        sweep = [tuple(int(w) for w in h) for h in merged.get("teacher_sweep", [])]
        return cls(
            raw=merged,
            task=dict(merged["task"]),
            teacher_hidden=tuple(int(w) for w in merged["teacher"]["hidden"]),
            teacher_seed=int(merged["teacher"]["seed"]),
            student_hidden=tuple(int(w) for w in merged["student"]["hidden"]),
            distill=distill,
            schedule=sched,
            seeds=sorted(seeds),
            out=str(merged["out"]),
            teacher_sweep=sweep,
        )

    def datasets(self) -> tuple[Dataset, Dataset]:
        if self._data is None:
            self._data = build_task(self.task)
        return self._data

    def task_dims(self) -> tuple[int, int]:
        train, _ = self.datasets()
        return train.dim, train.classes

    def teacher_spec(self, hidden: Optional[tuple[int, ...]] = None) -> ModelSpec:
        dim, classes = self.task_dims()
        return ModelSpec(dim, hidden if hidden is not None else self.teacher_hidden, classes)

    def student_spec(self) -> ModelSpec:
        dim, classes = self.task_dims()
        return ModelSpec(dim, self.student_hidden, classes)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def build_task(task: dict) -> tuple[Dataset, Dataset]:
    kind = task.get("kind")
    if kind == "gaussian_mixture":
        return gaussian_mixture(
            int(task["classes"]), int(task["dim"]), int(task["n_per_class"]),
            float(task["spread"]), int(task["seed"]),
        )
    if kind == "spirals":
        return spirals(
            int(task["classes"]), int(task["n_per_class"]),
            float(task.get("noise", 0.2)), int(task["seed"]),
        )
    if kind == "tabular":
        full = load_tabular(str(task["path"]), int(task["classes"]))
        return split_train_test(full, float(task.get("test_fraction", 0.2)))
    raise ContractError(f"unknown task kind {kind!r}")


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: config document must be a JSON object")
    return ExperimentConfig.from_dict(doc)


def fit_teacher(spec: ModelSpec, data: tuple[Dataset, Dataset], schedule: Schedule,
                seed: int) -> tuple[Model, float, float]:
    """Cross-entropy training that keeps the best-epoch checkpoint.

    Returns (best model, best accuracy, final accuracy). Checkpoint selection
    on the held-out split is what makes the saved teacher a good supervisor;
    the final-epoch network on these small noisy tasks is usually overfit.
    """
    train, test = data
    model = init_model(spec, seed)
    state = OptimizerState.for_model(model)
    best = copy_model(model)
    best_acc = evaluate_accuracy(model, test)
    final_acc = best_acc
    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        for batch in batch_iter(train, schedule.batch_size, seed, epoch):
            with Tape():
                loss = cross_entropy(forward(model, batch.features), batch.labels)
            grads = backward(loss)
            sgd_step(state.params, grads, state, lr, schedule.momentum, schedule.weight_decay)
        final_acc = evaluate_accuracy(model, test)
        if final_acc > best_acc:
            best_acc = final_acc
            best = copy_model(model)
    return best, best_acc, final_acc


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_train_teacher(config: ExperimentConfig) -> dict:
    """Train, checkpoint-select, and save the teacher; emit its summary."""
    data = config.datasets()
    spec = config.teacher_spec()
    teacher, best_acc, final_acc = fit_teacher(spec, data, config.schedule, config.teacher_seed)
    os.makedirs(config.out, exist_ok=True)
    model_path = os.path.join(config.out, "teacher.model")
    save_model(teacher, model_path)
    summary = {
        "file": model_path,
        "hidden": list(spec.hidden),
        "input_dim": spec.input_dim,
        "classes": spec.classes,
        "seed": config.teacher_seed,
        "test_accuracy": evaluate_accuracy(teacher, data[1]),
        "best_epoch_accuracy": best_acc,
        "final_epoch_accuracy": final_acc,
    }
    _write_json(os.path.join(config.out, "teacher_summary.json"), summary)
    return summary


def _aggregate(values: list[float]) -> dict:
    n = len(values)
    m = math.fsum(values) / n
    var = math.fsum((v - m) ** 2 for v in values) / n
    return {"mean": m, "std": math.sqrt(var)}


def run_distill(config: ExperimentConfig, mode: str,
                teacher_path: Optional[str] = None) -> dict:
    """One session per seed; writes per-seed trajectory CSVs and a summary."""
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}, expected one of {MODES}")
    data = config.datasets()
    teacher = None
    if mode != "scratch":
        path = teacher_path or os.path.join(config.out, "teacher.model")
        if not os.path.exists(path):
            raise FileNotFoundError(f"teacher model file not found: {path}")
        teacher = load_model(path)
    os.makedirs(config.out, exist_ok=True)

    sessions = []
    for seed in config.seeds:
        start = time.perf_counter()
        result = run_mode(mode, teacher, config.student_spec(), data,
                          config.schedule, config.distill, seed)
        wall = time.perf_counter() - start
        csv_name = f"trajectory_{mode}_seed{seed}.csv"
        result.trajectory.write_csv(os.path.join(config.out, csv_name))
        sessions.append(
            {
                "seed": seed,
                "final_accuracy": result.final_accuracy,
                "best_accuracy": result.best_accuracy,
                "elapsed_epochs": result.elapsed_epochs,
                "trajectory_csv": csv_name,
                "wall_time_s": wall,
            }
        )
    summary = {
        "mode": mode,
        "config": config.raw,
        "sessions": sessions,
        "aggregate": {
            "final": _aggregate([s["final_accuracy"] for s in sessions]),
            "best": _aggregate([s["best_accuracy"] for s in sessions]),
        },
    }
    _write_json(os.path.join(config.out, f"summary_{mode}.json"), summary)
    return summary


def run_compare(config: ExperimentConfig, modes: list[str],
                teacher_path: Optional[str] = None) -> dict:
    """Cell table over teacher specs × modes plus pairwise mean differences."""
    sweep = config.teacher_sweep or [config.teacher_hidden]
    if len(modes) < 2 and len(sweep) < 2:
        raise ContractError("compare needs at least two modes or two teacher specs")
    for mode in modes:
        if mode not in MODES:
            raise ContractError(f"unknown mode {mode!r}, expected one of {MODES}")
    data = config.datasets()
    os.makedirs(config.out, exist_ok=True)

    cells = []
    for hidden in sweep:
        label = "x".join(str(w) for w in hidden)
        needs_teacher = any(m != "scratch" for m in modes)
        teacher = None
        teacher_acc = None
        if needs_teacher:
            if teacher_path and len(sweep) == 1:
                teacher = load_model(teacher_path)
            else:
                teacher, _, _ = fit_teacher(config.teacher_spec(hidden), data,
                                            config.schedule, config.teacher_seed)
            teacher_acc = evaluate_accuracy(teacher, data[1])
        for mode in modes:
            finals, bests = [], []
            for seed in config.seeds:
                res = run_mode(mode, teacher, config.student_spec(), data,
                               config.schedule, config.distill, seed)
                finals.append(res.final_accuracy)
                bests.append(res.best_accuracy)
            cells.append(
                {
                    "teacher": label,
                    "teacher_accuracy": teacher_acc,
                    "mode": mode,
                    "final": _aggregate(finals),
                    "best": _aggregate(bests),
                    "finals": finals,
                }
            )

    diffs = []
    for hidden in sweep:
        label = "x".join(str(w) for w in hidden)
        row = {c["mode"]: c for c in cells if c["teacher"] == label}
        for i, a in enumerate(modes):
            for b in modes[i + 1 :]:
                diffs.append(
                    {
                        "teacher": label,
                        "baseline": a,
                        "mode": b,
                        "final_mean_gain": row[b]["final"]["mean"] - row[a]["final"]["mean"],
                    }
                )

    table_path = os.path.join(config.out, "comparison.csv")
    with open(table_path, "w", encoding="ascii") as fh:
        fh.write("teacher,mode,final_mean,final_std,best_mean,best_std\n")
        for c in cells:
            fh.write(
                f"{c['teacher']},{c['mode']},{c['final']['mean']:.17g},"
                f"{c['final']['std']:.17g},{c['best']['mean']:.17g},{c['best']['std']:.17g}\n"
            )
    diff_path = os.path.join(config.out, "comparison_gains.csv")
    with open(diff_path, "w", encoding="ascii") as fh:
        fh.write("teacher,baseline,mode,final_mean_gain\n")
        for d in diffs:
            fh.write(f"{d['teacher']},{d['baseline']},{d['mode']},{d['final_mean_gain']:.17g}\n")

    doc = {"cells": cells, "gains": diffs, "table_csv": table_path, "gains_csv": diff_path}
    _write_json(os.path.join(config.out, "comparison.json"), doc)
    return doc


def run_gradcheck(config: ExperimentConfig, n_seeds: int = 20,
                  corrupt: bool = False) -> tuple[dict, bool]:
    rows = run_checks(n_seeds=n_seeds, corrupt=corrupt)
    ok = all(r.passed for r in rows)
    doc = {
        "seeds": n_seeds,
        "all_passed": ok,
        "checks": [
            {"op": r.op, "max_rel_err": r.max_rel_err, "passed": r.passed} for r in rows
        ],
    }
    os.makedirs(config.out, exist_ok=True)
    _write_json(os.path.join(config.out, "gradcheck.json"), doc)
    return doc, ok


def _print_distill_summary(summary: dict) -> None:
    agg = summary["aggregate"]
    print(f"mode={summary['mode']} seeds={[s['seed'] for s in summary['sessions']]}")
    for s in summary["sessions"]:
        print(
            f"  seed {s['seed']}: final={s['final_accuracy']:.4f} "
            f"best={s['best_accuracy']:.4f} ({s['wall_time_s']:.1f}s)"
        )
    print(
        f"  final: {agg['final']['mean']:.4f} ± {agg['final']['std']:.4f}   "
        f"best: {agg['best']['mean']:.4f} ± {agg['best']['std']:.4f}"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdlab",
        description="Desk-scale knowledge-distillation experiments with "
        "self-learning-teacher co-training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (merged over the defaults)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seeds", help="comma-separated seed list (overrides config)")

    common(sub.add_parser("train-teacher", help="train and save the teacher model"))

    p_distill = sub.add_parser("distill", help="run distillation sessions over the seed sweep")
    common(p_distill)
    p_distill.add_argument("--mode", required=True, choices=MODES)
    p_distill.add_argument("--teacher", help="teacher model file (default: <out>/teacher.model)")

    p_cmp = sub.add_parser("compare", help="mode/teacher comparison table")
    common(p_cmp)
    p_cmp.add_argument("--modes", required=True, help="comma-separated mode list")
    p_cmp.add_argument("--teacher", help="teacher model file (single-teacher runs only)")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient gate")
    common(p_grad)
    p_grad.add_argument("--check-seeds", type=int, default=20)
    p_grad.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p_cfg = sub.add_parser("print-config", help="print the full default configuration")
    p_cfg.add_argument("--config", help="JSON config file to merge and print")
    return parser


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    doc = dict(config.raw)
    if getattr(args, "out", None):
        doc["out"] = args.out
    if getattr(args, "seeds", None):
        try:
            doc["seeds"] = [int(s) for s in args.seeds.split(",") if s]
        except ValueError:
            raise ContractError(f"bad --seeds value {args.seeds!r}") from None
    return ExperimentConfig.from_dict(doc)


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "print-config":
            config = load_config(args.config)
            print(json.dumps(config.raw, indent=2, sort_keys=True))
            return EXIT_OK

        config = _apply_overrides(load_config(args.config), args)

        if args.command == "train-teacher":
            summary = run_train_teacher(config)
            print(
                f"teacher saved to {summary['file']} "
                f"(test accuracy {summary['test_accuracy']:.4f})"
            )
            return EXIT_OK

        if args.command == "distill":
            summary = run_distill(config, args.mode, teacher_path=args.teacher)
            _print_distill_summary(summary)
            return EXIT_OK

        if args.command == "compare":
            modes = [m for m in args.modes.split(",") if m]
            doc = run_compare(config, modes, teacher_path=args.teacher)
            for c in doc["cells"]:
                print(
                    f"teacher {c['teacher']} {c['mode']}: "
                    f"{c['final']['mean']:.4f} ± {c['final']['std']:.4f}"
                )
            for d in doc["gains"]:
                print(
                    f"teacher {d['teacher']} {d['mode']} - {d['baseline']}: "
                    f"{d['final_mean_gain']:+.4f}"
                )
            return EXIT_OK

        if args.command == "gradcheck":
            doc, ok = run_gradcheck(config, n_seeds=args.check_seeds, corrupt=args.corrupt)
            for row in doc["checks"]:
                status = "pass" if row["passed"] else "FAIL"
                print(f"{row['op']:24s} max_rel_err={row['max_rel_err']:.3e} {status}")
            print("all passed" if ok else "GRADIENT CHECK FAILED")
            return EXIT_OK if ok else EXIT_NUMERIC

        parser.error(f"unknown command {args.command!r}")
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, DimensionError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
