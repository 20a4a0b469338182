"""Experiment execution and result files (curve.csv, summary.json, compare.csv, trend.csv)."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, config_from_dict
from .data import DataSplit, LabeledDataset, load_mnist, split_protocol, synth_tasks
from .errors import ConfigError
from .metrics import TaskFragment, fingerprint
from .nn import cnn_spec, mlp_spec
from .strategies import Learner, run_protocol

log = logging.getLogger(__name__)

SWEEP_PARAMS = {"buffer_capacity": "buffer_capacity", "mastery_threshold": "mastery_threshold"}


def _flatten(split: DataSplit) -> DataSplit:
    flat = lambda d: LabeledDataset(d.inputs.reshape(len(d), -1), d.labels, d.class_count)
    return DataSplit(flat(split.train), flat(split.test))


def build_protocol(cfg: RunConfig):
    """Task protocol plus a network spec sized to it."""
    if cfg.benchmark == "synthetic":
        s = cfg.synthetic
        split = synth_tasks(s.class_count, s.dim, s.per_class, s.spread, cfg.seed)
        protocol = split_protocol(split, s.classes_per_task, seed=cfg.seed)
    else:
        d = cfg.data
        split = load_mnist(d.root)
        if cfg.network.kind == "mlp":
            split = _flatten(split)
        protocol = split_protocol(split, d.classes_per_task, d.subsample_per_class, cfg.seed,
                                  d.subsample_test_per_class)
    shape = protocol.tasks[0].train.inputs.shape[1:]
    net = cfg.network
    if net.kind == "mlp":
        if len(shape) != 1:
            raise ConfigError(f"mlp needs flat inputs, data has shape {shape}")
        spec = mlp_spec(shape[0], net.hidden, protocol.total_classes)
    else:
        if len(shape) != 3:
            raise ConfigError(f"cnn needs [c, h, w] inputs, data has shape {shape}")
        spec = cnn_spec(shape, protocol.total_classes, net.channels, net.hidden[0] if net.hidden else 128)
    return protocol, spec


def write_curve(path: Path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tasks_completed", "avg_accuracy"])
        for t, acc in curve:
            w.writerow([t, f"{acc:.2f}"])


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def execute_run(cfg: RunConfig, dump_buffer: bool = False) -> dict:
    """Run one experiment into ``cfg.out``; returns the summary that was written.

    A numeric failure still writes summary.json (status "failed", partial curve) and re-raises.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    experiment = cfg.experiment_dict()
    protocol, spec = build_protocol(cfg)
    fragments: list[TaskFragment] = []
    snapshots: list[dict] = []

    def on_task(task_id: int, frag: TaskFragment, learner: Learner) -> None:
        fragments.append(frag)
        if dump_buffer and learner.buffer is not None:
            snapshots.append({"after_task": task_id, **learner.buffer.snapshot()})

    started = time.perf_counter()
    try:
        record, _ = run_protocol(protocol, spec, cfg.strategy, cfg.seed, experiment, on_task)
    except (FloatingPointError, ArithmeticError) as exc:
        partial = [(f.task_id + 1, f.avg_accuracy) for f in fragments]
        write_curve(out / "curve.csv", partial)
        write_json(out / "summary.json", {
            "method": cfg.strategy.method,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "partial": True,
            "curve": [[t, round(a, 2)] for t, a in partial],
            "fingerprint": fingerprint(experiment),
            "wall_time_seconds": round(time.perf_counter() - started, 3),
            "config": experiment,
        })
        raise
    write_curve(out / "curve.csv", record.curve)
    summary = {"method": cfg.strategy.method, "status": "ok", **record.summary()}
    write_json(out / "summary.json", summary)
    if dump_buffer:
        write_json(out / "buffer.json", snapshots)
    return summary


def _execute_from_dict(raw: dict, dump_buffer: bool) -> dict:
    return execute_run(config_from_dict(raw), dump_buffer)


def compare(configs: Sequence[RunConfig], out: str, labels: Optional[Sequence[str]] = None) -> list[dict]:
    """Run several configs on one protocol; writes compare.csv and compare.md under ``out``."""
    if not configs:
        raise ConfigError("nothing to compare")
    ref = configs[0].protocol_dict()
    for c in configs[1:]:
        if c.protocol_dict() != ref:
            raise ConfigError("compare needs every config on the same benchmark and protocol")
    if labels is None:
        labels, seen = [], {}
        for c in configs:
            m = c.strategy.method
            seen[m] = seen.get(m, 0) + 1
            labels.append(m if seen[m] == 1 else f"{m}_{seen[m]}")
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    summaries = []
    for label, c in zip(labels, configs):
        c.out = str(root / label)
        summaries.append(execute_run(c))
    n = len(summaries[0]["curve"])
    with open(root / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tasks_completed", *labels])
        for i in range(n):
            w.writerow([i + 1, *(f"{s['curve'][i][1]:.2f}" for s in summaries)])
    lines = ["| method | final accuracy (%) | replay batches | memory checks |",
             "|---|---:|---:|---:|"]
    for label, s in zip(labels, summaries):
        lines.append(f"| {label} | {s['final_accuracy']:.2f} | {s['replay_batches_total']} | {s['memory_checks_total']} |")
    (root / "compare.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summaries


def _format_value(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def sweep(base: RunConfig, param: str, values: Sequence, out: str, jobs: int = 1) -> tuple[list, list]:
    """One run per value in ``out/<param>=<value>/``; writes trend.csv.

    Returns (rows, failures). A failing sub-run leaves an empty trend row and does not stop the sweep.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep values must be strictly increasing")
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    raws = []
    for v in values:
        raw = base.to_dict()
        raw["strategy"][SWEEP_PARAMS[param]] = int(v) if param == "buffer_capacity" else float(v)
        raw["out"] = str(root / f"{param}={_format_value(v)}")
        config_from_dict(raw)
        raws.append(raw)

    results: list = [None] * len(raws)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute_from_dict, r, False) for r in raws]
            for i, f in enumerate(futures):
                try:
                    results[i] = f.result()
                except Exception as exc:  # noqa: BLE001 - sub-run failures are recorded, not fatal
                    results[i] = exc
    else:
        for i, r in enumerate(raws):
            try:
                results[i] = _execute_from_dict(r, False)
            except Exception as exc:  # noqa: BLE001
                results[i] = exc

    rows, failures = [], []
    with open(root / "trend.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "final_accuracy", "memory_checks"])
        for v, res in zip(values, results):
            if isinstance(res, Exception):
                log.error("sweep %s=%s failed: %s", param, v, res)
                failures.append({"value": v, "error": f"{type(res).__name__}: {res}"})
                w.writerow([_format_value(v), "", ""])
                rows.append((v, None, None))
            else:
                w.writerow([_format_value(v), f"{res['final_accuracy']:.2f}", res["memory_checks_total"]])
                rows.append((v, res["final_accuracy"], res["memory_checks_total"]))
    if failures:
        write_json(root / "sweep_errors.json", failures)
    return rows, failures
