"""Accuracy evaluation, learning curves and run records."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AssemblyError, ContractError
from .nn import class_mask, forward, masked_logits

EVAL_CHUNK = 2048


def predict(model, inputs: np.ndarray, allowed_classes=None) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    mask = class_mask(allowed_classes, model.spec.output_units)
    out = np.empty(len(inputs), dtype=np.int64)
    for s in range(0, len(inputs), EVAL_CHUNK):
        logits = masked_logits(forward(model, inputs[s:s + EVAL_CHUNK]), mask)
        out[s:s + EVAL_CHUNK] = logits.argmax(axis=1)
    return out


def correct_count(model, inputs, labels, allowed_classes=None) -> int:
    return int(np.sum(predict(model, inputs, allowed_classes) == np.asarray(labels)))


def evaluate(model, dataset, allowed_classes=None) -> float:
    """Percent of examples whose (optionally masked) argmax equals the label."""
    if len(dataset.labels) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    return 100.0 * correct_count(model, dataset.inputs, dataset.labels, allowed_classes) / len(dataset.labels)


def average_seen_accuracy(model, protocol, tasks_completed: int) -> float:
    """Unmasked accuracy on the pooled test sets of the first ``tasks_completed`` tasks."""
    if not 1 <= tasks_completed <= len(protocol.tasks):
        raise ContractError(f"tasks_completed must lie in [1, {len(protocol.tasks)}]")
    correct = total = 0
    for task in protocol.tasks[:tasks_completed]:
        correct += correct_count(model, task.test.inputs, task.test.labels)
        total += len(task.test.labels)
    return 100.0 * correct / total


def fingerprint(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TaskFragment:
    task_id: int
    avg_accuracy: float
    replay_batches: int = 0
    memory_checks: int = 0
    epochs: int = 0


@dataclass(frozen=True)
class RunRecord:
    fingerprint: str
    curve: tuple
    replay_batches_total: int
    memory_checks_total: int
    per_task_epochs: tuple
    wall_time_seconds: float = 0.0
    config: dict = field(default_factory=dict, compare=False)

    @property
    def final_accuracy(self) -> float:
        return self.curve[-1][1]

    def summary(self) -> dict:
        return {
            "final_accuracy": round(self.final_accuracy, 2),
            "curve": [[t, round(a, 2)] for t, a in self.curve],
            "replay_batches_total": self.replay_batches_total,
            "memory_checks_total": self.memory_checks_total,
            "per_task_epochs": list(self.per_task_epochs),
            "fingerprint": self.fingerprint,
            "wall_time_seconds": round(self.wall_time_seconds, 3),
            "config": self.config,
        }


def finalize_record(fragments, config: dict, task_count: Optional[int] = None, wall_time: float = 0.0) -> RunRecord:
    """Assemble one record from per-task fragments (one per task, any order)."""
    by_task = {f.task_id: f for f in fragments}
    expected = task_count if task_count is not None else len(by_task)
    missing = [t for t in range(expected) if t not in by_task]
    if missing or len(by_task) != expected or len(fragments) != expected:
        raise AssemblyError(f"fragments missing or duplicated for tasks {missing or 'n/a'}")
    ordered = [by_task[t] for t in range(expected)]
    return RunRecord(
        fingerprint=fingerprint(config),
        curve=tuple((f.task_id + 1, f.avg_accuracy) for f in ordered),
        replay_batches_total=sum(f.replay_batches for f in ordered),
        memory_checks_total=sum(f.memory_checks for f in ordered),
        per_task_epochs=tuple(f.epochs for f in ordered),
        wall_time_seconds=wall_time,
        config=config,
    )
