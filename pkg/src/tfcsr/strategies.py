"""Continual-learning training procedures.

Seven methods share one training loop:

* ``finetune``      plain sequential training, no memory
* ``er``            experience replay with 50/50 mixed batches
* ``ewc`` / ``si``  finetune plus a quadratic consolidation penalty
* ``tfcsr``         ER plus the active-recall probe and its spaced scheduler
* ``tfcsr_spaced``  replay only during epochs the scheduler fires
* ``mgp``           mastery-gated progression, variable epochs per task
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import TaskExperience, TaskProtocol, minibatches
from .errors import ConfigError, ConsistencyError
from .memory import ReservoirBuffer
from .metrics import TaskFragment, average_seen_accuracy, evaluate, finalize_record, predict
from .nn import Batch, NetworkModel, NetworkSpec, adam_step, forward, init_network, loss_and_grad
from .rng import make_rng

log = logging.getLogger(__name__)

METHODS = ("finetune", "er", "ewc", "si", "tfcsr", "tfcsr_spaced", "mgp")
REPLAY_METHODS = ("er", "tfcsr", "tfcsr_spaced", "mgp")
DEFAULT_LAMBDA = {"ewc": 10000.0, "si": 100.0}


@dataclass
class MGPConfig:
    new_task_mastery_thresh: float = 90.0
    retention_thresh: float = 90.0
    max_epochs_per_task: int = 50


@dataclass
class StrategyConfig:
    method: str = "tfcsr"
    epochs_per_task: int = 10
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    replay_ratio: float = 0.5
    buffer_capacity: int = 200
    mastery_threshold: float = 95.0
    initial_gap: float = 1.0
    gap_multiplier: float = 1.5
    lam: Optional[float] = None
    si_damping: float = 0.1
    fisher_samples: int = 1024
    probe_batch_size: Optional[int] = None
    mgp: MGPConfig = field(default_factory=MGPConfig)

    def __post_init__(self):
        if isinstance(self.mgp, dict):
            self.mgp = MGPConfig(**self.mgp)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0.0 < self.replay_ratio < 1.0:
            raise ConfigError("replay_ratio must lie strictly between 0 and 1")
        if self.gap_multiplier <= 1.0:
            raise ConfigError("gap_multiplier must exceed 1")
        if self.initial_gap <= 0:
            raise ConfigError("initial_gap must be positive")
        for name, val in [("mastery_threshold", self.mastery_threshold),
                          ("mgp.new_task_mastery_thresh", self.mgp.new_task_mastery_thresh),
                          ("mgp.retention_thresh", self.mgp.retention_thresh)]:
            if not 0.0 <= val <= 100.0:
                raise ConfigError(f"{name} must lie in [0, 100]")
        if self.epochs_per_task < 1 or self.batch_size < 1 or self.mgp.max_epochs_per_task < 1:
            raise ConfigError("epochs and batch sizes must be >= 1")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")

    @property
    def strength(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_LAMBDA.get(self.method, 0.0)

    @property
    def probe_size(self) -> int:
        return self.probe_batch_size or self.batch_size

    @property
    def min_replay_items(self) -> int:
        """Buffer occupancy needed before replay starts: the replay share of one batch."""
        return math.ceil(self.batch_size * self.replay_ratio)

    def to_dict(self) -> dict:
        return asdict(self)


def replay_count(n_new: int, replay_ratio: float) -> int:
    return max(1, round(n_new * replay_ratio / (1.0 - replay_ratio)))


# -- scheduler ---------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleState:
    replay_gap: float
    replay_timer: float
    probes_fired: int = 0
    probes_passed: int = 0

    @classmethod
    def start(cls, initial_gap: float) -> "ScheduleState":
        return cls(initial_gap, initial_gap)

    def fires(self, epoch: int) -> bool:
        # timer goes fractional after the first pass; fire at the first whole epoch at or past it
        return epoch >= self.replay_timer


def schedule_step(state: ScheduleState, passed: bool, gap_multiplier: float) -> ScheduleState:
    if passed:
        gap = state.replay_gap * gap_multiplier
        return ScheduleState(gap, state.replay_timer + gap, state.probes_fired + 1, state.probes_passed + 1)
    return ScheduleState(state.replay_gap, state.replay_timer + 1.0, state.probes_fired + 1, state.probes_passed)


@dataclass(frozen=True)
class ProbeOutcome:
    accuracy: float
    passed: bool


def probe_replay(model: NetworkModel, buffer: ReservoirBuffer, probe_batch_size: int,
                 rng: np.random.Generator, mastery_threshold: float = 0.0) -> ProbeOutcome:
    """Accuracy on a buffer sample with logits masked to the classes the buffer holds."""
    batch = buffer.sample(probe_batch_size, rng)
    pred = predict(model, batch.inputs, buffer.classes_present())
    acc = 100.0 * float(np.mean(pred == batch.targets))
    return ProbeOutcome(acc, acc >= mastery_threshold)


def mixed_batch(new: Batch, buffer: ReservoirBuffer, replay_ratio: float, rng: np.random.Generator) -> Batch:
    old = buffer.sample(replay_count(len(new), replay_ratio), rng)
    return Batch(np.concatenate([new.inputs, old.inputs]), np.concatenate([new.targets, old.targets]))


# -- consolidation -----------------------------------------------------------

@dataclass
class ConsolidationState:
    """Anchors and per-parameter importances for EWC / SI penalties."""

    anchors: dict = field(default_factory=dict)
    importance: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    task_start: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: NetworkModel) -> "ConsolidationState":
        snap = {k: p.copy() for k, p in model.params.items()}
        return cls(
            anchors={},
            importance={},
            trajectory={k: np.zeros_like(p) for k, p in snap.items()},
            task_start=snap,
        )

    @property
    def empty(self) -> bool:
        return not self.importance


def _check_shapes(cons: ConsolidationState, model: NetworkModel) -> None:
    for k, p in model.params.items():
        if k not in cons.importance or cons.importance[k].shape != p.shape or cons.anchors[k].shape != p.shape:
            raise ConsistencyError(f"consolidation state does not match parameter {k}")
    if set(cons.importance) != set(model.params):
        raise ConsistencyError("consolidation state has extra parameters")


def penalty(model: NetworkModel, cons: ConsolidationState, lam: float) -> float:
    if cons.empty:
        return 0.0
    _check_shapes(cons, model)
    total = 0.0
    for k in sorted(model.params):
        d = model.params[k] - cons.anchors[k]
        total += float(np.sum(cons.importance[k] * d * d))
    return 0.5 * lam * total


def add_penalty_grad(model: NetworkModel, cons: ConsolidationState, lam: float) -> None:
    if cons.empty:
        return
    _check_shapes(cons, model)
    for k in model.params:
        model.grads[k] += lam * cons.importance[k] * (model.params[k] - cons.anchors[k])


def regularized_loss(model: NetworkModel, batch: Batch, cons: ConsolidationState, lam: float) -> float:
    """Task loss plus (lam/2) * sum(importance * (theta - anchor)**2); gradients land in ``model.grads``."""
    loss = loss_and_grad(model, batch)
    if lam and not cons.empty:
        loss += penalty(model, cons, lam)
        add_penalty_grad(model, cons, lam)
    return loss


def fisher_diagonal(model: NetworkModel, inputs: np.ndarray) -> dict:
    """Mean squared gradient of log p(predicted label | x), one example at a time."""
    fisher = {k: np.zeros_like(p) for k, p in model.params.items()}
    labels = forward(model, inputs).argmax(axis=1)
    work = model.copy()
    for i in range(len(inputs)):
        loss_and_grad(work, Batch(inputs[i:i + 1], labels[i:i + 1]))
        for k, g in work.grads.items():
            fisher[k] += g * g
    for k in fisher:
        fisher[k] /= len(inputs)
    return fisher


def ewc_consolidate(model: NetworkModel, experience: TaskExperience, cons: ConsolidationState,
                    sample_budget: int, rng: np.random.Generator) -> None:
    n = min(sample_budget, len(experience.train))
    idx = np.sort(rng.choice(len(experience.train), size=n, replace=False))
    fisher = fisher_diagonal(model, experience.train.inputs[idx])
    for k, f in fisher.items():
        cons.importance[k] = cons.importance[k] + f if k in cons.importance else f
        cons.anchors[k] = model.params[k].copy()


def si_accumulate(cons: ConsolidationState, grads: dict, delta: dict) -> None:
    for k, d in delta.items():
        cons.trajectory[k] -= grads[k] * d


def si_consolidate(cons: ConsolidationState, model: NetworkModel, damping: float) -> None:
    for k, p in model.params.items():
        moved = p - cons.task_start[k]
        omega = np.maximum(cons.trajectory[k], 0.0) / (moved * moved + damping)
        cons.importance[k] = cons.importance[k] + omega if k in cons.importance else omega
        cons.anchors[k] = p.copy()
        cons.task_start[k] = p.copy()
        cons.trajectory[k] = np.zeros_like(p)


# -- training loop -----------------------------------------------------------

@dataclass
class Counters:
    replay_batches: int = 0
    memory_checks: int = 0


@dataclass
class TaskStats:
    replay_batches: int = 0
    memory_checks: int = 0
    epochs: int = 0


@dataclass
class Learner:
    """Everything one run owns: model, memory, consolidation state and random streams."""

    model: NetworkModel
    config: StrategyConfig
    seed: int
    buffer: Optional[ReservoirBuffer] = None
    cons: Optional[ConsolidationState] = None
    counters: Counters = field(default_factory=Counters)
    sampling_rng: np.random.Generator = None
    probe_rng: np.random.Generator = None

    def __post_init__(self):
        if self.sampling_rng is None:
            self.sampling_rng = make_rng(self.seed, "sampling")
        if self.probe_rng is None:
            self.probe_rng = make_rng(self.seed, "probe")

    @classmethod
    def create(cls, spec: NetworkSpec, config: StrategyConfig, seed: int) -> "Learner":
        model = init_network(spec, seed)
        buffer = None
        if config.method in REPLAY_METHODS:
            buffer = ReservoirBuffer(config.buffer_capacity, make_rng(seed, "buffer"))
        cons = ConsolidationState.for_model(model) if config.method in ("ewc", "si") else None
        return cls(model, config, seed, buffer, cons)

    def probe(self) -> ProbeOutcome:
        return probe_replay(self.model, self.buffer, self.config.probe_size, self.probe_rng,
                            self.config.mastery_threshold)


def train_step(learner: Learner, batch: Batch) -> float:
    cfg, model, cons = learner.config, learner.model, learner.cons
    loss = loss_and_grad(model, batch)
    track_si = cfg.method == "si"
    if track_si:
        task_grads = {k: g.copy() for k, g in model.grads.items()}
        before = {k: p.copy() for k, p in model.params.items()}
    if cons is not None and cfg.strength and not cons.empty:
        loss += penalty(model, cons, cfg.strength)
        add_penalty_grad(model, cons, cfg.strength)
    adam_step(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    if track_si:
        si_accumulate(cons, task_grads, {k: model.params[k] - before[k] for k in before})
    return loss


def train_epoch(learner: Learner, experience: TaskExperience, epoch: int, replay: bool) -> int:
    """One pass over the task's training data; returns the number of mixed batches used."""
    cfg, buffer = learner.config, learner.buffer
    replayed = 0
    for batch in minibatches(experience.train, cfg.batch_size, learner.seed, epoch, experience.task_id):
        if replay and buffer is not None and buffer.is_sufficient(cfg.min_replay_items):
            batch = mixed_batch(batch, buffer, cfg.replay_ratio, learner.sampling_rng)
            replayed += 1
        train_step(learner, batch)
    learner.counters.replay_batches += replayed
    return replayed


def train_task_er(learner: Learner, experience: TaskExperience) -> TaskStats:
    """Experience replay; with no buffer this is plain sequential fine-tuning."""
    if learner.buffer is not None:
        learner.buffer.add_all(experience)
    stats = TaskStats()
    for epoch in range(1, learner.config.epochs_per_task + 1):
        stats.replay_batches += train_epoch(learner, experience, epoch, replay=True)
        stats.epochs += 1
    return stats


def _run_probe(learner: Learner, state: ScheduleState, stats: TaskStats) -> ScheduleState:
    outcome = learner.probe()
    stats.memory_checks += 1
    learner.counters.memory_checks += 1
    log.debug("probe %.2f%% passed=%s", outcome.accuracy, outcome.passed)
    return schedule_step(state, outcome.passed, learner.config.gap_multiplier)


def train_task_tfcsr(learner: Learner, experience: TaskExperience, spaced: bool = False) -> TaskStats:
    """Mixed-batch replay with an active-recall probe on a multiplicative schedule.

    With ``spaced`` the buffer is replayed only in epochs where the scheduler fires.
    """
    cfg = learner.config
    learner.buffer.add_all(experience)
    state = ScheduleState.start(cfg.initial_gap)
    stats = TaskStats()
    for epoch in range(1, cfg.epochs_per_task + 1):
        fires = experience.task_id > 0 and state.fires(epoch)
        stats.replay_batches += train_epoch(learner, experience, epoch, replay=fires or not spaced)
        stats.epochs += 1
        if fires:
            state = _run_probe(learner, state, stats)
    return stats


def train_task_tfcsr_spaced(learner: Learner, experience: TaskExperience) -> TaskStats:
    return train_task_tfcsr(learner, experience, spaced=True)


def train_task_mgp(learner: Learner, experience: TaskExperience) -> TaskStats:
    """Train until new-task accuracy and buffer retention both clear their thresholds.

    The buffer receives this task's data only after training finishes, so task 0
    trains without replay and its retention check passes vacuously.
    """
    cfg, buffer = learner.config, learner.buffer
    stats = TaskStats()
    while stats.epochs < cfg.mgp.max_epochs_per_task:
        stats.epochs += 1
        stats.replay_batches += train_epoch(learner, experience, stats.epochs, replay=experience.task_id > 0)
        new_perf = evaluate(learner.model, experience.test)
        retained = True
        if len(buffer):
            outcome = probe_replay(learner.model, buffer, cfg.probe_size, learner.probe_rng,
                                   cfg.mgp.retention_thresh)
            stats.memory_checks += 1
            learner.counters.memory_checks += 1
            retained = outcome.passed
        if new_perf >= cfg.mgp.new_task_mastery_thresh and retained:
            break
    buffer.add_all(experience)
    return stats


def train_task(learner: Learner, experience: TaskExperience) -> TaskStats:
    method = learner.config.method
    if method in ("finetune", "er", "ewc", "si"):
        stats = train_task_er(learner, experience)
    elif method == "tfcsr":
        stats = train_task_tfcsr(learner, experience)
    elif method == "tfcsr_spaced":
        stats = train_task_tfcsr_spaced(learner, experience)
    else:
        stats = train_task_mgp(learner, experience)
    if method == "ewc":
        rng = make_rng(learner.seed, "sampling", "fisher", experience.task_id)
        ewc_consolidate(learner.model, experience, learner.cons, learner.config.fisher_samples, rng)
    elif method == "si":
        si_consolidate(learner.cons, learner.model, learner.config.si_damping)
    return stats


def run_protocol(protocol: TaskProtocol, spec: NetworkSpec, config: StrategyConfig, seed: int,
                 record_config: Optional[dict] = None,
                 on_task: Optional[Callable[[int, TaskFragment, Learner], None]] = None):
    """Train on every task in order and return the finished RunRecord."""
    started = time.perf_counter()
    learner = Learner.create(spec, config, seed)
    fragments = []
    for task in protocol.tasks:
        stats = train_task(learner, task)
        acc = average_seen_accuracy(learner.model, protocol, task.task_id + 1)
        frag = TaskFragment(task.task_id, acc, stats.replay_batches, stats.memory_checks, stats.epochs)
        fragments.append(frag)
        log.info("%s task %d: avg acc %.2f%%, replay %d, checks %d, epochs %d", config.method,
                 task.task_id, acc, stats.replay_batches, stats.memory_checks, stats.epochs)
        if on_task is not None:
            on_task(task.task_id, frag, learner)
    if record_config is None:
        record_config = {"strategy": config.to_dict(), "seed": seed, "network": repr(spec)}
    record = finalize_record(fragments, record_config, len(protocol.tasks), time.perf_counter() - started)
    return record, learner
