"""Continual learning with task-focused consolidation and spaced recall."""

from .data import DataSplit, LabeledDataset, TaskExperience, TaskProtocol, minibatches, parse_idx, split_protocol, synth_tasks
from .memory import ReservoirBuffer
from .metrics import RunRecord, average_seen_accuracy, evaluate, finalize_record
from .nn import Batch, NetworkModel, NetworkSpec, adam_step, forward, init_network, loss_and_grad
from .strategies import METHODS, StrategyConfig, run_protocol

__version__ = "0.1.0"

__all__ = [
    "DataSplit",
    "LabeledDataset",
    "TaskExperience",
    "TaskProtocol",
    "minibatches",
    "parse_idx",
    "split_protocol",
    "synth_tasks",
    "ReservoirBuffer",
    "RunRecord",
    "average_seen_accuracy",
    "evaluate",
    "finalize_record",
    "Batch",
    "NetworkModel",
    "NetworkSpec",
    "adam_step",
    "forward",
    "init_network",
    "loss_and_grad",
    "METHODS",
    "StrategyConfig",
    "run_protocol",
]
