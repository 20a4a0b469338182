"""Run configuration: YAML file -> dataclasses, with dotted CLI overrides.

Schema (every key optional, defaults shown)::

    benchmark: synthetic          # or mnist_split
    seed: 42
    out: runs/default
    data:                         # mnist_split only
      root: null                  # falls back to $TFCSR_DATA_ROOT
      classes_per_task: 2
      subsample_per_class: 500    # train examples kept per class, null = all
      subsample_test_per_class: 100
    synthetic:
      class_count: 10
      dim: 4
      per_class: 625              # 80% train / 20% test
      spread: 0.2
      classes_per_task: 2
    network:
      kind: mlp                   # or cnn
      hidden: [64]                # mlp hidden widths / cnn dense width (first entry)
      channels: [32, 64]          # cnn only
    strategy:                     # see StrategyConfig
      method: tfcsr
      ...
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .strategies import MGPConfig, StrategyConfig

BENCHMARKS = ("synthetic", "mnist_split")
NETWORKS = ("mlp", "cnn")


@dataclass
class DataConfig:
    root: Optional[str] = None
    classes_per_task: int = 2
    subsample_per_class: Optional[int] = 500
    subsample_test_per_class: Optional[int] = 100


@dataclass
class SyntheticConfig:
    class_count: int = 10
    dim: int = 4
    per_class: int = 625
    spread: float = 0.2
    classes_per_task: int = 2


@dataclass
class NetworkConfig:
    kind: str = "mlp"
    hidden: list = field(default_factory=lambda: [64])
    channels: list = field(default_factory=lambda: [32, 64])


@dataclass
class RunConfig:
    benchmark: str = "synthetic"
    seed: int = 42
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"benchmark must be one of {', '.join(BENCHMARKS)}")
        if self.network.kind not in NETWORKS:
            raise ConfigError(f"network.kind must be one of {', '.join(NETWORKS)}")

    def to_dict(self) -> dict:
        return asdict(self)

    def experiment_dict(self) -> dict:
        """Everything that determines results (drops the output location)."""
        d = self.to_dict()
        d.pop("out")
        return d

    def protocol_dict(self) -> dict:
        d = {"benchmark": self.benchmark, "seed": self.seed}
        d["data" if self.benchmark == "mnist_split" else "synthetic"] = asdict(
            self.data if self.benchmark == "mnist_split" else self.synthetic)
        return d


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    nested = {"data": DataConfig, "synthetic": SyntheticConfig, "network": NetworkConfig,
              "strategy": StrategyConfig, "mgp": MGPConfig}
    kwargs = {}
    for k, v in raw.items():
        sub = nested.get(k)
        kwargs[k] = _build(sub, v, f"{where}.{k}".lstrip(".")) if sub else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(raw: Optional[dict]) -> RunConfig:
    return _build(RunConfig, raw or {}, "")


def load_raw(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad YAML in {path}: {exc}") from None
    return raw or {}


def apply_override(raw: dict, dotted: str, value: Any) -> dict:
    out = copy.deepcopy(raw)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a mapping")
    node[keys[-1]] = value
    return out


def parse_assignment(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, val = text.split("=", 1)
    return key.strip(), yaml.safe_load(val)
