"""Datasets, MNIST IDX parsing, synthetic tasks and the split-task protocol."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConsistencyError, ContractError, FormatError, LengthError, ProtocolError
from .nn import Batch
from .rng import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_ROOT_ENV = "TFCSR_DATA_ROOT"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) < 1 or inputs.shape[0] != len(labels):
            raise ContractError(f"dataset has {inputs.shape[0]} inputs and {len(labels)} labels")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ContractError(f"labels must lie in [0, {self.class_count})")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.inputs[index], self.labels[index], self.class_count)


class DataSplit(NamedTuple):
    train: LabeledDataset
    test: LabeledDataset


@dataclass(frozen=True, eq=False)
class TaskExperience:
    task_id: int
    classes: tuple
    train: LabeledDataset
    test: LabeledDataset


@dataclass(frozen=True, eq=False)
class TaskProtocol:
    tasks: tuple
    total_classes: int

    def __len__(self) -> int:
        return len(self.tasks)


# -- IDX ---------------------------------------------------------------------

def _maybe_gunzip(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _read_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    raw = _maybe_gunzip(bytes(raw))
    if len(raw) < 4:
        raise LengthError(f"{what}: missing header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LengthError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise LengthError(f"{what}: payload has {len(raw) - header} bytes, header promises {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def parse_idx(image_bytes: bytes, label_bytes: bytes, class_count: Optional[int] = None) -> LabeledDataset:
    """Decode an IDX image/label pair; images come back as ``[n, 1, rows, cols]`` in [0, 1]."""
    images = _read_idx(image_bytes, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(label_bytes, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.astype(np.float64)[:, None, :, :] / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1
    return LabeledDataset(inputs, labels.astype(np.int64), class_count)


def to_idx_bytes(dataset: LabeledDataset) -> tuple[bytes, bytes]:
    """Encode a ``[n, 1, rows, cols]`` dataset back to IDX (pixels rounded from [0, 1])."""
    n = len(dataset)
    images = dataset.inputs.reshape(n, dataset.inputs.shape[-2], dataset.inputs.shape[-1])
    pixels = np.rint(images * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *images.shape[1:]) + pixels.tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return img, lab


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


def load_mnist(root: Optional[str] = None) -> DataSplit:
    """Read the four MNIST IDX files from ``root`` (or $TFCSR_DATA_ROOT). Never downloads."""
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no MNIST directory given and ${DATA_ROOT_ENV} unset")
    root = Path(root)
    parts = []
    for split in ("train", "test"):
        img, lab = MNIST_FILES[split]
        parts.append(parse_idx(_find(root, img).read_bytes(), _find(root, lab).read_bytes(), class_count=10))
    return DataSplit(*parts)


# -- synthetic ---------------------------------------------------------------

def lattice_means(class_count: int, dim: int) -> np.ndarray:
    """Class c sits at the base-b digits of c (b = smallest base with b**dim >= class_count)."""
    base = 2
    while base ** dim < class_count:
        base += 1
    means = np.zeros((class_count, dim))
    for c in range(class_count):
        q = c
        for d in range(dim):
            means[c, d] = q % base
            q //= base
    return means


def synth_tasks(class_count: int, dim: int, per_class: int, cluster_spread: float, seed: int) -> DataSplit:
    """Gaussian blobs around unit-spaced lattice points; first 80% of each class is train."""
    if class_count < 2 or per_class < 2:
        raise ContractError("need class_count >= 2 and per_class >= 2")
    rng = make_rng(seed, "synthetic")
    means = lattice_means(class_count, dim)
    n_train = int(round(per_class * 0.8))
    n_train = min(max(n_train, 1), per_class - 1)
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for c in range(class_count):
        pts = means[c] + cluster_spread * rng.standard_normal((per_class, dim))
        tr_x.append(pts[:n_train])
        te_x.append(pts[n_train:])
        tr_y.append(np.full(n_train, c))
        te_y.append(np.full(per_class - n_train, c))
    return DataSplit(
        LabeledDataset(np.concatenate(tr_x), np.concatenate(tr_y), class_count),
        LabeledDataset(np.concatenate(te_x), np.concatenate(te_y), class_count),
    )


# -- protocol ----------------------------------------------------------------

def _subsample(ds: LabeledDataset, classes, per_class: Optional[int], rng) -> LabeledDataset:
    keep = []
    for c in classes:
        idx = np.flatnonzero(ds.labels == c)
        if per_class is not None:
            if len(idx) < per_class:
                raise ProtocolError(f"class {c} has {len(idx)} examples, {per_class} requested")
            idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        keep.append(idx)
    return ds.subset(np.sort(np.concatenate(keep)))


def split_protocol(
    data: DataSplit,
    classes_per_task: int,
    subsample_per_class: Optional[int] = None,
    seed: int = 42,
    subsample_test_per_class: Optional[int] = None,
) -> TaskProtocol:
    """Cut a dataset into tasks of contiguous ascending class blocks."""
    train, test = data
    total = train.class_count
    if classes_per_task < 1 or total % classes_per_task:
        raise ProtocolError(f"{total} classes not divisible into tasks of {classes_per_task}")
    rng = make_rng(seed, "buffer", "subsample")
    tasks = []
    for t in range(total // classes_per_task):
        classes = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        tasks.append(TaskExperience(
            t, classes,
            _subsample(train, classes, subsample_per_class, rng),
            _subsample(test, classes, subsample_test_per_class, rng),
        ))
    return TaskProtocol(tuple(tasks), total)


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def minibatches(dataset: LabeledDataset, batch_size: int, seed: int, epoch: int, task_id: int = 0) -> list[Batch]:
    """One shuffled pass; the last batch may be short."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = make_rng(seed, "shuffle", task_id, epoch).permutation(len(dataset))
    return [
        Batch(dataset.inputs[idx], dataset.labels[idx])
        for idx in (order[s:s + batch_size] for s in range(0, len(dataset), batch_size))
    ]
