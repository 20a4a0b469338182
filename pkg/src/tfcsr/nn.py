"""Small deterministic neural-network engine with manual backpropagation.

Tensors are float64 numpy arrays. Image inputs use ``[n, channels, height,
width]`` layout. Parameters are kept in flat name -> array maps keyed
``"<layer index>.weight"`` / ``"<layer index>.bias"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, SpecificationError
from .rng import make_rng

MASK_VALUE = -1e30


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int = 3


@dataclass(frozen=True)
class MaxPool2x2:
    pass


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2d, MaxPool2x2, ReLU, Flatten]


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack plus the per-example input shape it expects."""

    layers: tuple
    output_units: int
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        self.output_shapes()

    def output_shapes(self) -> list[tuple]:
        """Per-layer output shapes; raises SpecificationError on any mismatch."""
        shape = self.input_shape
        if not shape or any(d < 1 for d in shape):
            raise SpecificationError(f"bad input shape {shape}")
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.in_features:
                    raise SpecificationError(f"layer {i}: Dense expects ({layer.in_features},), got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv2d):
                if layer.kernel != 3:
                    raise SpecificationError(f"layer {i}: only 3x3 kernels are supported")
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise SpecificationError(f"layer {i}: Conv2d expects {layer.in_channels} channels, got {shape}")
                if shape[1] < 3 or shape[2] < 3:
                    raise SpecificationError(f"layer {i}: image {shape[1:]} smaller than kernel")
                shape = (layer.out_channels, shape[1] - 2, shape[2] - 2)
            elif isinstance(layer, MaxPool2x2):
                if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                    raise SpecificationError(f"layer {i}: MaxPool2x2 needs a [c, h>=2, w>=2] input, got {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise SpecificationError(f"layer {i}: unknown layer {layer!r}")
            shapes.append(shape)
        if shape != (self.output_units,):
            raise SpecificationError(f"network produces {shape}, expected ({self.output_units},)")
        return shapes


def mlp_spec(input_dim: int, hidden: Sequence[int], output_units: int) -> NetworkSpec:
    layers: list = []
    width = input_dim
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers.append(Dense(width, output_units))
    return NetworkSpec(layers, output_units, (input_dim,))


def cnn_spec(
    input_shape: Sequence[int],
    output_units: int,
    channels: Sequence[int] = (32, 64),
    hidden: int = 128,
) -> NetworkSpec:
    """Conv(3x3)-ReLU-MaxPool blocks followed by a two-layer dense head.

    The defaults reproduce the Split-MNIST CNN (32 and 64 kernels, 128 hidden units).
    """
    layers: list = []
    c, h, w = input_shape
    for out_c in channels:
        layers += [Conv2d(c, out_c), ReLU(), MaxPool2x2()]
        c, h, w = out_c, (h - 2) // 2, (w - 2) // 2
    layers += [Flatten(), Dense(c * h * w, hidden), ReLU(), Dense(hidden, output_units)]
    return NetworkSpec(layers, output_units, tuple(input_shape))


@dataclass
class NetworkModel:
    spec: NetworkSpec
    params: dict
    grads: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "NetworkModel":
        dup = lambda d: {k: a.copy() for k, a in d.items()}
        return NetworkModel(self.spec, dup(self.params), dup(self.grads), dup(self.m), dup(self.v), self.step)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.targets) < 1 or self.inputs.shape[0] != len(self.targets):
            raise ContractError(f"batch has {self.inputs.shape[0]} inputs and {len(self.targets)} targets")

    def __len__(self) -> int:
        return len(self.targets)


def init_network(spec: NetworkSpec, seed: int) -> NetworkModel:
    """He-uniform weights (std sqrt(2/fan_in)), zero biases, zeroed Adam state."""
    spec.output_shapes()
    rng = make_rng(seed, "init")
    params = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            fan_in, wshape, bshape = layer.in_features, (layer.in_features, layer.out_features), (layer.out_features,)
        elif isinstance(layer, Conv2d):
            k = layer.kernel
            fan_in = layer.in_channels * k * k
            wshape, bshape = (layer.out_channels, layer.in_channels, k, k), (layer.out_channels,)
        else:
            continue
        bound = np.sqrt(6.0 / fan_in)
        params[f"{i}.weight"] = rng.uniform(-bound, bound, size=wshape)
        params[f"{i}.bias"] = np.zeros(bshape)
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
    return NetworkModel(spec, params, zeros(), zeros(), zeros(), 0)


def _check_input(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != len(spec.input_shape) + 1 or x.shape[1:] != spec.input_shape:
        raise DimensionError(f"expected input [n, {', '.join(map(str, spec.input_shape))}], got {list(x.shape)}")
    return x


def _conv_forward(x, w, b):
    win = sliding_window_view(x, (3, 3), axis=(2, 3))  # n, c, h', w', 3, 3
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return out + b[None, :, None, None], win


def _conv_backward(g, win, w, x_shape):
    dw = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
    db = g.sum(axis=(0, 2, 3))
    dx = np.zeros(x_shape)
    ho, wo = g.shape[2], g.shape[3]
    for i in range(3):
        for j in range(3):
            dx[:, :, i:i + ho, j:j + wo] += np.einsum("nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
    return dx, dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(g, idx, x_shape):
    n, c, h, w = x_shape
    h2, w2 = g.shape[2], g.shape[3]
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, :2 * h2, :2 * w2] = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    return dx


def _forward(model: NetworkModel, x: np.ndarray, keep: bool):
    cache = []
    for i, layer in enumerate(model.spec.layers):
        if isinstance(layer, Dense):
            w, b = model.params[f"{i}.weight"], model.params[f"{i}.bias"]
            cache.append(x if keep else None)
            x = x @ w + b
        elif isinstance(layer, Conv2d):
            w, b = model.params[f"{i}.weight"], model.params[f"{i}.bias"]
            shape = x.shape
            x, win = _conv_forward(x, w, b)
            cache.append((win, shape) if keep else None)
        elif isinstance(layer, MaxPool2x2):
            shape = x.shape
            x, idx = _pool_forward(x)
            cache.append((idx, shape) if keep else None)
        elif isinstance(layer, ReLU):
            mask = x > 0
            x = x * mask
            cache.append(mask if keep else None)
        elif isinstance(layer, Flatten):
            cache.append(x.shape if keep else None)
            x = x.reshape(x.shape[0], -1)
    return x, cache


def _backward(model: NetworkModel, g: np.ndarray, cache: list) -> None:
    for i in range(len(model.spec.layers) - 1, -1, -1):
        layer, saved = model.spec.layers[i], cache[i]
        if isinstance(layer, Dense):
            model.grads[f"{i}.weight"] += saved.T @ g
            model.grads[f"{i}.bias"] += g.sum(axis=0)
            if i > 0:
                g = g @ model.params[f"{i}.weight"].T
        elif isinstance(layer, Conv2d):
            win, shape = saved
            dx, dw, db = _conv_backward(g, win, model.params[f"{i}.weight"], shape)
            model.grads[f"{i}.weight"] += dw
            model.grads[f"{i}.bias"] += db
            g = dx
        elif isinstance(layer, MaxPool2x2):
            idx, shape = saved
            g = _pool_backward(g, idx, shape)
        elif isinstance(layer, ReLU):
            g = g * saved
        elif isinstance(layer, Flatten):
            g = g.reshape(saved)


def forward(model: NetworkModel, inputs: np.ndarray) -> np.ndarray:
    """Logits of shape [n, output_units]. Does not touch model state."""
    x = _check_input(model.spec, inputs)
    logits, _ = _forward(model, x, keep=False)
    return logits


def class_mask(allowed_classes: Optional[Iterable[int]], output_units: int) -> Optional[np.ndarray]:
    if allowed_classes is None:
        return None
    mask = np.zeros(output_units, dtype=bool)
    idx = np.fromiter((int(c) for c in allowed_classes), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= output_units):
        raise ContractError(f"allowed classes outside [0, {output_units})")
    mask[idx] = True
    return mask


def masked_logits(logits: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return logits
    return np.where(mask[None, :], logits, MASK_VALUE)


def _softmax_xent(logits, targets, mask):
    z = masked_logits(logits, mask)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    n = len(targets)
    rows = np.arange(n)
    loss = float(np.mean(np.log(s[:, 0]) - z[rows, targets]))
    dz = e / s
    dz[rows, targets] -= 1.0
    return loss, dz / n


def _check_targets(model: NetworkModel, batch: Batch, mask):
    t = batch.targets
    if t.min() < 0 or t.max() >= model.spec.output_units:
        raise ContractError("target outside the output head")
    if mask is not None and not mask[t].all():
        raise ContractError("target outside allowed_classes")


def loss_and_grad(model: NetworkModel, batch: Batch, allowed_classes=None) -> float:
    """Mean softmax cross-entropy; overwrites ``model.grads`` with its gradient.

    Logits outside ``allowed_classes`` are replaced by -1e30 before the softmax,
    so they receive exactly zero probability and zero gradient.
    """
    mask = class_mask(allowed_classes, model.spec.output_units)
    _check_targets(model, batch, mask)
    x = _check_input(model.spec, batch.inputs)
    logits, cache = _forward(model, x, keep=True)
    loss, dz = _softmax_xent(logits, batch.targets, mask)
    model.zero_grad()
    _backward(model, dz, cache)
    return loss


def loss_value(model: NetworkModel, batch: Batch, allowed_classes=None) -> float:
    mask = class_mask(allowed_classes, model.spec.output_units)
    _check_targets(model, batch, mask)
    logits = forward(model, batch.inputs)
    return _softmax_xent(logits, batch.targets, mask)[0]


def adam_step(model: NetworkModel, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update from the current gradients."""
    for name in sorted(model.params):
        if not np.all(np.isfinite(model.grads[name])):
            raise FloatingPointError(f"non-finite gradient in {name}")
    model.step += 1
    t = model.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in sorted(model.params):
        g = model.grads[name]
        m = model.m[name]
        v = model.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        model.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
