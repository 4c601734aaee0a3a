"""Benchmark architecture catalog and seeded weight initialization.

Eight small classifier bodies: four ReLU CNNs (one with average pooling),
two deep MLPs, and Tanh/Sigmoid variants of the single-conv CNN. All end in
a two-logit dense layer. Convolutions are stride-1 and unpadded, except the
three-conv stack which pads by one so that 5x5 benchmark inputs compose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .autodiff import Tensor


class ArchError(ValueError):
    """Raised when a layer stack does not compose with the input shape."""


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class Conv2d:
    filters: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class AvgPool2d:
    kh: int
    kw: int
    stride: int


@dataclass(frozen=True)
class Activation:
    kind: str  # relu | tanh | sigmoid


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Dense, Conv2d, AvgPool2d, Activation, Flatten]

ACTIVATIONS = ("relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    num_classes: int = 2

    def __post_init__(self):
        infer_shapes(self)  # composition is statically checkable


def infer_shapes(arch: "ArchSpec") -> list[tuple[int, ...]]:
    """Output shape after each layer; raises ArchError naming the bad layer."""
    shape = tuple(arch.input_shape)
    shapes = []
    for i, layer in enumerate(arch.layers):
        where = f"layer {i} ({type(layer).__name__})"
        if isinstance(layer, Dense):
            if len(shape) != 1:
                raise ArchError(f"{where}: dense needs a flat input, got {shape}")
            shape = (layer.width,)
        elif isinstance(layer, Conv2d):
            if len(shape) != 3:
                raise ArchError(f"{where}: conv needs (C,H,W) input, got {shape}")
            c, h, w = shape
            ho = (h + 2 * layer.padding - layer.kh) // layer.stride + 1
            wo = (w + 2 * layer.padding - layer.kw) // layer.stride + 1
            if ho < 1 or wo < 1:
                raise ArchError(
                    f"{where}: kernel {layer.kh}x{layer.kw} does not fit "
                    f"input {h}x{w} with padding {layer.padding}")
            shape = (layer.filters, ho, wo)
        elif isinstance(layer, AvgPool2d):
            if len(shape) != 3:
                raise ArchError(f"{where}: avgpool needs (C,H,W) input, got {shape}")
            c, h, w = shape
            ho = (h - layer.kh) // layer.stride + 1
            wo = (w - layer.kw) // layer.stride + 1
            if ho < 1 or wo < 1:
                raise ArchError(f"{where}: window {layer.kh}x{layer.kw} does not "
                                f"fit input {h}x{w}")
            shape = (c, ho, wo)
        elif isinstance(layer, Activation):
            if layer.kind not in ACTIVATIONS:
                raise ArchError(f"{where}: unknown activation '{layer.kind}'")
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        else:
            raise ArchError(f"{where}: unknown layer type")
        shapes.append(shape)
    if shape != (arch.num_classes,):
        raise ArchError(
            f"final layer produces {shape}, expected ({arch.num_classes},)")
    return shapes


def _cnn(name: str, input_shape, conv_filters, act: str, *, padding=0,
         avgpool_stride=None) -> ArchSpec:
    layers: list[LayerSpec] = []
    for f in conv_filters:
        layers += [Conv2d(f, 3, 3, 1, padding), Activation(act)]
    if avgpool_stride is not None:
        layers.append(AvgPool2d(3, 3, avgpool_stride))
    layers.append(Flatten())
    for w in (1000, 100, 20):
        layers += [Dense(w), Activation(act)]
    layers.append(Dense(2))
    return ArchSpec(name, tuple(input_shape), tuple(layers))


def _mlp(name: str, input_shape, widths) -> ArchSpec:
    layers: list[LayerSpec] = [Flatten()]
    for w in widths:
        layers += [Dense(w), Activation("relu")]
    layers.append(Dense(2))
    return ArchSpec(name, tuple(input_shape), tuple(layers))


ZOO_NAMES = ("cnn_1conv", "cnn_2conv", "cnn_3conv", "cnn_avgpool",
             "mlp_4hidden", "mlp_5hidden", "cnn_tanh", "cnn_sigmoid")


def build_arch(name: str, input_shape, avgpool_stride: int = 1) -> ArchSpec:
    """Architecture by catalog name; avgpool_stride only affects cnn_avgpool."""
    if name == "cnn_1conv":
        return _cnn(name, input_shape, [10], "relu")
    if name == "cnn_2conv":
        return _cnn(name, input_shape, [5, 10], "relu")
    if name == "cnn_3conv":
        # Three stacked 3x3 convs cannot fit a 5x5 input unpadded.
        return _cnn(name, input_shape, [5, 10, 20], "relu", padding=1)
    if name == "cnn_avgpool":
        return _cnn(name, input_shape, [10], "relu", avgpool_stride=avgpool_stride)
    if name == "mlp_4hidden":
        return _mlp(name, input_shape, [100, 1000, 1000, 1000, 20])
    if name == "mlp_5hidden":
        return _mlp(name, input_shape, [100, 1000, 1000, 1000, 1000, 20])
    if name == "cnn_tanh":
        return _cnn(name, input_shape, [10], "tanh")
    if name == "cnn_sigmoid":
        return _cnn(name, input_shape, [10], "sigmoid")
    raise ValueError(f"unknown architecture '{name}'; valid names: {', '.join(ZOO_NAMES)}")


@dataclass
class ModelParams:
    """Architecture plus learned weights; layer i's tensors live in layers[i]."""

    arch: ArchSpec
    layers: list[dict[str, Tensor]]
    init_seed: int = 0

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, d in enumerate(self.layers):
            for key in ("weight", "bias"):
                if key in d:
                    out.append((f"layer{i}.{key}", d[key]))
        return out

    def num_params(self) -> int:
        return sum(t.size for _, t in self.named_params())


def init_params(arch: ArchSpec, seed: int) -> ModelParams:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(seed)
    shapes = infer_shapes(arch)
    layers: list[dict[str, Tensor]] = []
    shape = tuple(arch.input_shape)
    for i, layer in enumerate(arch.layers):
        d: dict[str, Tensor] = {}
        if isinstance(layer, Dense):
            fan_in = shape[0]
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(layer.width, fan_in))
            d["weight"] = Tensor(w, requires_grad=True)
            d["bias"] = Tensor(np.zeros(layer.width), requires_grad=True)
        elif isinstance(layer, Conv2d):
            fan_in = shape[0] * layer.kh * layer.kw
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound,
                            size=(layer.filters, shape[0], layer.kh, layer.kw))
            d["weight"] = Tensor(w, requires_grad=True)
            d["bias"] = Tensor(np.zeros(layer.filters), requires_grad=True)
        layers.append(d)
        shape = shapes[i]
    return ModelParams(arch=arch, layers=layers, init_seed=seed)
