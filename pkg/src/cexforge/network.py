"""Model forward pass.

Each catalog layer is lowered once to either an affine map on the flattened
activation vector or an elementwise monotone activation. Convolutions and
average pooling become sparse-patterned dense matrices built from cached
index arrays; this keeps one code path for evaluation, gradients, and
interval propagation, and it is fast at benchmark scale.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .zoo import (Activation, ArchSpec, AvgPool2d, Conv2d, Dense, Flatten,
                  ModelParams, infer_shapes)

_ACT_FWD = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}
_ACT_NP = {"relu": lambda x: np.maximum(x, 0.0),
           "tanh": np.tanh,
           "sigmoid": ad._sigmoid_stable}


@lru_cache(maxsize=None)
def _conv_indices(cin, h, w, filters, kh, kw, stride, padding):
    """(rows, cols, kidx, out_units, in_units, filter_of_row) for an unrolled conv."""
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    rows, cols, kidx = [], [], []
    for fo in range(filters):
        for yo in range(ho):
            for xo in range(wo):
                r = (fo * ho + yo) * wo + xo
                for ci in range(cin):
                    for ky in range(kh):
                        yi = yo * stride - padding + ky
                        if yi < 0 or yi >= h:
                            continue
                        for kx in range(kw):
                            xi = xo * stride - padding + kx
                            if xi < 0 or xi >= w:
                                continue
                            rows.append(r)
                            cols.append((ci * h + yi) * w + xi)
                            kidx.append(((fo * cin + ci) * kh + ky) * kw + kx)
    frow = np.repeat(np.arange(filters), ho * wo)
    return (np.asarray(rows), np.asarray(cols), np.asarray(kidx),
            filters * ho * wo, cin * h * w, frow)


@lru_cache(maxsize=None)
def _avgpool_matrix(c, h, w, kh, kw, stride):
    """Constant (out,in) averaging matrix; stride may differ from kernel size."""
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    m = np.zeros((c * ho * wo, c * h * w))
    inv = 1.0 / (kh * kw)
    for ci in range(c):
        for yo in range(ho):
            for xo in range(wo):
                r = (ci * ho + yo) * wo + xo
                for ky in range(kh):
                    for kx in range(kw):
                        m[r, (ci * h + (yo * stride + ky)) * w + (xo * stride + kx)] = inv
    return m


class _AffineLayer:
    """Affine step of the flattened forward pass: x -> x @ W.T + b."""

    def __init__(self, kind, weight, bias, conv_idx=None):
        self.kind = kind  # dense | conv2d | avgpool2d
        self.weight = weight  # parameter Tensor, or constant Tensor for avgpool
        self.bias = bias
        self._conv_idx = conv_idx

    def apply(self, x: Tensor, tape: Tape | None) -> Tensor:
        if self.kind == "conv2d":
            rows, cols, kidx, out_u, in_u, frow = self._conv_idx
            wmat = ad.scatter2d(ad.take(self.weight, kidx, tape), rows, cols,
                                (out_u, in_u), tape)
            bvec = ad.take(self.bias, frow, tape)
            return ad.affine(x, wmat, bvec, tape)
        return ad.affine(x, self.weight, self.bias, tape)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Numeric (W, b) snapshot of the current weights."""
        if self.kind == "conv2d":
            rows, cols, kidx, out_u, in_u, frow = self._conv_idx
            wmat = np.zeros((out_u, in_u))
            wmat[rows, cols] = self.weight.data.ravel()[kidx]
            return wmat, self.bias.data[frow]
        return self.weight.data, self.bias.data


class _ActLayer:
    def __init__(self, kind):
        self.kind = kind

    def apply(self, x: Tensor, tape: Tape | None) -> Tensor:
        return _ACT_FWD[self.kind](x, tape)

    def func(self, x: np.ndarray) -> np.ndarray:
        return _ACT_NP[self.kind](x)


class Runtime:
    """Lowered layer pipeline for one ModelParams; all shapes flat (N, d)."""

    def __init__(self, params: ModelParams):
        arch = params.arch
        shapes = infer_shapes(arch)
        self.input_dim = int(np.prod(arch.input_shape))
        self.num_classes = arch.num_classes
        self.layers: list = []
        shape = tuple(arch.input_shape)
        for i, spec in enumerate(arch.layers):
            tensors = params.layers[i]
            if isinstance(spec, Dense):
                self.layers.append(_AffineLayer("dense", tensors["weight"],
                                                tensors["bias"]))
            elif isinstance(spec, Conv2d):
                idx = _conv_indices(shape[0], shape[1], shape[2], spec.filters,
                                    spec.kh, spec.kw, spec.stride, spec.padding)
                self.layers.append(_AffineLayer("conv2d", tensors["weight"],
                                                tensors["bias"], conv_idx=idx))
            elif isinstance(spec, AvgPool2d):
                m = _avgpool_matrix(shape[0], shape[1], shape[2],
                                    spec.kh, spec.kw, spec.stride)
                self.layers.append(_AffineLayer(
                    "avgpool2d", Tensor(m), Tensor(np.zeros(m.shape[0]))))
            elif isinstance(spec, Activation):
                self.layers.append(_ActLayer(spec.kind))
            elif isinstance(spec, Flatten):
                pass  # activations are already flat
            shape = shapes[i]


def get_runtime(params: ModelParams) -> Runtime:
    rt = getattr(params, "_runtime", None)
    if rt is None:
        rt = Runtime(params)
        params._runtime = rt
    return rt


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    """Flatten input to (N, d); returns (array, had_batch_dim)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    d = int(np.prod(params.arch.input_shape))
    if arr.shape == tuple(params.arch.input_shape) or arr.shape == (d,):
        return arr.reshape(1, d), False
    if arr.ndim >= 2 and int(np.prod(arr.shape[1:])) == d:
        return arr.reshape(arr.shape[0], d), True
    raise ShapeError(
        f"input layer of '{params.arch.name}': got shape {arr.shape}, "
        f"expected {params.arch.input_shape} (optionally batched)")


def forward(params: ModelParams, x, tape: Tape | None = None) -> Tensor:
    """Logits for a single input (K,) or a batch (N, K).

    When `x` is a Tensor with requires_grad (or intermediate of a taped
    graph), pass the same tape used to build it so gradients flow to it.
    """
    xb, batched = _as_batch(params, x)
    if isinstance(x, Tensor) and (x.requires_grad or tape is not None):
        t = ad.reshape(x, xb.shape, tape) if x.data.shape != xb.shape else x
    else:
        t = Tensor(xb)
    rt = get_runtime(params)
    for layer in rt.layers:
        t = layer.apply(t, tape)
    return t if batched else ad.reshape(t, (rt.num_classes,), tape)


def forward_collect(params: ModelParams, x) -> list[np.ndarray]:
    """Per-layer post-activation values for one flat input; no gradients."""
    xb, _ = _as_batch(params, x)
    rt = get_runtime(params)
    outs = []
    cur = xb
    for layer in rt.layers:
        if isinstance(layer, _AffineLayer):
            w, b = layer.matrices()
            cur = cur @ w.T + b
        else:
            cur = layer.func(cur)
        outs.append(cur[0])
    return outs


def predict(params: ModelParams, x) -> int:
    """Strict argmax class; -1 when the top logit is tied (ambiguous label)."""
    z = forward(params, x).data
    if z.ndim != 1:
        raise ShapeError("predict expects a single input")
    top = int(np.argmax(z))
    if np.count_nonzero(z == z[top]) > 1:
        return -1
    return top
