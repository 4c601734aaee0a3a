"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every value is a `Tensor` wrapping a C-contiguous float64 ndarray. Operations
are plain functions that optionally record onto a `Tape`; calling `backward`
on a completed tape returns exact gradients for every differentiable leaf.
The op set is deliberately small: enough to express the benchmark networks
(affine layers, monotone activations) and the attack/training objectives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Raised for tape misuse (empty backward, bad seed shape)."""


class ShapeError(ValueError):
    """Raised when operand shapes do not compose; message names the site."""


class Tensor:
    """A dense float64 array, optionally marked as a differentiable leaf."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of primitive ops; inputs of a node always precede it.

    `leaves` optionally restricts which requires_grad tensors count as leaves;
    gradients are then neither propagated to nor computed for the rest (used
    by the attack, which differentiates w.r.t. the perturbation only).
    """

    __slots__ = ("_nodes", "_live", "_leaves", "_filter")

    def __init__(self, leaves: Iterable[Tensor] | None = None):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], GradFn]] = []
        self._live: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self._filter = None if leaves is None else {id(t) for t in leaves}

    def _tracked(self, t: Tensor) -> bool:
        if id(t) in self._live:
            return True
        if not t.requires_grad:
            return False
        return self._filter is None or id(t) in self._filter

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: GradFn) -> None:
        if not any(self._tracked(t) for t in inputs):
            return
        for t in inputs:
            if self._tracked(t) and t.requires_grad and id(t) not in self._live:
                self._leaves.setdefault(id(t), t)
        self._live.add(id(out))
        self._nodes.append((out, inputs, grad_fn))

    def __len__(self) -> int:
        return len(self._nodes)


def backward(tape: Tape, seed_grad: Tensor) -> dict[Tensor, Tensor]:
    """Reverse sweep; returns {leaf tensor: gradient} for differentiable leaves."""
    if len(tape) == 0:
        raise AutodiffError("backward on empty tape: no differentiable ops recorded")
    final = tape._nodes[-1][0]
    seed = np.asarray(seed_grad.data if isinstance(seed_grad, Tensor) else seed_grad,
                      dtype=np.float64)
    if seed.shape != final.data.shape:
        raise AutodiffError(
            f"seed gradient shape {seed.shape} does not match final output "
            f"shape {final.data.shape}")
    grads: dict[int, np.ndarray] = {id(final): seed}
    for out, inputs, grad_fn in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, grad_fn(g)):
            if gt is None or not tape._tracked(t):
                continue
            acc = grads.get(id(t))
            if acc is None:
                grads[id(t)] = gt
            else:
                acc += gt
    # every leaf the tape saw gets a gradient, zero when nothing flowed to it
    return {leaf: Tensor(grads[i]) if i in grads
            else Tensor(np.zeros_like(leaf.data))
            for i, leaf in tape._leaves.items()}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data + b.data)
    if tape is not None:
        sa, sb = a.data.shape, b.data.shape
        tape.record(out, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))
    return out


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data - b.data)
    if tape is not None:
        sa, sb = a.data.shape, b.data.shape
        tape.record(out, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * b.data)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(out, (a, b),
                    lambda g: (_unbroadcast(g * bd, ad.shape),
                               _unbroadcast(g * ad, bd.shape)))
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * c)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * c,))
    return out


def add_const(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data + c)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g,))
    return out


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes do not compose: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        ad, bd = a.data, b.data
        na, nb = tape._tracked(a), tape._tracked(b)
        tape.record(out, (a, b),
                    lambda g: (g @ bd.T if na else None,
                               ad.T @ g if nb else None))
    return out


def affine(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """x @ w.T + b for x:(N,I), w:(O,I), b:(O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"affine shapes do not compose: x{x.shape}, w{w.shape}")
    out = Tensor(x.data @ w.data.T + b.data)
    if tape is not None:
        xd, wd = x.data, w.data
        nx, nw, nb = tape._tracked(x), tape._tracked(w), tape._tracked(b)
        tape.record(out, (x, w, b),
                    lambda g: (g @ wd if nx else None,
                               g.T @ xd if nw else None,
                               g.sum(axis=0) if nb else None))
    return out


def relu(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    if tape is not None:
        mask = a.data > 0.0
        tape.record(out, (a,), lambda g: (g * mask,))
    return out


def tanh(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.tanh(a.data))
    if tape is not None:
        od = out.data
        tape.record(out, (a,), lambda g: (g * (1.0 - od * od),))
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(_sigmoid_stable(a.data))
    if tape is not None:
        od = out.data
        tape.record(out, (a,), lambda g: (g * od * (1.0 - od),))
    return out


def reshape(a: Tensor, shape: tuple, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    if tape is not None:
        orig = a.data.shape
        tape.record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data.sum())
    if tape is not None:
        shp = a.data.shape
        tape.record(out, (a,), lambda g: (np.broadcast_to(g, shp).copy(),))
    return out


def mean_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.sum() / n)
    if tape is not None:
        shp = a.data.shape
        tape.record(out, (a,), lambda g: (np.broadcast_to(g / n, shp).copy(),))
    return out


def take(a: Tensor, idx: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Gather from the flattened view of `a`; duplicates in idx are allowed."""
    flat = a.data.ravel()
    out = Tensor(flat[idx])
    if tape is not None:
        size, shp = flat.size, a.data.shape
        tape.record(out, (a,),
                    lambda g: (np.bincount(idx, weights=g, minlength=size)
                               .reshape(shp),))
    return out


def scatter2d(vals: Tensor, rows: np.ndarray, cols: np.ndarray, shape: tuple,
              tape: Tape | None = None) -> Tensor:
    """Dense (R,C) matrix with m[rows[k], cols[k]] = vals[k]; pairs must be unique."""
    m = np.zeros(shape, dtype=np.float64)
    m[rows, cols] = vals.data
    out = Tensor(m)
    if tape is not None:
        tape.record(out, (vals,), lambda g: (g[rows, cols],))
    return out


def pick(z: Tensor, idx: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Per-row class pick: z:(N,K), idx:(N,) -> (N,)."""
    n = z.data.shape[0]
    ar = np.arange(n)
    out = Tensor(z.data[ar, idx])
    if tape is not None:
        shp = z.data.shape

        def grad(g):
            gz = np.zeros(shp)
            np.add.at(gz, (ar, idx), g)
            return (gz,)

        tape.record(out, (z,), grad)
    return out


def logsumexp(z: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise logsumexp of z:(N,K), numerically stable."""
    m = z.data.max(axis=1, keepdims=True)
    ex = np.exp(z.data - m)
    s = ex.sum(axis=1, keepdims=True)
    out = Tensor((m + np.log(s)).ravel())
    if tape is not None:
        soft = ex / s
        tape.record(out, (z,), lambda g: (soft * g[:, None],))
    return out


def class_margin(z: Tensor, y: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Per-row min over i != y of (z[y] - z[i]); ties pick the lowest wrong index."""
    n, k = z.data.shape
    if k < 2:
        raise ShapeError("class_margin needs at least two classes")
    ar = np.arange(n)
    zy = z.data[ar, y]
    masked = z.data.copy()
    masked[ar, y] = -np.inf
    j = masked.argmax(axis=1)
    out = Tensor(zy - masked[ar, j])
    if tape is not None:
        shp = z.data.shape

        def grad(g):
            gz = np.zeros(shp)
            np.add.at(gz, (ar, y), g)
            np.add.at(gz, (ar, j), -g)
            return (gz,)

        tape.record(out, (z,), grad)
    return out


def cross_entropy(z: Tensor, y: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Per-row softmax cross-entropy against integer labels: (N,K),(N,) -> (N,)."""
    lse = logsumexp(z, tape)
    zy = pick(z, y, tape)
    return sub(lse, zy, tape)
