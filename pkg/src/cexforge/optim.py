"""Adam with bias correction and a one-cycle triangular learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class LrSchedule:
    """Triangular schedule: 0 -> peak over the first half, peak -> 0 over the second."""

    peak_lr: float
    total_epochs: int

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.total_epochs <= 0:
            raise ValueError("total_epochs must be positive")


def cyclic_lr(epoch: int, sched: LrSchedule) -> float:
    if not 0 <= epoch <= sched.total_epochs:
        raise ValueError(
            f"epoch {epoch} outside schedule range [0, {sched.total_epochs}]")
    half = sched.total_epochs / 2.0
    if epoch <= half:
        return sched.peak_lr * (epoch / half)
    return sched.peak_lr * ((sched.total_epochs - epoch) / half)


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter list."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(state: AdamState, params, grads: dict[Tensor, Tensor],
              lr: float) -> AdamState:
    """One in-place Adam update over params.named_params(); returns the state.

    Every parameter must have a gradient in `grads`. Moments are updated even
    when lr == 0, so the step counter advances regardless.
    """
    named = params.named_params()
    missing = [name for name, t in named if t not in grads]
    if missing:
        raise ValueError(f"missing gradients for parameters: {missing}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in named:
        g = grads[p].data
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return state
