"""Synthetic instance generation.

Inputs are uniform in [-1,1]^d with uniform random labels. Half the
instances carry a planted perturbation whose every component lies in the
outer shell [r*eps, eps] of the input ball, with a random wrong target
label. Instance centers are resampled until all perturbation balls are
pairwise disjoint in the max norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class DataGenConfig:
    input_shape: tuple[int, ...]
    eps: float
    n: int = 10
    r: float = 0.98
    num_classes: int = 2
    seed: int = 0
    max_retries: int = 1000

    def __post_init__(self):
        if not 0 <= self.r < 1:
            raise ValueError("shell ratio r must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")


@dataclass
class Counterexample:
    delta: np.ndarray
    target: int  # misclassification label, never equal to the instance label


@dataclass
class Instance:
    id: str
    x0: np.ndarray
    y: int
    eps: float
    kind: str  # "unverifiable" | "regular" | "unknown" (public view)
    cex: Optional[Counterexample] = None

    def __post_init__(self):
        if self.kind not in ("unverifiable", "regular", "unknown"):
            raise ValueError(f"unknown instance kind '{self.kind}'")
        if self.kind == "unverifiable" and self.cex is None:
            raise ValueError("unverifiable instance requires a planted counterexample")
        if self.kind != "unverifiable" and self.cex is not None:
            raise ValueError(f"{self.kind} instance must not carry a counterexample")
        if self.cex is not None and self.cex.target == self.y:
            raise ValueError("counterexample target equals the true label")

    @property
    def x_cex(self) -> np.ndarray:
        return self.x0 + self.cex.delta


@dataclass
class Dataset:
    config: DataGenConfig
    instances: list[Instance] = field(default_factory=list)

    @property
    def unverifiable(self) -> list[Instance]:
        return [i for i in self.instances if i.kind == "unverifiable"]

    @property
    def regular(self) -> list[Instance]:
        return [i for i in self.instances if i.kind == "regular"]


def sample_cex_perturbation(eps: float, r: float, shape, rng) -> np.ndarray:
    """Each component uniform on [-eps,-r*eps] U [r*eps,eps]."""
    if not 0 <= r < 1:
        raise ValueError("shell ratio r must be in [0, 1)")
    mag = rng.uniform(r * eps, eps, size=shape)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return sign * mag


def check_separation(points: list[np.ndarray], eps: float) -> bool:
    """True iff every pair of points is more than 2*eps apart in the max norm."""
    flat = [np.asarray(p).ravel() for p in points]
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            if np.max(np.abs(flat[i] - flat[j])) <= 2 * eps:
                return False
    return True


def gen_dataset(cfg: DataGenConfig) -> Dataset:
    """2n instances (n with planted counterexamples), deterministic from cfg.seed.

    Centers are drawn one at a time; a center too close to any accepted one is
    resampled, up to cfg.max_retries times per slot.
    """
    rng = np.random.default_rng(cfg.seed)
    shape = tuple(cfg.input_shape)
    total = 2 * cfg.n
    centers: list[np.ndarray] = []
    for _ in range(total):
        for attempt in range(cfg.max_retries + 1):
            x0 = rng.uniform(-1.0, 1.0, size=shape)
            flat = x0.ravel()
            if all(np.max(np.abs(flat - c.ravel())) > 2 * cfg.eps for c in centers):
                centers.append(x0)
                break
        else:
            raise ValueError(
                f"could not place {total} disjoint eps-balls (eps={cfg.eps}, "
                f"d={int(np.prod(shape))}) within {cfg.max_retries} retries per "
                f"point; reduce eps or n")
    labels = rng.integers(0, cfg.num_classes, size=total)
    # Opaque ids from a seeded permutation so numbering carries no kind signal.
    perm = rng.permutation(total)
    instances: list[Instance] = []
    for i in range(total):
        iid = f"i{perm[i]:04d}"
        y = int(labels[i])
        if i < cfg.n:
            delta = sample_cex_perturbation(cfg.eps, cfg.r, shape, rng)
            wrong = [c for c in range(cfg.num_classes) if c != y]
            target = int(wrong[rng.integers(0, len(wrong))])
            inst = Instance(iid, centers[i], y, cfg.eps, "unverifiable",
                            Counterexample(delta, target))
        else:
            inst = Instance(iid, centers[i], y, cfg.eps, "regular")
        instances.append(inst)
    return Dataset(config=cfg, instances=instances)
