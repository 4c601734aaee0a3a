"""Two-objective training loop.

Each epoch attacks every instance (PGD, keeping the worst perturbation),
pushes the result into that instance's sliding window, and takes one
full-batch Adam step on

    hinge margin loss on planted counterexamples
  + cross-entropy averaged over every perturbation still in the windows.

The margin term caps how far the planted point may dominate the clean one,
which keeps the counterexample close to the decision boundary; the window
keeps earlier attack directions alive so new perturbations do not undo them.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attack import AttackConfig, attack_instances
from .autodiff import Tape, Tensor
from .datagen import Dataset, Instance
from .network import forward
from .optim import AdamState, LrSchedule, adam_step, cyclic_lr
from .zoo import ArchSpec, ModelParams, init_params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    peak_lr: float = 0.001
    margin_cap: float = 0.01  # desired logit gap cap for planted points
    window: int = 300
    attack_steps: int = 150
    attack_restarts: int = 150
    use_margin_objective: bool = True  # off: plain cross-entropy toward the target
    seed: int = 0

    def __post_init__(self):
        if self.margin_cap <= 0:
            raise ValueError("margin_cap must be positive")
        if self.window < 1:
            raise ValueError("window size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def train_attack(self) -> AttackConfig:
        # No early stop, and each restart stands by its final iterate (the
        # best restart wins): final iterates rattle around the decision
        # surface instead of re-feeding the single deepest point, so the
        # window tiles the pocket's surroundings and squeezes it shut.
        return AttackConfig(steps=self.attack_steps, restarts=self.attack_restarts,
                            early_stop=False, keep="final", seed=self.seed)


class PerturbWindow:
    """FIFO buffer of the most recent attack perturbations for one instance."""

    def __init__(self, maxlen: int, eps: float):
        self.eps = eps
        self._buf: deque[np.ndarray] = deque(maxlen=maxlen)

    def push(self, delta: np.ndarray) -> None:
        if np.max(np.abs(delta)) > self.eps + 1e-12:
            raise ValueError("perturbation leaves the eps-ball")
        self._buf.append(np.asarray(delta, dtype=np.float64))

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


def window_push(win: PerturbWindow, delta: np.ndarray) -> PerturbWindow:
    win.push(delta)
    return win


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")

    @staticmethod
    def from_jsonl(path) -> "TrainLog":
        with open(path) as f:
            return TrainLog([json.loads(line) for line in f if line.strip()])


def cex_loss(model: ModelParams, unv_instances: list[Instance],
             margin_cap: float, tape: Tape | None = None) -> Tensor:
    """Mean hinge max(0, f_y(x_cex) - f_target(x_cex) + cap) over planted points.

    Both logits are read at the planted point: the hinge is zero exactly when
    the target class dominates the true class there by at least the cap, so it
    enforces the counterexample condition while capping how deep the planted
    dip may grow (a deep dip is easy for attacks to find).
    """
    for inst in unv_instances:
        if inst.cex is None:
            raise ValueError(f"instance {inst.id} has no planted counterexample")
    xc = np.stack([i.x_cex.ravel() for i in unv_instances])
    ys = np.asarray([i.y for i in unv_instances], dtype=np.intp)
    ts = np.asarray([i.cex.target for i in unv_instances], dtype=np.intp)
    zc = forward(model, Tensor(xc), tape)
    gap = ad.sub(ad.pick(zc, ys, tape), ad.pick(zc, ts, tape), tape)
    hinge = ad.relu(ad.add_const(gap, margin_cap, tape), tape)
    return ad.mean_all(hinge, tape)


def cex_ce_loss(model: ModelParams, unv_instances: list[Instance],
                tape: Tape | None = None) -> Tensor:
    """Ablation variant: mean cross-entropy pushing planted points to their target."""
    xc = np.stack([i.x_cex.ravel() for i in unv_instances])
    ts = np.asarray([i.cex.target for i in unv_instances], dtype=np.intp)
    zc = forward(model, Tensor(xc), tape)
    return ad.mean_all(ad.cross_entropy(zc, ts, tape), tape)


def adv_window_loss(model: ModelParams, dataset: Dataset,
                    windows: dict[str, PerturbWindow],
                    tape: Tape | None = None) -> Tensor:
    """Cross-entropy averaged per window, then over instances (equal weight each)."""
    rows, labels, weights = [], [], []
    n_inst = len(dataset.instances)
    for inst in dataset.instances:
        win = windows[inst.id]
        if len(win) == 0:
            raise ValueError(f"instance {inst.id} has an empty perturbation window")
        w = 1.0 / (n_inst * len(win))
        for delta in win:
            rows.append(inst.x0.ravel() + delta)
            labels.append(inst.y)
            weights.append(w)
    x = np.stack(rows)
    z = forward(model, Tensor(x), tape)
    ce = ad.cross_entropy(z, np.asarray(labels, dtype=np.intp), tape)
    return ad.sum_all(ad.mul(ce, Tensor(np.asarray(weights)), tape), tape)


def train(dataset: Dataset, arch: ArchSpec,
          cfg: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Full training run; deterministic from cfg.seed."""
    model = init_params(arch, cfg.seed)
    sched = LrSchedule(peak_lr=cfg.peak_lr, total_epochs=cfg.epochs)
    adam = AdamState()
    attack_cfg = cfg.train_attack()
    instances = dataset.instances
    unv = dataset.unverifiable
    eps = dataset.config.eps
    windows = {i.id: PerturbWindow(cfg.window, eps) for i in instances}
    x0s = np.stack([i.x0.ravel() for i in instances])
    ys = np.asarray([i.y for i in instances], dtype=np.intp)
    log = TrainLog()

    for epoch in range(cfg.epochs):
        lr = cyclic_lr(epoch, sched)
        seeds = [cfg.seed + 1_000_003 * epoch + 10_000_019 * k
                 for k in range(len(instances))]
        results = attack_instances(model, x0s, ys, eps, attack_cfg, seeds)
        for inst, res in zip(instances, results):
            windows[inst.id].push(res.best_delta)

        tape = Tape()
        if cfg.use_margin_objective:
            l_cex = cex_loss(model, unv, cfg.margin_cap, tape)
        else:
            l_cex = cex_ce_loss(model, unv, tape)
        l_adv = adv_window_loss(model, dataset, windows, tape)
        l_total = ad.add(l_cex, l_adv, tape)
        for name, value in (("cex", l_cex), ("adv", l_adv)):
            if not np.isfinite(value.data):
                raise FloatingPointError(
                    f"non-finite {name} loss at epoch {epoch}")
        grads = ad.backward(tape, Tensor(1.0))
        adam_step(adam, model, grads, lr)

        gaps = [margin_gap(model, i) for i in unv]
        log.records.append({
            "epoch": epoch,
            "lr": lr,
            "loss_cex": float(l_cex.data),
            "loss_adv": float(l_adv.data),
            "loss_total": float(l_total.data),
            "cex_satisfied_count": int(sum(g <= -cfg.margin_cap for g in gaps)),
            "attack_success_count": int(sum(r.best_margin <= 0 for r in results)),
        })
    return model, log


def margin_gap(model: ModelParams, inst: Instance) -> float:
    """f_y(x_cex) - f_target(x_cex); the planted point misclassifies when < 0."""
    zc = forward(model, inst.x_cex.ravel()).data
    return float(zc[inst.y] - zc[inst.cex.target])
