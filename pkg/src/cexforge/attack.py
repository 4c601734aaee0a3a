"""Projected gradient descent in the max-norm ball, with restarts.

Restart 0 always starts at the clean point (it catches misclassified clean
inputs deterministically); the remaining restarts draw their start from
per-restart generators seeded seed+restart_index, so running restarts
batched or one by one selects the same perturbation. All restarts of all
queried points are stacked into one batch so each PGD step is a handful of
BLAS calls. Search regions are boxes: the bare eps-ball, or the ball
intersected with the data domain for training/evaluation attacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datagen import Instance
from .network import forward
from .zoo import ModelParams

BALL_TOL = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    steps: int
    restarts: int
    step_rule: tuple[str, float] = ("scaled", 2.5)  # ("scaled", c) -> c*eps/steps, or ("fixed", a)
    init: str = "uniform"  # uniform | zero
    targeted: Optional[int] = None
    seed: int = 0
    early_stop: bool = False
    stop_margin: float = 0.0  # stop once best margin <= this (when early_stop)
    keep: str = "best"  # "best": min margin over restarts and steps;
    #                     "final": each restart contributes its last iterate

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be at least 1")
        if self.step_rule[0] not in ("scaled", "fixed"):
            raise ValueError(f"unknown step rule '{self.step_rule[0]}'")
        if self.init not in ("uniform", "zero"):
            raise ValueError(f"unknown init mode '{self.init}'")
        if self.keep not in ("best", "final"):
            raise ValueError(f"unknown keep mode '{self.keep}'")
        if self.keep == "final" and self.early_stop:
            raise ValueError("keep='final' does not combine with early_stop")


@dataclass
class AttackResult:
    best_delta: np.ndarray
    best_margin: float
    success: bool
    restarts_used: int
    aborted_restarts: int = 0
    history: list[float] = field(default_factory=list)  # best-so-far per evaluation


def margin(logits, y: int) -> float:
    """min over i != y of logits[y] - logits[i]."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= y < z.size:
        raise ValueError(f"label {y} out of range for {z.size} logits")
    rest = np.delete(z, y)
    return float(z[y] - rest.max())


def _step_size(cfg: AttackConfig, eps_vec: np.ndarray) -> np.ndarray:
    kind, value = cfg.step_rule
    if kind == "scaled":
        return value * eps_vec / cfg.steps
    return np.full_like(eps_vec, value)


def _attack_batch(params: ModelParams, x0s: np.ndarray, ys: np.ndarray,
                  eps, cfg: AttackConfig, seeds: Sequence[int],
                  maximize: bool = False,
                  targets: Optional[np.ndarray] = None,
                  domain: Optional[tuple[float, float]] = None) -> list[AttackResult]:
    """Run cfg on B points jointly; returns one result per point.

    `eps` may be a scalar radius or a per-dimension radius vector shared by
    the batch. With `domain` set, the search region is the ball intersected
    with [domain[0], domain[1]]^d (the admissible data region); reported
    perturbations stay relative to x0. `targets` optionally gives a per-point
    target class, taking precedence over cfg.targeted. With maximize=True the
    attack seeks a point of large margin (used by the boundary-distance
    search); success then means margin > 0.
    """
    b, d = x0s.shape
    eps_vec = np.broadcast_to(np.asarray(eps, dtype=np.float64), (d,))
    if domain is None:
        centers = x0s
        radii = np.broadcast_to(eps_vec, (b, d))
        zero_init = np.zeros((b, d))
    else:
        lo = np.maximum(x0s - eps_vec, domain[0])
        hi = np.minimum(x0s + eps_vec, domain[1])
        centers = 0.5 * (lo + hi)
        radii = 0.5 * (hi - lo)
        zero_init = x0s - centers  # restart 0 still starts at the clean point
    n_restarts = cfg.restarts + 1  # restart 0: zero init, always present
    m = b * n_restarts
    sgn = -1.0 if maximize else 1.0

    delta = np.repeat(zero_init, n_restarts, axis=0)
    if cfg.init == "uniform":
        for i in range(b):
            for r in range(1, n_restarts):
                rng = np.random.default_rng(int(seeds[i]) + r)
                delta[i * n_restarts + r] = rng.uniform(-radii[i], radii[i])

    x0_rep = np.repeat(centers, n_restarts, axis=0)
    r_rep = np.repeat(radii, n_restarts, axis=0)
    y_rep = np.repeat(ys, n_restarts)
    if targets is not None:
        t_rep = np.repeat(np.asarray(targets, dtype=np.intp), n_restarts)
    elif cfg.targeted is not None:
        t_rep = np.full(m, cfg.targeted, dtype=np.intp)
    else:
        t_rep = None
    alpha = _step_size(cfg, np.asarray(eps_vec, dtype=np.float64))

    best_score = np.full(m, np.inf)  # score = margin, negated when maximizing
    best_delta = delta.copy()
    aborted = np.zeros(m, dtype=bool)  # non-finite gradient; record kept
    done = np.zeros(b, dtype=bool)     # instances past the early-stop margin
    # early-stopped instances return their first crossing, scanned restart 0
    # upward at the evaluation where the threshold was first reached
    chosen_row = np.full(b, -1, dtype=np.intp)
    chosen_delta = np.zeros((b, d))
    history = [[] for _ in range(b)]

    for step in range(cfg.steps + 1):
        last = step == cfg.steps
        tape = None
        d_t = Tensor(delta, requires_grad=True)
        if not last:
            tape = Tape(leaves=[d_t])
        x_t = ad.add(Tensor(x0_rep), d_t, tape)
        z = forward(params, x_t, tape)
        margins = ad.class_margin(z, y_rep).data
        if tape is not None:
            if t_rep is not None:
                obj = ad.sub(ad.pick(z, y_rep, tape), ad.pick(z, t_rep, tape), tape)
            else:
                obj = ad.class_margin(z, y_rep, tape)
            if maximize:
                obj = ad.scale(obj, -1.0, tape)
            ad.sum_all(obj, tape)

        score = sgn * margins
        if cfg.keep == "final":
            best_score = score.copy()  # each restart stands by its last iterate
            best_delta = delta.copy()
        else:
            improved = score < best_score
            if improved.any():
                best_score[improved] = score[improved]
                best_delta[improved] = delta[improved]
        per_inst = best_score.reshape(b, n_restarts).min(axis=1)
        for i in range(b):
            history[i].append(sgn * per_inst[i])

        if cfg.early_stop:
            crossed = margins > cfg.stop_margin if maximize \
                else margins <= cfg.stop_margin
            for i in np.flatnonzero(~done):
                rows = slice(i * n_restarts, (i + 1) * n_restarts)
                ok = crossed[rows]
                if ok.any():
                    r = int(np.argmax(ok))
                    chosen_row[i] = i * n_restarts + r
                    chosen_delta[i] = delta[i * n_restarts + r]
                    done[i] = True
            if done.all():
                break
        if last:
            break

        grads = ad.backward(tape, Tensor(1.0))
        g = grads[d_t].data
        bad = ~np.isfinite(g).all(axis=1)
        if bad.any():
            aborted |= bad
            g = np.where(np.isfinite(g), g, 0.0)
        move = ~(aborted | np.repeat(done, n_restarts))
        if not move.any():
            break
        delta[move] = np.clip(delta[move] - alpha * np.sign(g[move]),
                              -r_rep[move], r_rep[move])

    results = []
    for i in range(b):
        rows = slice(i * n_restarts, (i + 1) * n_restarts)
        if chosen_row[i] >= 0:
            sel = chosen_delta[i]
        else:
            r_best = int(np.argmin(best_score[rows]))  # ties keep lowest restart
            sel = best_delta[i * n_restarts + r_best]
        sel = centers[i] + sel - x0s[i]  # express relative to the clean point
        # Canonical single-input re-evaluation so stored margin re-validates exactly.
        z = forward(params, x0s[i] + sel).data
        true_margin = margin(z, int(ys[i]))
        success = true_margin > 0.0 if maximize else true_margin <= 0.0
        results.append(AttackResult(
            best_delta=sel.copy(),
            best_margin=true_margin,
            success=bool(success),
            restarts_used=n_restarts,
            aborted_restarts=int(aborted[rows].sum()),
            history=history[i],
        ))
    return results


def pgd(model: ModelParams, x0, y: int, eps: float, cfg: AttackConfig,
        domain: Optional[tuple[float, float]] = None) -> AttackResult:
    """Minimize the classification margin of (x0, y) inside the eps-ball,
    optionally intersected with a data domain [lo, hi]^d."""
    x0f = np.asarray(x0, dtype=np.float64).ravel()[None, :]
    res = _attack_batch(model, x0f, np.asarray([y], dtype=np.intp), eps, cfg,
                        seeds=[cfg.seed], domain=domain)[0]
    assert np.max(np.abs(res.best_delta)) <= np.max(np.atleast_1d(eps)) + BALL_TOL
    return res


DATA_DOMAIN = (-1.0, 1.0)  # inputs are generated in this box


def attack_instances(model: ModelParams, x0s: np.ndarray, ys: np.ndarray,
                     eps: float, cfg: AttackConfig, seeds: Sequence[int],
                     domain: Optional[tuple[float, float]] = None,
                     ) -> list[AttackResult]:
    """Batched PGD over many instances at once (training inner loop).

    Defaults to the bare ball: the training worst case ranges over the whole
    perturbation set, including planted regions beyond the data domain, which
    is what keeps the two training objectives in tension there. Evaluation
    attacks pass the data domain instead.
    """
    return _attack_batch(model, x0s, ys, eps, cfg, seeds, domain=domain)


def build_strong_suite(y: int, num_classes: int, eps: float, *,
                       restarts: int = 1000, steps: int = 5000,
                       seed: int = 0) -> list[AttackConfig]:
    """Strongest shipped attack: long multi-restart PGD, three extra step-size
    schedules under both init modes, and targeted runs toward each wrong class."""
    main = AttackConfig(steps=steps, restarts=restarts, step_rule=("scaled", 2.5),
                        init="uniform", seed=seed, early_stop=True)
    suite = [main]
    for t in range(num_classes):
        if t != y:
            suite.append(replace(main, targeted=t, seed=seed + 7919 * (t + 1)))
    small_r = max(5, restarts // 10)
    small_s = max(50, steps // 5)
    rules = [("scaled", 1.0), ("scaled", 0.5), ("fixed", eps / 10.0)]
    k = 0
    for rule in rules:
        for init in ("uniform", "zero"):
            k += 1
            suite.append(AttackConfig(steps=small_s, restarts=small_r,
                                      step_rule=rule, init=init,
                                      seed=seed + 104729 + k, early_stop=True))
    return suite


def strong_eval(model: ModelParams, inst: Instance,
                suite: list[AttackConfig],
                domain: Optional[tuple[float, float]] = DATA_DOMAIN,
                ) -> tuple[bool, Optional[np.ndarray]]:
    """Run every config until one finds a counterexample; returns (found, witness).

    The search region is the instance ball intersected with the data domain
    (pass domain=None for the bare ball).
    """
    if not suite:
        raise ValueError("attack suite must not be empty")
    x0f = np.asarray(inst.x0, dtype=np.float64).ravel()
    for cfg in suite:
        res = pgd(model, x0f, inst.y, inst.eps, cfg, domain=domain)
        if res.success:
            return True, (x0f + res.best_delta).reshape(inst.x0.shape)
    return False, None
