"""Post-training benchmark filtering and boundary-distance analysis.

Planted instances survive only if the model classifies the clean point
correctly, classifies the planted point as its target, and the strong attack
suite fails to find any counterexample in the ball intersected with the data
domain (the region attacks actually probe). Regular instances keep the first
and third checks. Dropped instances are logged with the failed step, never
silently renumbered.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .attack import AttackConfig, _attack_batch, build_strong_suite, margin
from .datagen import Dataset, Instance
from .network import forward, predict
from .zoo import ModelParams


@dataclass
class EvalOutcome:
    instance_id: str
    clean_correct: bool
    cex_misclassified: Optional[bool] = None   # planted instances only
    hidden: Optional[bool] = None              # attack found nothing
    boundary_distance: Optional[float] = None

    @property
    def kept(self) -> bool:
        checks = [self.clean_correct, self.cex_misclassified, self.hidden]
        return all(c for c in checks if c is not None)


@dataclass
class BenchmarkSet:
    model: ModelParams
    kept_unverifiable: list[Instance]
    regular: list[Instance]
    provenance: dict = field(default_factory=dict)
    drops: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class EvalSuiteConfig:
    """Scale of the strong attack suite used by the filter."""

    restarts: int = 1000
    steps: int = 5000
    seed: int = 0

    def build(self, y: int, num_classes: int, eps: float) -> list[AttackConfig]:
        return build_strong_suite(y, num_classes, eps, restarts=self.restarts,
                                  steps=self.steps, seed=self.seed)


def eval_unverifiable(model: ModelParams, inst: Instance,
                      suite: list[AttackConfig]) -> EvalOutcome:
    if inst.kind != "unverifiable":
        raise ValueError(f"instance {inst.id} is not a planted instance")
    out = EvalOutcome(inst.id, clean_correct=predict(model, inst.x0) == inst.y)
    out.cex_misclassified = predict(model, inst.x_cex) == inst.cex.target
    from .attack import strong_eval
    found, _ = strong_eval(model, inst, suite)
    out.hidden = not found
    return out


def eval_regular(model: ModelParams, inst: Instance,
                 suite: list[AttackConfig]) -> EvalOutcome:
    if inst.kind != "regular":
        raise ValueError(f"instance {inst.id} is not a regular instance")
    out = EvalOutcome(inst.id, clean_correct=predict(model, inst.x0) == inst.y)
    from .attack import strong_eval
    found, _ = strong_eval(model, inst, suite)
    out.hidden = not found
    return out


def _batched_hidden(model: ModelParams, instances: list[Instance],
                    suite_cfg: EvalSuiteConfig) -> dict[str, bool]:
    """Run the strong suite over many instances at once (identical per-instance
    semantics as strong_eval: same configs, same per-restart seeds, same
    ball-within-domain search region)."""
    from .attack import DATA_DOMAIN
    if not instances:
        return {}
    eps = instances[0].eps
    num_classes = model.arch.num_classes
    x0s = np.stack([i.x0.ravel() for i in instances])
    ys = np.asarray([i.y for i in instances], dtype=np.intp)
    found = {i.id: False for i in instances}
    base = suite_cfg.build(0, num_classes, eps)
    for k, cfg in enumerate(base):
        active = [j for j, inst in enumerate(instances) if not found[inst.id]]
        if not active:
            break
        idx = np.asarray(active)
        targets = None
        if cfg.targeted is not None:
            # suite is built against y=0, so its targeted entries enumerate
            # shifts 1..K-1; rotating by the true label covers every wrong class
            targets = (ys[idx] + cfg.targeted) % num_classes
        res = _attack_batch(model, x0s[idx], ys[idx], eps, cfg,
                            seeds=[cfg.seed] * len(idx), targets=targets,
                            domain=DATA_DOMAIN)
        for j, r in zip(active, res):
            if r.success:
                found[instances[j].id] = True
    return {iid: not f for iid, f in found.items()}


def filter_benchmark(model: ModelParams, dataset: Dataset,
                     suite_cfg: EvalSuiteConfig,
                     provenance: Optional[dict] = None) -> BenchmarkSet:
    """Apply the three-step / two-step checks to every instance."""
    kept_unv: list[Instance] = []
    kept_reg: list[Instance] = []
    drops: list[dict] = []

    hidden_unv = _batched_hidden(model, dataset.unverifiable, suite_cfg)
    hidden_reg = _batched_hidden(model, dataset.regular, suite_cfg)

    for inst in dataset.unverifiable:
        clean = predict(model, inst.x0) == inst.y
        miscls = predict(model, inst.x_cex) == inst.cex.target
        hidden = hidden_unv[inst.id]
        if clean and miscls and hidden:
            kept_unv.append(inst)
        else:
            step = ("clean_prediction" if not clean
                    else "planted_misclassification" if not miscls
                    else "counterexample_rediscovered")
            drops.append({"id": inst.id, "kind": inst.kind, "failed": step})
    for inst in dataset.regular:
        clean = predict(model, inst.x0) == inst.y
        hidden = hidden_reg[inst.id]
        if clean and hidden:
            kept_reg.append(inst)
        else:
            step = "clean_prediction" if not clean else "counterexample_found"
            drops.append({"id": inst.id, "kind": inst.kind, "failed": step})
    return BenchmarkSet(model=model, kept_unverifiable=kept_unv,
                        regular=kept_reg, provenance=provenance or {},
                        drops=drops)


@dataclass
class BoundarySearch:
    distance: float
    witness: np.ndarray


def boundary_distance(model: ModelParams, x_cex, y: int, eps_max: float,
                      tol: float = 1e-6, steps: int = 200, restarts: int = 10,
                      seed: int = 0) -> BoundarySearch:
    """Smallest max-norm radius around x_cex containing a correctly classified
    point, found by bisection over the radius with an inner ascent attack.

    The returned distance is the max-norm of (witness - x_cex) for the best
    witness found, an upper bound on the true distance to the boundary.
    """
    xc = np.asarray(x_cex, dtype=np.float64).ravel()
    if predict(model, xc) == y:
        raise ValueError("x_cex is already classified correctly")

    def probe(rho: float) -> Optional[np.ndarray]:
        cfg = AttackConfig(steps=steps, restarts=restarts, seed=seed,
                           early_stop=True, stop_margin=0.0)
        res = _attack_batch(model, xc[None, :], np.asarray([y], dtype=np.intp),
                            rho, cfg, seeds=[seed], maximize=True)[0]
        return xc + res.best_delta if res.success else None

    best = probe(eps_max)
    if best is None:
        raise ValueError(
            f"no correctly classified point found within radius {eps_max}")
    lo, hi = 0.0, eps_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        w = probe(mid)
        if w is not None:
            best, hi = w, mid
        else:
            lo = mid
    dist = float(np.max(np.abs(best - xc)))
    return BoundarySearch(distance=dist, witness=best)
