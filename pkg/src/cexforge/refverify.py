"""Sound baseline verifier with controllable synthetic bugs.

Bounds come from plain interval propagation: affine layers move the box
center and radius (radius through |W|), monotone activations evaluate the
endpoints. Verification margins are bounded by folding the logit difference
rows into the final affine layer, which is exact for affine networks.
Branch-and-bound splits the widest input dimension at its midpoint and runs
a short PGD inside each domain as the falsification probe.

Two deliberate unsoundness knobs for fuzzing the harness:

  alpha: shrink the input radius to (1-alpha)*eps and pull every layer's
         interval toward the activation of the unperturbed input.
  beta:  after each split, drop each child domain with probability beta.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attack import AttackConfig, _attack_batch, margin
from .network import forward, forward_collect, get_runtime, _AffineLayer
from .zoo import ModelParams


@dataclass
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64).ravel()
        self.upper = np.asarray(self.upper, dtype=np.float64).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("box bounds must share a shape")
        if not (self.lower <= self.upper).all():
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


@dataclass
class LayerBounds:
    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def logits(self) -> tuple[np.ndarray, np.ndarray]:
        return self.layers[-1]


@dataclass(frozen=True)
class BugConfig:
    alpha: float = 0.0
    beta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError("bug factors must lie in [0, 1]")


@dataclass(frozen=True)
class VerifyBudget:
    max_domains: Optional[int] = 20000
    timeout: Optional[float] = None  # seconds

    def __post_init__(self):
        if self.max_domains is not None and self.max_domains <= 0:
            raise ValueError("max_domains must be positive")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class Verdict:
    status: str  # verified | falsified | unknown
    witness: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)


def _affine_stack(model: ModelParams):
    """Numeric snapshot of the lowered layers: ('affine', W, b) or ('act', f)."""
    stack = []
    for layer in get_runtime(model).layers:
        if isinstance(layer, _AffineLayer):
            w, b = layer.matrices()
            stack.append(("affine", w, np.abs(w), b))
        else:
            stack.append(("act", layer.func))
    return stack


def _shrink(lo, hi, nominal, alpha):
    return lo + alpha * (nominal - lo), hi + alpha * (nominal - hi)


def ibp_bounds(model: ModelParams, box: Box, bug: BugConfig = BugConfig(),
               x0=None) -> LayerBounds:
    """Per-layer output intervals over the box; sound when bug.alpha == 0.

    With alpha > 0, each layer's interval is pulled toward the layer's value
    at x0 (the unsound shrunk-bounds bug), so x0 is required then.
    """
    if bug.alpha > 0.0 and x0 is None:
        raise ValueError("bound shrinking needs the unperturbed input x0")
    nominal = forward_collect(model, x0) if bug.alpha > 0.0 else None
    lo, hi = box.lower, box.upper
    out = []
    for k, item in enumerate(_affine_stack(model)):
        if item[0] == "affine":
            _, w, aw, b = item
            c = 0.5 * (lo + hi) @ w.T + b
            r = 0.5 * (hi - lo) @ aw.T
            lo, hi = c - r, c + r
        else:
            lo, hi = item[1](lo), item[1](hi)
        if bug.alpha > 0.0:
            lo, hi = _shrink(lo, hi, nominal[k], bug.alpha)
        out.append((lo, hi))
    return LayerBounds(out)


def _margin_lower_bounds(stack, box: Box, y: int, bug: BugConfig,
                         nominal_layers, nominal_logits) -> np.ndarray:
    """Lower bounds of f_y - f_i for all i != y, folding the differences into
    the final affine layer (exact for a single affine layer)."""
    lo, hi = box.lower, box.upper
    for k, item in enumerate(stack[:-1]):
        if item[0] == "affine":
            _, w, aw, b = item
            c = 0.5 * (lo + hi) @ w.T + b
            r = 0.5 * (hi - lo) @ aw.T
            lo, hi = c - r, c + r
        else:
            lo, hi = item[1](lo), item[1](hi)
        if bug.alpha > 0.0:
            lo, hi = _shrink(lo, hi, nominal_layers[k], bug.alpha)
    kind, w, _, b = stack[-1]
    if kind != "affine":
        raise ValueError("verification needs a final affine layer")
    k_classes = w.shape[0]
    rows = np.stack([w[y] - w[i] for i in range(k_classes) if i != y])
    bias = np.asarray([b[y] - b[i] for i in range(k_classes) if i != y])
    c = rows @ (0.5 * (lo + hi)) + bias
    r = np.abs(rows) @ (0.5 * (hi - lo))
    mlo = c - r
    if bug.alpha > 0.0:
        wrong = [i for i in range(k_classes) if i != y]
        nom = np.asarray([nominal_logits[y] - nominal_logits[i] for i in wrong])
        mlo = mlo + bug.alpha * (nom - mlo)
    return mlo


def drop_domains(children: list[Box], beta: float, rng) -> list[Box]:
    """Keep each child independently with probability 1-beta (one draw each,
    in order, so the outcome is a pure function of the generator state)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if beta == 0.0:
        return list(children)
    return [c for c in children if rng.random() >= beta]


_PROBE_CFG = AttackConfig(steps=20, restarts=1, early_stop=True, stop_margin=0.0)


def split_box(box: Box) -> tuple[Box, Box]:
    """Halve the widest dimension at its midpoint; children tile the parent
    exactly, overlapping only on the shared face."""
    widths = box.upper - box.lower
    dim = int(np.argmax(widths))
    mid = 0.5 * (box.lower[dim] + box.upper[dim])
    if not box.lower[dim] < mid < box.upper[dim]:
        raise ValueError("box too thin to split")
    left_hi = box.upper.copy()
    left_hi[dim] = mid
    right_lo = box.lower.copy()
    right_lo[dim] = mid
    return Box(box.lower.copy(), left_hi), Box(right_lo, box.upper.copy())


def verify(model: ModelParams, x0, y: int, eps: float,
           bug: BugConfig = BugConfig(),
           budget: VerifyBudget = VerifyBudget()) -> Verdict:
    """Branch-and-bound robustness check of (x0, y, eps) under the bug knobs."""
    x0f = np.asarray(x0, dtype=np.float64).ravel()
    radius = (1.0 - bug.alpha) * eps
    root = Box(x0f - radius, x0f + radius)
    stack_layers = _affine_stack(model)
    nominal_layers = forward_collect(model, x0f) if bug.alpha > 0.0 else None
    nominal_logits = nominal_layers[-1] if bug.alpha > 0.0 else None
    rng = np.random.default_rng(bug.seed)

    start = time.monotonic()
    queue = [(root, 0)]
    explored = 0
    deepest = 0
    status = "verified"  # until a budget stop or counterexample
    witness = None
    while queue:
        if budget.max_domains is not None and explored >= budget.max_domains:
            status = "unknown"
            break
        if budget.timeout is not None and time.monotonic() - start > budget.timeout:
            status = "unknown"
            break
        box, depth = queue.pop()
        explored += 1
        deepest = max(deepest, depth)
        mlo = _margin_lower_bounds(stack_layers, box, y, bug,
                                   nominal_layers, nominal_logits)
        if mlo.min() > 0.0:
            continue  # domain certified
        probe_seed = int(rng.integers(0, 2**63 - 1))
        res = _attack_batch(model, box.center[None, :],
                            np.asarray([y], dtype=np.intp), box.radius,
                            _PROBE_CFG, seeds=[probe_seed])[0]
        if res.success:
            status = "falsified"
            witness = box.center + res.best_delta
            break
        try:
            children = list(split_box(box))
        except ValueError:
            # box too thin to split further; cannot decide this domain
            status = "unknown"
            break
        if bug.beta > 0.0:
            children = drop_domains(children, bug.beta, rng)
        for child in children:
            queue.append((child, depth + 1))

    stats = {"domains": explored, "time": time.monotonic() - start,
             "deepest_split": deepest}
    if status == "falsified":
        assert witness is not None
        assert np.max(np.abs(witness - x0f)) <= eps + 1e-9
        assert margin(forward(model, witness).data, y) <= 0.0
        return Verdict("falsified", witness=witness, stats=stats)
    return Verdict(status, stats=stats)


def find_min_bug_factor(model: ModelParams, instances, mode: str, knob: str,
                        tol: float = 0.01,
                        budget: VerifyBudget = VerifyBudget(max_domains=1000),
                        seed: int = 0) -> float:
    """Binary search for the smallest bug factor that makes the verifier claim
    'verified' on one (mode='one') or every (mode='all') given instance.

    Verifier runs use the fixed seed and a domain-count budget so the
    predicate is deterministic; the result is the midpoint of the final
    bracket, whose width is at most tol.
    """
    if mode not in ("one", "all"):
        raise ValueError("mode must be 'one' or 'all'")
    if knob not in ("alpha", "beta"):
        raise ValueError("knob must be 'alpha' or 'beta'")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if not instances:
        raise ValueError("need at least one instance")
    # wall-clock budgets would make the bisection predicate nondeterministic
    budget = VerifyBudget(max_domains=budget.max_domains, timeout=None)

    def predicate(value: float) -> bool:
        hits = 0
        for inst in instances:
            bug = BugConfig(**{knob: value}, seed=seed)
            v = verify(model, inst.x0, inst.y, inst.eps, bug, budget)
            ok = v.status == "verified"
            if mode == "one" and ok:
                return True
            if mode == "all" and not ok:
                return False
            hits += ok
        return hits == len(instances) if mode == "all" else hits >= 1

    if not predicate(1.0):
        raise ValueError(
            f"no {knob} in (0, 1] makes the bugged verifier claim "
            f"'{mode}' of the instances verified")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
