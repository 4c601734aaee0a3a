"""VNN-LIB robustness property files.

Encodes the input box x0 +/- eps and, as the violation condition, the
disjunction over wrong classes i of (Y_label <= Y_i). A verifier proving the
formula unsatisfiable has verified robustness; a satisfying assignment is a
counterexample. Bounds are printed with 17 significant digits so they parse
back to bit-identical doubles.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .datagen import Instance
from .sbnet import atomic_write, fmt_real


class VnnlibError(ValueError):
    pass


def emit_vnnlib(inst: Instance, num_classes: int) -> str:
    x0 = np.asarray(inst.x0, dtype=np.float64).ravel()
    d = x0.size
    y = inst.y
    if not 0 <= y < num_classes:
        raise VnnlibError(f"label {y} out of range for {num_classes} classes")
    lines = ["; robustness property (box input, misclassification as violation)",
             f"; id {inst.id}"]
    for j in range(d):
        lines.append(f"(declare-const X_{j} Real)")
    for k in range(num_classes):
        lines.append(f"(declare-const Y_{k} Real)")
    lines.append("")
    for j in range(d):
        lines.append(f"(assert (>= X_{j} {fmt_real(x0[j] - inst.eps)}))")
        lines.append(f"(assert (<= X_{j} {fmt_real(x0[j] + inst.eps)}))")
    lines.append("")
    wrong = [k for k in range(num_classes) if k != y]
    if len(wrong) == 1:
        lines.append(f"(assert (<= Y_{y} Y_{wrong[0]}))")
    else:
        ors = " ".join(f"(and (<= Y_{y} Y_{k}))" for k in wrong)
        lines.append(f"(assert (or {ors}))")
    return "\n".join(lines) + "\n"


def write_vnnlib(inst: Instance, num_classes: int, path) -> None:
    atomic_write(path, emit_vnnlib(inst, num_classes))


@dataclass
class ParsedProperty:
    lower: np.ndarray
    upper: np.ndarray
    label: int
    wrong: list[int]
    num_classes: int


_DECL = re.compile(r"\(declare-const ([XY])_(\d+) Real\)")
_BOUND = re.compile(r"\(assert \((>=|<=) X_(\d+) ([^)\s]+)\)\)")
_CMP = re.compile(r"\(<= Y_(\d+) Y_(\d+)\)")


def parse_vnnlib(text: str) -> ParsedProperty:
    """Read back the subset of VNN-LIB this module emits."""
    n_x, n_y = 0, 0
    for m in _DECL.finditer(text):
        if m.group(1) == "X":
            n_x = max(n_x, int(m.group(2)) + 1)
        else:
            n_y = max(n_y, int(m.group(2)) + 1)
    if n_x == 0 or n_y < 2:
        raise VnnlibError("property declares no input box or fewer than 2 outputs")
    lower = np.full(n_x, np.nan)
    upper = np.full(n_x, np.nan)
    for m in _BOUND.finditer(text):
        op, j, val = m.group(1), int(m.group(2)), float(m.group(3))
        if op == ">=":
            lower[j] = val
        else:
            upper[j] = val
    if np.isnan(lower).any() or np.isnan(upper).any():
        raise VnnlibError("incomplete input box bounds")
    pairs = [(int(a), int(b)) for a, b in _CMP.findall(text)]
    if not pairs:
        raise VnnlibError("no output assertion found")
    labels = {a for a, _ in pairs}
    if len(labels) != 1:
        raise VnnlibError(f"ambiguous true label in output assertion: {labels}")
    label = labels.pop()
    wrong = sorted(b for _, b in pairs)
    return ParsedProperty(lower=lower, upper=upper, label=label, wrong=wrong,
                          num_classes=n_y)
