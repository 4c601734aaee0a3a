"""The sbnet model file: a versioned UTF-8 text format for benchmark networks.

Grammar (one directive per line, '#' starts a comment):

    sbnet 1
    name <arch name>
    input <d0> [d1 d2]
    classes <K>
    seed <init seed>
    layer dense <width>
    layer conv2d <filters> <kh> <kw> <stride> <padding>
    layer avgpool2d <kh> <kw> <stride>
    layer act <relu|tanh|sigmoid>
    layer flatten
    tensor <layer_index> <weight|bias> <count>
    <count decimals, whitespace separated, row-major>
    end

Weights are printed with 17 significant digits, so load(save(m)) reproduces
bit-identical float64 values. Files are written atomically.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .zoo import (ACTIVATIONS, Activation, ArchSpec, AvgPool2d, Conv2d, Dense,
                  Flatten, ModelParams, infer_shapes)

FORMAT_VERSION = 1


class SbnetError(ValueError):
    """Base error for sbnet files."""


class SbnetVersionError(SbnetError):
    pass


class SbnetFormatError(SbnetError):
    pass


class SbnetShapeError(SbnetError):
    pass


def fmt_real(v: float) -> str:
    return format(float(v), ".17g")


def _layer_line(layer) -> str:
    if isinstance(layer, Dense):
        return f"layer dense {layer.width}"
    if isinstance(layer, Conv2d):
        return (f"layer conv2d {layer.filters} {layer.kh} {layer.kw} "
                f"{layer.stride} {layer.padding}")
    if isinstance(layer, AvgPool2d):
        return f"layer avgpool2d {layer.kh} {layer.kw} {layer.stride}"
    if isinstance(layer, Activation):
        return f"layer act {layer.kind}"
    if isinstance(layer, Flatten):
        return "layer flatten"
    raise SbnetFormatError(f"unserializable layer {layer!r}")


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(m: ModelParams, path) -> None:
    lines = [f"sbnet {FORMAT_VERSION}",
             f"name {m.arch.name}",
             "input " + " ".join(str(d) for d in m.arch.input_shape),
             f"classes {m.arch.num_classes}",
             f"seed {m.init_seed}"]
    for layer in m.arch.layers:
        lines.append(_layer_line(layer))
    for i, tensors in enumerate(m.layers):
        for key in ("weight", "bias"):
            if key in tensors:
                arr = tensors[key].data
                lines.append(f"tensor {i} {key} {arr.size}")
                flat = arr.ravel()
                for start in range(0, flat.size, 8):
                    lines.append(" ".join(fmt_real(v)
                                          for v in flat[start:start + 8]))
    lines.append("end")
    atomic_write(path, "\n".join(lines) + "\n")


def _parse_layer(parts: list[str], where: str):
    kind = parts[0]
    try:
        if kind == "dense":
            return Dense(int(parts[1]))
        if kind == "conv2d":
            return Conv2d(*map(int, parts[1:6]))
        if kind == "avgpool2d":
            return AvgPool2d(*map(int, parts[1:4]))
        if kind == "act":
            if parts[1] not in ACTIVATIONS:
                raise SbnetFormatError(f"{where}: unknown activation '{parts[1]}'")
            return Activation(parts[1])
        if kind == "flatten":
            return Flatten()
    except (IndexError, ValueError) as e:
        if isinstance(e, SbnetError):
            raise
        raise SbnetFormatError(f"{where}: malformed layer directive") from e
    raise SbnetFormatError(f"{where}: unknown layer kind '{kind}'")


def load_model(path) -> ModelParams:
    with open(path) as f:
        raw = f.read()
    lines = [ln.split("#", 1)[0].strip() for ln in raw.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise SbnetFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "sbnet":
        raise SbnetFormatError(f"{path}: missing 'sbnet <version>' header")
    if head[1] != str(FORMAT_VERSION):
        raise SbnetVersionError(
            f"{path}: format version {head[1]} unsupported (expected {FORMAT_VERSION})")

    name, input_shape, classes, seed = None, None, None, 0
    layer_specs = []
    tensors_raw: dict[tuple[int, str], np.ndarray] = {}
    i = 1
    saw_end = False
    while i < len(lines):
        parts = lines[i].split()
        where = f"{path}:{i + 1}"
        key = parts[0]
        if key == "name":
            name = " ".join(parts[1:]) or "model"
        elif key == "input":
            input_shape = tuple(int(p) for p in parts[1:])
            if not input_shape:
                raise SbnetFormatError(f"{where}: empty input shape")
        elif key == "classes":
            classes = int(parts[1])
        elif key == "seed":
            seed = int(parts[1])
        elif key == "layer":
            layer_specs.append(_parse_layer(parts[1:], where))
        elif key == "tensor":
            try:
                idx, tkey, count = int(parts[1]), parts[2], int(parts[3])
            except (IndexError, ValueError) as e:
                raise SbnetFormatError(f"{where}: malformed tensor directive") from e
            if tkey not in ("weight", "bias"):
                raise SbnetFormatError(f"{where}: unknown tensor kind '{tkey}'")
            vals: list[float] = []
            while len(vals) < count:
                i += 1
                if i >= len(lines):
                    raise SbnetFormatError(
                        f"{path}: truncated file inside tensor {idx} {tkey}")
                try:
                    vals.extend(float(v) for v in lines[i].split())
                except ValueError as e:
                    raise SbnetFormatError(
                        f"{path}:{i + 1}: non-numeric weight data") from e
            if len(vals) != count:
                raise SbnetFormatError(
                    f"{where}: tensor {idx} {tkey} has {len(vals)} values, "
                    f"declared {count}")
            tensors_raw[(idx, tkey)] = np.asarray(vals)
        elif key == "end":
            saw_end = True
            break
        else:
            raise SbnetFormatError(f"{where}: unknown directive '{key}'")
        i += 1
    if not saw_end:
        raise SbnetFormatError(f"{path}: truncated file (missing 'end')")
    if name is None or input_shape is None or classes is None:
        raise SbnetFormatError(f"{path}: missing name/input/classes header")

    try:
        arch = ArchSpec(name, input_shape, tuple(layer_specs), classes)
    except ValueError as e:
        raise SbnetShapeError(f"{path}: layer stack does not compose: {e}") from e

    from .zoo import init_params
    model = init_params(arch, seed)
    for (idx, tkey), vals in tensors_raw.items():
        if idx >= len(model.layers) or tkey not in model.layers[idx]:
            raise SbnetShapeError(
                f"{path}: tensor for layer {idx} '{tkey}' has no slot in the arch")
        slot = model.layers[idx][tkey]
        if vals.size != slot.size:
            raise SbnetShapeError(
                f"{path}: layer {idx} {tkey} has {vals.size} values, arch "
                f"implies {slot.size}")
        slot.data = vals.reshape(slot.data.shape)
    expected = {(i, k) for i, d in enumerate(model.layers) for k in d}
    if expected - set(tensors_raw):
        missing = sorted(expected - set(tensors_raw))
        raise SbnetShapeError(f"{path}: missing tensors for {missing}")
    return model
