"""Two-part benchmark manifest.

The public file lists instances as (id, model ref, property ref, epsilon) in
a seeded shuffled order; nothing in it distinguishes planted instances from
regular ones. The secret file maps ids to ground truth (kind, exact center,
planted perturbation and target) and is meant to stay with the benchmark
author. Loading with the secret part re-validates every planted point
against the model.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datagen import Counterexample, Instance
from .evaluation import BenchmarkSet
from .network import predict
from .sbnet import atomic_write, fmt_real, load_model, save_model
from .vnnlib import parse_vnnlib, write_vnnlib

# header tokens deliberately avoid any ground-truth vocabulary: public bytes
# must not hint at instance kinds (no "cex", no "unverifiable")
PUBLIC_HEADER = "benchmark-manifest-public 1"
SECRET_HEADER = "benchmark-manifest-secret 1"


class ManifestError(ValueError):
    pass


def _reals(arr) -> list[str]:
    return [fmt_real(v) for v in np.asarray(arr, dtype=np.float64).ravel()]


def write_manifest(bench: BenchmarkSet, public_path, secret_path,
                   shuffle_seed: int = 0) -> None:
    """Write both manifest parts plus the model and property files they reference.

    The model goes to <public dir>/model.sbnet and properties to
    <public dir>/props/<id>.vnnlib.
    """
    public_path, secret_path = os.fspath(public_path), os.fspath(secret_path)
    if os.path.abspath(public_path) == os.path.abspath(secret_path):
        raise ManifestError("public and secret manifests need distinct paths")
    base = os.path.dirname(os.path.abspath(public_path))
    props_dir = os.path.join(base, "props")
    os.makedirs(props_dir, exist_ok=True)
    model_rel = "model.sbnet"
    save_model(bench.model, os.path.join(base, model_rel))

    instances = list(bench.kept_unverifiable) + list(bench.regular)
    order = np.random.default_rng(shuffle_seed).permutation(len(instances))
    num_classes = bench.model.arch.num_classes

    entries = []
    secret_entries = {}
    for k in order:
        inst = instances[k]
        prop_rel = f"props/{inst.id}.vnnlib"
        write_vnnlib(inst, num_classes, os.path.join(base, prop_rel))
        entries.append({"id": inst.id, "model": model_rel, "property": prop_rel,
                        "epsilon": fmt_real(inst.eps)})
        sec = {"kind": inst.kind, "label": inst.y, "x0": _reals(inst.x0)}
        if inst.cex is not None:
            sec["delta"] = _reals(inst.cex.delta)
            sec["target"] = inst.cex.target
        secret_entries[inst.id] = sec

    pub = {"input_shape": list(bench.model.arch.input_shape),
           "num_classes": num_classes,
           "instances": entries,
           "provenance_hash": bench.provenance.get("config_hash", "")}
    atomic_write(public_path,
                 PUBLIC_HEADER + "\n" + json.dumps(pub, indent=1) + "\n")
    sec = {"instances": secret_entries,
           "provenance": bench.provenance,
           "drops": bench.drops}
    atomic_write(secret_path,
                 SECRET_HEADER + "\n" + json.dumps(sec, indent=1) + "\n")


def _read_versioned(path, expect_header: str) -> dict:
    with open(path) as f:
        first = f.readline().strip()
        if first != expect_header:
            raise ManifestError(
                f"{path}: expected header '{expect_header}', got '{first}'")
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}: malformed JSON body: {e}") from e


def load_manifest(public_path, secret_path=None,
                  validate: bool = True) -> BenchmarkSet:
    """Load a benchmark; without the secret part, every instance is kind-free.

    With the secret part, planted counterexamples are re-validated against the
    model (max-norm bound and target prediction) unless validate=False.
    """
    public_path = os.fspath(public_path)
    base = os.path.dirname(os.path.abspath(public_path))
    pub = _read_versioned(public_path, PUBLIC_HEADER)
    input_shape = tuple(pub["input_shape"])
    model = load_model(os.path.join(base, pub["instances"][0]["model"])) \
        if pub["instances"] else None

    secret = None
    if secret_path is not None:
        secret = _read_versioned(os.fspath(secret_path), SECRET_HEADER)
        pub_ids = {e["id"] for e in pub["instances"]}
        sec_ids = set(secret["instances"])
        if pub_ids != sec_ids:
            raise ManifestError(
                f"public/secret id mismatch: only-public={sorted(pub_ids - sec_ids)} "
                f"only-secret={sorted(sec_ids - pub_ids)}")

    unverifiable: list[Instance] = []
    regular: list[Instance] = []
    for entry in pub["instances"]:
        iid = entry["id"]
        with open(os.path.join(base, entry["property"])) as f:
            prop = parse_vnnlib(f.read())
        eps = float(entry["epsilon"])
        if secret is None:
            x0 = ((prop.lower + prop.upper) * 0.5).reshape(input_shape)
            regular.append(Instance(iid, x0, prop.label, eps, "unknown"))
            continue
        sec = secret["instances"][iid]
        x0 = np.asarray([float(v) for v in sec["x0"]]).reshape(input_shape)
        if int(sec["label"]) != prop.label:
            raise ManifestError(f"{iid}: secret label disagrees with property")
        if sec["kind"] == "unverifiable":
            delta = np.asarray([float(v) for v in sec["delta"]]).reshape(input_shape)
            inst = Instance(iid, x0, prop.label, eps, "unverifiable",
                            Counterexample(delta, int(sec["target"])))
            if validate:
                if np.max(np.abs(delta)) > eps + 1e-12:
                    raise ManifestError(
                        f"{iid}: stored perturbation leaves the eps-ball")
                if predict(model, inst.x_cex) != inst.cex.target:
                    raise ManifestError(
                        f"{iid}: stored counterexample no longer misclassifies "
                        f"to its target")
            unverifiable.append(inst)
        else:
            regular.append(Instance(iid, x0, prop.label, eps, "regular"))

    provenance = secret.get("provenance", {}) if secret else {}
    drops = secret.get("drops", []) if secret else []
    return BenchmarkSet(model=model, kept_unverifiable=unverifiable,
                        regular=regular, provenance=provenance, drops=drops)
