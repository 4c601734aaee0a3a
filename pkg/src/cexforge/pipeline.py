"""Staged pipeline with on-disk caching.

Stages: gen -> train -> filter -> export -> campaign. Every stage writes its
artifacts plus a stamp file carrying a hash of the configuration that
produced it (including upstream hashes), so re-running with an unchanged
config reuses the cached artifact and a change anywhere upstream invalidates
everything below it. Training is the slow stage; report-level tweaks must
never retrain.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .datagen import Counterexample, DataGenConfig, Dataset, Instance, gen_dataset
from .evaluation import BenchmarkSet, EvalSuiteConfig, filter_benchmark
from .manifest import load_manifest, write_manifest
from .sbnet import atomic_write, fmt_real, load_model, save_model
from .training import TrainConfig, TrainLog, train
from .zoo import ZOO_NAMES, build_arch


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


class StageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    name: str
    avgpool_stride: int = 1


@dataclass(frozen=True)
class AdapterConfig:
    name: str
    kind: str = "reference"  # reference | external
    alpha: float = 0.0       # reference adapters: synthetic bug knobs
    beta: float = 0.0
    max_domains: Optional[int] = None
    command: tuple[str, ...] = ()  # external adapters: argv template


@dataclass(frozen=True)
class CampaignConfig:
    adapters: tuple[AdapterConfig, ...] = (AdapterConfig(name="reference"),)
    timeout: float = 100.0
    parallelism: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DataGenConfig
    arch: ArchConfig
    train: TrainConfig
    eval: EvalSuiteConfig = EvalSuiteConfig()
    campaign: CampaignConfig = CampaignConfig()
    out_dir: str = "runs/default"
    seed: int = 0

    def arch_spec(self):
        return build_arch(self.arch.name, self.dataset.input_shape,
                          avgpool_stride=self.arch.avgpool_stride)


STAGES = ("gen", "train", "filter", "export", "campaign")

FAST_OVERRIDES = {"train": {"epochs": 1000, "attack_steps": 30,
                            "attack_restarts": 30},
                  "eval": {"restarts": 100, "steps": 500}}


def _expect_keys(section: dict, allowed: set[str], where: str,
                 problems: list[str]) -> None:
    for k in section:
        if k not in allowed:
            problems.append(f"{where}: unknown key '{k}'")


def config_from_dict(raw: dict, fast: bool = False,
                     seed_override: Optional[int] = None) -> PipelineConfig:
    """Build a validated PipelineConfig from parsed JSON; unknown keys are
    rejected and all problems are reported together."""
    problems: list[str] = []
    _expect_keys(raw, {"seed", "dataset", "arch", "train", "eval", "campaign",
                       "out_dir"}, "config", problems)
    seed = seed_override if seed_override is not None else int(raw.get("seed", 0))

    ds_raw = dict(raw.get("dataset", {}))
    _expect_keys(ds_raw, {"input_shape", "eps", "n", "r", "num_classes",
                          "seed", "max_retries"}, "dataset", problems)
    ar_raw = dict(raw.get("arch", {}))
    _expect_keys(ar_raw, {"name", "avgpool_stride"}, "arch", problems)
    tr_raw = dict(raw.get("train", {}))
    _expect_keys(tr_raw, {"epochs", "peak_lr", "margin_cap", "window",
                          "attack_steps", "attack_restarts",
                          "use_margin_objective", "seed"}, "train", problems)
    ev_raw = dict(raw.get("eval", {}))
    _expect_keys(ev_raw, {"restarts", "steps", "seed"}, "eval", problems)
    ca_raw = dict(raw.get("campaign", {}))
    _expect_keys(ca_raw, {"adapters", "timeout", "parallelism"}, "campaign",
                 problems)

    if fast:
        tr_raw = {**tr_raw, **FAST_OVERRIDES["train"]}
        ev_raw = {**ev_raw, **FAST_OVERRIDES["eval"]}
    if "input_shape" not in ds_raw:
        problems.append("dataset: missing input_shape")
    if "eps" not in ds_raw:
        problems.append("dataset: missing eps")
    if ar_raw.get("name") not in ZOO_NAMES:
        problems.append(f"arch: name must be one of {', '.join(ZOO_NAMES)}")
    adapters = []
    for i, a in enumerate(ca_raw.get("adapters", [{"name": "reference"}])):
        a = dict(a)
        _expect_keys(a, {"name", "kind", "alpha", "beta", "max_domains",
                         "command"}, f"campaign.adapters[{i}]", problems)
        if a.get("kind", "reference") not in ("reference", "external"):
            problems.append(f"campaign.adapters[{i}]: unknown kind '{a.get('kind')}'")
        a["command"] = tuple(a.get("command", ()))
        adapters.append(a)
    if problems:
        raise ConfigError(problems)

    ds_raw["input_shape"] = tuple(ds_raw["input_shape"])
    ds_raw.setdefault("seed", seed)
    tr_raw.setdefault("seed", seed)
    ev_raw.setdefault("seed", seed)
    try:
        cfg = PipelineConfig(
            dataset=DataGenConfig(**ds_raw),
            arch=ArchConfig(**ar_raw),
            train=TrainConfig(**tr_raw),
            eval=EvalSuiteConfig(**ev_raw),
            campaign=CampaignConfig(
                adapters=tuple(AdapterConfig(**a) for a in adapters),
                timeout=float(ca_raw.get("timeout", 100.0)),
                parallelism=int(ca_raw.get("parallelism", 1))),
            out_dir=str(raw.get("out_dir", "runs/default")),
            seed=seed)
    except (TypeError, ValueError) as e:
        raise ConfigError([str(e)]) from e
    cfg.arch_spec()  # composition check
    return cfg


def load_config(path, fast: bool = False,
                seed_override: Optional[int] = None) -> PipelineConfig:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: not valid JSON: {e}"]) from e
    return config_from_dict(raw, fast=fast, seed_override=seed_override)


def _canon(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _canon(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def stable_hash(*objs) -> str:
    blob = json.dumps([_canon(o) for o in objs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# bumped when a stage's behavior changes, so stale caches cannot be reused
STAGE_VERSIONS = {"gen": 1, "train": 4, "filter": 2, "export": 1, "campaign": 1}


def stage_hashes(cfg: PipelineConfig) -> dict[str, str]:
    v = STAGE_VERSIONS
    h = {}
    h["gen"] = stable_hash("gen", v["gen"], cfg.dataset)
    h["train"] = stable_hash("train", v["train"], h["gen"], cfg.arch, cfg.train)
    h["filter"] = stable_hash("filter", v["filter"], h["train"], cfg.eval)
    h["export"] = stable_hash("export", v["export"], h["filter"])
    h["campaign"] = stable_hash("campaign", v["campaign"], h["export"],
                                cfg.campaign)
    return h


# ---------------------------------------------------------------- artifacts

def dataset_to_dict(ds: Dataset) -> dict:
    out = {"config": _canon(ds.config), "instances": []}
    for inst in ds.instances:
        rec = {"id": inst.id, "y": inst.y, "eps": fmt_real(inst.eps),
               "kind": inst.kind,
               "x0": [fmt_real(v) for v in inst.x0.ravel()]}
        if inst.cex is not None:
            rec["delta"] = [fmt_real(v) for v in inst.cex.delta.ravel()]
            rec["target"] = inst.cex.target
        out["instances"].append(rec)
    return out


def dataset_from_dict(d: dict) -> Dataset:
    c = dict(d["config"])
    c["input_shape"] = tuple(c["input_shape"])
    cfg = DataGenConfig(**c)
    shape = cfg.input_shape
    instances = []
    for rec in d["instances"]:
        cex = None
        if "delta" in rec:
            cex = Counterexample(
                np.asarray([float(v) for v in rec["delta"]]).reshape(shape),
                int(rec["target"]))
        instances.append(Instance(
            rec["id"], np.asarray([float(v) for v in rec["x0"]]).reshape(shape),
            int(rec["y"]), float(rec["eps"]), rec["kind"], cex))
    return Dataset(config=cfg, instances=instances)


class Run:
    """Artifact paths and stage execution for one pipeline config."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.dir = cfg.out_dir
        self.hashes = stage_hashes(cfg)

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def _stamp_path(self, stage: str) -> str:
        return self.path(f"{stage}.stamp.json")

    def _fresh(self, stage: str, artifacts: list[str]) -> bool:
        sp = self._stamp_path(stage)
        if not os.path.exists(sp):
            return False
        try:
            with open(sp) as f:
                stamp = json.load(f)
        except json.JSONDecodeError:
            return False
        if stamp.get("hash") != self.hashes[stage]:
            return False
        return all(os.path.exists(self.path(a)) for a in artifacts)

    def _write_stamp(self, stage: str, elapsed: float) -> None:
        atomic_write(self._stamp_path(stage), json.dumps({
            "stage": stage, "hash": self.hashes[stage],
            "completed_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "elapsed_s": round(elapsed, 3),
            "config": _canon(self.cfg)}, indent=1) + "\n")

    # ------------------------------------------------------------- stages

    def gen(self, force: bool = False) -> Dataset:
        if not force and self._fresh("gen", ["dataset.json"]):
            with open(self.path("dataset.json")) as f:
                return dataset_from_dict(json.load(f))
        os.makedirs(self.dir, exist_ok=True)
        t0 = time.perf_counter()
        ds = gen_dataset(self.cfg.dataset)
        atomic_write(self.path("dataset.json"),
                     json.dumps(dataset_to_dict(ds)) + "\n")
        self._write_stamp("gen", time.perf_counter() - t0)
        return ds

    def train(self, force: bool = False):
        arts = ["model.sbnet", "trainlog.jsonl"]
        if not force and self._fresh("train", arts):
            return load_model(self.path("model.sbnet")), \
                TrainLog.from_jsonl(self.path("trainlog.jsonl"))
        ds = self.gen()
        t0 = time.perf_counter()
        model, log = train(ds, self.cfg.arch_spec(), self.cfg.train)
        save_model(model, self.path("model.sbnet"))
        log.to_jsonl(self.path("trainlog.jsonl"))
        self._write_stamp("train", time.perf_counter() - t0)
        return model, log

    def filter(self, force: bool = False) -> BenchmarkSet:
        if not force and self._fresh("filter", ["benchset.json"]):
            return self._load_benchset()
        ds = self.gen()
        model, _ = self.train()
        t0 = time.perf_counter()
        prov = {"config_hash": self.hashes["filter"],
                "train_hash": self.hashes["train"],
                "seeds": {"dataset": self.cfg.dataset.seed,
                          "train": self.cfg.train.seed,
                          "eval": self.cfg.eval.seed}}
        bench = filter_benchmark(model, ds, self.cfg.eval, provenance=prov)
        atomic_write(self.path("benchset.json"), json.dumps({
            "kept_unverifiable": [i.id for i in bench.kept_unverifiable],
            "regular": [i.id for i in bench.regular],
            "drops": bench.drops,
            "provenance": bench.provenance}, indent=1) + "\n")
        self._write_stamp("filter", time.perf_counter() - t0)
        return bench

    def _load_benchset(self) -> BenchmarkSet:
        ds = self.gen()
        model, _ = self.train()
        with open(self.path("benchset.json")) as f:
            data = json.load(f)
        by_id = {i.id: i for i in ds.instances}
        return BenchmarkSet(
            model=model,
            kept_unverifiable=[by_id[i] for i in data["kept_unverifiable"]],
            regular=[by_id[i] for i in data["regular"]],
            provenance=data["provenance"], drops=data["drops"])

    def export(self, force: bool = False) -> tuple[str, str]:
        pub = self.path("export/public.manifest")
        sec = self.path("export/secret.manifest")
        if not force and self._fresh("export", ["export/public.manifest",
                                                "export/secret.manifest"]):
            return pub, sec
        bench = self.filter()
        t0 = time.perf_counter()
        os.makedirs(self.path("export"), exist_ok=True)
        write_manifest(bench, pub, sec, shuffle_seed=self.cfg.seed)
        self._write_stamp("export", time.perf_counter() - t0)
        return pub, sec

    def campaign(self, force: bool = False):
        from .harness import run_campaign, report_to_dict, render_report
        arts = ["report.json", "report.txt"]
        if not force and self._fresh("campaign", arts):
            with open(self.path("report.json")) as f:
                return json.load(f)
        pub, sec = self.export()
        t0 = time.perf_counter()
        report = run_campaign(pub, sec, self.cfg.campaign.adapters,
                              timeout=self.cfg.campaign.timeout,
                              parallelism=self.cfg.campaign.parallelism,
                              seed=self.cfg.seed,
                              expect_hash=self.hashes["filter"])
        data = report_to_dict(report)
        atomic_write(self.path("report.json"),
                     json.dumps(data, indent=1, sort_keys=True) + "\n")
        atomic_write(self.path("report.txt"), render_report(report))
        self._write_stamp("campaign", time.perf_counter() - t0)
        return data

    def run_stage(self, stage: str, force: bool = False):
        if stage == "all":
            for s in STAGES:
                result = getattr(self, s)(force=force)
            return result
        if stage not in STAGES:
            raise ValueError(f"unknown stage '{stage}'")
        return getattr(self, stage)(force=force)

    def require_artifact(self, stage: str) -> None:
        """Raise unless `stage` has a fresh artifact (used for stage gating)."""
        artifacts = {"gen": ["dataset.json"],
                     "train": ["model.sbnet", "trainlog.jsonl"],
                     "filter": ["benchset.json"],
                     "export": ["export/public.manifest",
                                "export/secret.manifest"],
                     "campaign": ["report.json"]}[stage]
        if not self._fresh(stage, artifacts):
            raise StageError(
                f"stage '{stage}' has no up-to-date artifact in {self.dir}; "
                f"run stage '{stage}' first")
