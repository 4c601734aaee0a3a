"""Campaign runner: verifiers vs a benchmark with hidden ground truth.

Every (adapter, instance) pair gets one verdict. A "verified" claim on an
instance whose secret entry carries a planted counterexample is a soundness
finding, but only after the stored counterexample re-validates by a direct
forward pass at report time; a "falsified" claim with a witness that fails
re-validation is an unsound-falsification finding. Timeouts and errors are
never findings.

External adapters speak a one-line grammar on stdout (last non-empty line):

    verified
    falsified <v0> <v1> ... <v_{d-1}>
    unknown
    error <message>

Anything else is recorded as an error, never as verified.
"""

from __future__ import annotations

import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import margin
from .datagen import Instance
from .manifest import ManifestError, load_manifest
from .network import forward
from .pipeline import AdapterConfig
from .refverify import BugConfig, Verdict, VerifyBudget, verify
from .zoo import ModelParams


@dataclass
class Finding:
    verifier: str
    instance_id: str
    claim: str
    ground_truth: str
    detail: str = ""


@dataclass
class SoundnessReport:
    meta: dict
    adapters: dict[str, dict]
    verdicts: dict[str, dict[str, str]]  # adapter -> instance id -> status
    kinds: dict[str, str]                # instance id -> unverifiable | regular
    findings: list[Finding] = field(default_factory=list)


def validate_cex(model: ModelParams, x, inst: Instance) -> bool:
    """True iff x sits in the instance ball and has non-positive margin."""
    xf = np.asarray(x, dtype=np.float64).ravel()
    x0 = np.asarray(inst.x0, dtype=np.float64).ravel()
    if xf.shape != x0.shape:
        return False
    if np.max(np.abs(xf - x0)) > inst.eps + 1e-9:
        return False
    return margin(forward(model, xf).data, inst.y) <= 0.0


def check_soundness(verdict: Verdict, inst: Instance,
                    model: ModelParams, verifier: str) -> Optional[Finding]:
    """Findings per the rules above; requires the instance's true kind."""
    if verdict.status == "verified" and inst.kind == "unverifiable":
        if validate_cex(model, inst.x_cex, inst):
            return Finding(verifier, inst.id, claim="verified",
                           ground_truth="planted counterexample re-validated",
                           detail="verified an instance with a live counterexample")
        return None  # stored counterexample no longer bites: no accusation
    if verdict.status == "falsified":
        if verdict.witness is None or not validate_cex(model, verdict.witness, inst):
            return Finding(verifier, inst.id, claim="falsified",
                           ground_truth="submitted witness failed re-validation",
                           detail="witness outside the ball or with positive margin")
    return None


def parse_result_line(text: str, input_dim: int) -> Verdict:
    """Map an external tool's final output line onto a Verdict."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        return Verdict("error", stats={"message": "no output"})
    last = lines[-1]
    head, _, rest = last.partition(" ")
    if head == "verified" and not rest:
        return Verdict("verified")
    if head == "unknown" and not rest:
        return Verdict("unknown")
    if head == "error":
        return Verdict("error", stats={"message": rest[:200]})
    if head == "falsified":
        try:
            vals = np.asarray([float(v) for v in rest.split()])
        except ValueError:
            return Verdict("error", stats={"message": f"bad witness: {rest[:100]}"})
        if vals.size != input_dim:
            return Verdict("error", stats={
                "message": f"witness has {vals.size} values, expected {input_dim}"})
        return Verdict("falsified", witness=vals)
    return Verdict("error", stats={"message": f"unparseable output: {last[:100]}"})


def _run_reference(adapter: AdapterConfig, model: ModelParams, inst: Instance,
                   timeout: float, seed: int) -> Verdict:
    bug = BugConfig(alpha=adapter.alpha, beta=adapter.beta, seed=seed)
    budget = VerifyBudget(max_domains=adapter.max_domains, timeout=timeout)
    return verify(model, inst.x0, inst.y, inst.eps, bug, budget)


def _run_external(adapter: AdapterConfig, model_path: str, prop_path: str,
                  inst: Instance, timeout: float) -> Verdict:
    cmd = [arg.format(model=model_path, property=prop_path, timeout=timeout)
           for arg in adapter.command]
    d = int(np.asarray(inst.x0).size)
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True,
                              timeout=timeout + 10.0)
    except subprocess.TimeoutExpired:
        return Verdict("unknown", stats={"message": "timed out"})
    except FileNotFoundError as e:
        raise _AdapterUnavailable(str(e)) from e
    if proc.returncode != 0 and not proc.stdout.strip():
        return Verdict("error", stats={
            "message": f"exit {proc.returncode}: {proc.stderr.strip()[:200]}"})
    return parse_result_line(proc.stdout, d)


class _AdapterUnavailable(RuntimeError):
    pass


def run_campaign(public_path, secret_path, adapters: Sequence[AdapterConfig],
                 timeout: float = 100.0, parallelism: int = 1, seed: int = 0,
                 expect_hash: Optional[str] = None) -> SoundnessReport:
    """Execute every (adapter, instance) job and assemble the report."""
    bench = load_manifest(public_path, secret_path)
    if expect_hash is not None:
        got = bench.provenance.get("config_hash", "")
        if got != expect_hash:
            raise ManifestError(
                f"benchmark was produced by config hash {got!r}, campaign "
                f"expects {expect_hash!r} (mixed-hash inputs)")
    model = bench.model
    instances = list(bench.kept_unverifiable) + list(bench.regular)
    kinds = {i.id: i.kind for i in instances}

    import os
    base = os.path.dirname(os.path.abspath(os.fspath(public_path)))
    with open(public_path) as f:
        f.readline()
        pub = json.load(f)
    refs = {e["id"]: (os.path.join(base, e["model"]),
                      os.path.join(base, e["property"]))
            for e in pub["instances"]}

    available = {a.name: True for a in adapters}
    verdicts: dict[str, dict[str, Verdict]] = {a.name: {} for a in adapters}

    def job(adapter: AdapterConfig, inst: Instance):
        if not available[adapter.name]:
            return adapter.name, inst.id, Verdict(
                "error", stats={"message": "adapter unavailable"})
        try:
            if adapter.kind == "reference":
                v = _run_reference(adapter, model, inst, timeout, seed)
            else:
                mp, pp = refs[inst.id]
                v = _run_external(adapter, mp, pp, inst, timeout)
        except _AdapterUnavailable as e:
            available[adapter.name] = False
            v = Verdict("error", stats={"message": f"adapter unavailable: {e}"})
        except Exception as e:  # a crashing adapter must not kill the campaign
            v = Verdict("error", stats={"message": f"{type(e).__name__}: {e}"})
        return adapter.name, inst.id, v

    jobs = [(a, i) for a in adapters for i in instances]
    if parallelism > 1 and jobs:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(lambda p: job(*p), jobs))
    else:
        outcomes = [job(a, i) for a, i in jobs]
    for name, iid, v in outcomes:
        verdicts[name][iid] = v

    findings: list[Finding] = []
    by_id = {i.id: i for i in instances}
    for a in adapters:
        for iid in sorted(verdicts[a.name]):
            f = check_soundness(verdicts[a.name][iid], by_id[iid], model, a.name)
            if f is not None:
                findings.append(f)

    shape = "x".join(str(v) for v in model.arch.input_shape)
    meta = {"arch": model.arch.name, "epsilon": instances[0].eps if instances else None,
            "input_size": shape, "timeout": timeout, "seed": seed,
            "counts": {"unverifiable": len(bench.kept_unverifiable),
                       "regular": len(bench.regular)},
            "provenance_hash": bench.provenance.get("config_hash", "")}
    status_map = {a.name: {iid: v.status for iid, v in verdicts[a.name].items()}
                  for a in adapters}
    return SoundnessReport(
        meta=meta,
        adapters={a.name: {"kind": a.kind, "available": available[a.name]}
                  for a in adapters},
        verdicts=status_map, kinds=kinds, findings=findings)


def _pct(part: int, total: int) -> Optional[float]:
    return None if total == 0 else 100.0 * part / total


def report_to_dict(report: SoundnessReport) -> dict:
    """Machine-readable companion; the text tables render from this exact data."""
    tables: dict[str, dict] = {}
    for kind in ("unverifiable", "regular"):
        ids = [i for i, k in report.kinds.items() if k == kind]
        for status in ("verified", "falsified", "unknown", "error"):
            key = f"{status}_{kind}_pct"
            tables[key] = {}
            for name, vmap in report.verdicts.items():
                n = sum(vmap[i] == status for i in ids)
                tables[key][name] = _pct(n, len(ids))
    return {"meta": report.meta,
            "adapters": report.adapters,
            "tables": tables,
            "verdicts": report.verdicts,
            "findings": [vars(f) for f in report.findings]}


def _fmt_pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:g}"


def render_report(report: SoundnessReport) -> str:
    """Three tables: bug table (verified on planted), falsified on planted,
    verified on regular; one row per benchmark setting."""
    data = report_to_dict(report)
    meta = data["meta"]
    names = list(report.verdicts)
    row_id = f"{meta['arch']}  eps={meta['epsilon']}  input={meta['input_size']}"
    blocks = []
    titles = [("verified_unverifiable_pct",
               "Verified(%) on unverifiable instances (any nonzero cell is a bug)"),
              ("falsified_unverifiable_pct",
               "Falsified(%) on unverifiable instances"),
              ("verified_regular_pct",
               "Verified(%) on regular instances")]
    for key, title in titles:
        width = max([len(row_id)] + [len(n) for n in names]) + 2
        head = "setting".ljust(width) + "".join(n.rjust(width) for n in names)
        row = row_id.ljust(width) + "".join(
            _fmt_pct(data["tables"][key][n]).rjust(width) for n in names)
        blocks.append(f"{title}\n{'-' * len(title)}\n{head}\n{row}\n")
    lines = [f"campaign report  (timeout {meta['timeout']}s, "
             f"{meta['counts']['unverifiable']} unverifiable / "
             f"{meta['counts']['regular']} regular)", ""]
    lines += blocks
    if report.findings:
        lines.append(f"findings ({len(report.findings)}):")
        for f in report.findings:
            lines.append(f"  [{f.verifier}] {f.instance_id}: claimed {f.claim}; "
                         f"{f.ground_truth}")
    else:
        lines.append("findings: none")
    return "\n".join(lines) + "\n"
