"""Command-line pipeline driver.

    cexforge <stage> --config cfg.json [--seed N] [--force] [--fast]

with stage one of gen, train, filter, export, campaign, all. Exit codes:
0 success, 1 usage or configuration error, 2 stage failure, 3 campaign
finished with soundness findings (for CI gating).
"""

from __future__ import annotations

import os

# Small BLAS thread pools beat large ones at benchmark matrix sizes, and a
# fixed pool keeps reruns bit-identical; opt out by exporting the variable.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import sys

from .pipeline import STAGES, ConfigError, Run, StageError, load_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2
EXIT_FINDINGS = 3

_STAGE_DEPS = {"gen": [], "train": ["gen"], "filter": ["gen", "train"],
               "export": ["gen", "train", "filter"],
               "campaign": ["gen", "train", "filter", "export"]}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cexforge",
        description="Train benchmark networks with planted hidden "
                    "counterexamples and fuzz verifiers with them.")
    p.add_argument("stage", choices=STAGES + ("all",),
                   help="pipeline stage to run")
    p.add_argument("--config", required=True, help="path to a JSON config file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's global seed")
    p.add_argument("--force", action="store_true",
                   help="recompute even when cached artifacts are fresh")
    p.add_argument("--fast", action="store_true",
                   help="desk-scale preset: 1000 epochs, 30/30 training attack, "
                        "100/500 evaluation attack")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, fast=args.fast, seed_override=args.seed)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    run = Run(cfg)
    try:
        if args.stage != "all":
            for dep in _STAGE_DEPS[args.stage]:
                run.require_artifact(dep)
        result = run.run_stage(args.stage, force=args.force)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as e:
        print(f"error: stage '{args.stage}' failed: {type(e).__name__}: {e}",
              file=sys.stderr)
        return EXIT_STAGE

    print(f"stage '{args.stage}' complete; artifacts in {cfg.out_dir}")
    if args.stage in ("campaign", "all"):
        findings = result.get("findings", [])
        print(f"soundness findings: {len(findings)}")
        if findings:
            return EXIT_FINDINGS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
