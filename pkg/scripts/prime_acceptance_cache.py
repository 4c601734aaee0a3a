#!/usr/bin/env python3
"""Fill the acceptance-suite stage cache with two parallel workers.

Usage: python scripts/prime_acceptance_cache.py [--workers N]

Runs the full training/filter/export matrix the acceptance tests need, then
the reference-verifier verdicts and the synthetic-bug threshold searches.
Everything lands in the pipeline stage cache, so a subsequent `pytest
tests/test_acceptance.py` only re-validates the numbers. Total CPU time is
a few hours; progress is printed per stage.
"""

import argparse
import os
import sys
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from concurrent.futures import ProcessPoolExecutor, as_completed


def build_run(args):
    label, seed = args
    import acceptance_helpers as ah
    spec = next(r for r in ah.RUN_MATRIX if (r[0], r[1]) == (label, seed))
    run = ah.fast_run(*spec)
    t0 = time.time()
    run.filter()
    run.export()
    return f"{ah.run_name(label, seed)}: trained+filtered in {time.time()-t0:.0f}s"


def verdict_job(args):
    label, seed = args
    import acceptance_helpers as ah
    spec = next(r for r in ah.RUN_MATRIX if (r[0], r[1]) == (label, seed))
    run = ah.fast_run(*spec)
    t0 = time.time()
    v = ah.reference_verdicts(run)
    counts = {}
    for rec in v.values():
        counts[rec["status"]] = counts.get(rec["status"], 0) + 1
    return f"{ah.run_name(label, seed)}: reference verdicts {counts} in {time.time()-t0:.0f}s"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workers", type=int, default=2)
    args = ap.parse_args()

    import acceptance_helpers as ah
    jobs = [(label, seed) for label, seed, _, _ in ah.RUN_MATRIX]
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for fut in as_completed([pool.submit(build_run, j) for j in jobs]):
            print(fut.result(), flush=True)
    print(f"-- training matrix done in {time.time()-t0:.0f}s", flush=True)

    t0 = time.time()
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for fut in as_completed([pool.submit(verdict_job, j) for j in jobs]):
            print(fut.result(), flush=True)
    print(f"-- reference verdicts done in {time.time()-t0:.0f}s", flush=True)

    t0 = time.time()
    thr = ah.bug_thresholds(ah.criterion1_run())
    print(f"-- bug thresholds {thr} in {time.time()-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
