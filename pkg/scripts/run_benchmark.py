#!/usr/bin/env python3
"""Run the synthetic adaptation benchmark and record the results.

Writes benchmarks/results.json (the recorded margins referenced by the
acceptance suite) and prints a summary table.

Usage:
  python3 scripts/run_benchmark.py            # full run (~3 min)
  python3 scripts/run_benchmark.py --quick    # 600-iteration sanity pass
"""
import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from protogmm.benchmark import run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="600 iterations instead of 3000")
    parser.add_argument(
        "--out",
        default=os.path.join(os.path.dirname(__file__), "..", "benchmarks", "results.json"),
    )
    args = parser.parse_args()

    results = run_benchmark(n_iter=600 if args.quick else None)
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
        fh.write("\n")

    print(f"{'variant':16s} {'median':>8s}  per-seed")
    for variant, accs in results["accuracies"].items():
        per_seed = " ".join(f"{a:.4f}" for a in accs)
        print(f"{variant:16s} {results['medians'][variant]:8.4f}  {per_seed}")
    print(f"ordering full > self_training > source_only: {results['ordering_holds']}")
    print(f"runtime: {results['runtime_seconds']:.0f}s; results written to {args.out}")
    return 0 if results["ordering_holds"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
