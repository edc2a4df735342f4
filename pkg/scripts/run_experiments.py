#!/usr/bin/env python3
"""Run every experiment family through the CLI and print the fitted slopes.

    python scripts/run_experiments.py --out results --seed 0
    python scripts/run_experiments.py --out results --seed 0 --quick
"""
import argparse
import json
import sys
from pathlib import Path

from sliced_ot.cli import main as cli_main

QUICK = {
    "mc-complexity": ["--d", "5,10", "--runs", "10", "--n", "500"],
    "sample-complexity": ["--d", "5", "--runs", "10", "--n", "250,1000", "--m", "200"],
    "rates": ["--runs", "10", "--n", "250,1000,4000"],
    "msw-bench": ["--d", "2,10", "--runs", "2", "--T", "200", "--budget", "200"],
    "robust": ["--d", "10,20,50", "--runs", "1"],
}


def summarize(manifest: Path) -> dict:
    doc = json.loads(manifest.read_text())
    out = {}
    for name in doc["files"]:
        rows = (manifest.parent / name).read_text().splitlines()[1:]
        out[name] = [float(r.split(",")[1]) for r in rows]
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="small grids for a smoke run")
    ap.add_argument("--only", default=None, help="comma-separated subset of experiments")
    args = ap.parse_args(argv)
    names = args.only.split(",") if args.only else list(QUICK)
    for name in names:
        out = Path(args.out) / name
        cmd = ["experiment", name, "--seed", str(args.seed), "--workers", str(args.workers), "--out", str(out)]
        if name == "robust":
            # eps = 0.1 sits outside the filter's guarantee range
            cmd.append("--force")
        if args.quick:
            cmd += QUICK[name]
        print(f"== {name}", file=sys.stderr, flush=True)
        code = cli_main(cmd)
        if code:
            return code
        for fname, means in summarize(out / f"{name}_manifest.json").items():
            print(f"{fname}: " + " ".join(f"{v:.3e}" for v in means), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
