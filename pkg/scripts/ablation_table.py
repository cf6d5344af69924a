#!/usr/bin/env python3
"""Train the six attention/CAM variants on identical synthetic data and print a comparison table.

Trend reporting only: at this scale the ordering between variants is noisy.
"""
import argparse
import json

from threadpoolctl import threadpool_limits

from dinat_ir.smoke import ablation_table, format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--size", type=int, default=32, help="image and patch size")
    ap.add_argument("--base", type=int, default=8)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json")
    a = ap.parse_args()
    with threadpool_limits(a.threads):
        rows = ablation_table(a.seed, iters=a.iters, patch=a.size, size=a.size, base=a.base)
    print(format_table(rows))
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
