#!/usr/bin/env python3
"""Time NA, DiNA and dense global attention over a few resolutions via the CLI bench command."""
import argparse

from dinat_ir.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", nargs="+", default=["32x32", "64x64"])
    ap.add_argument("--k", type=int, default=7)
    ap.add_argument("--dilation", type=int, default=4)
    ap.add_argument("--iters", type=int, default=20)
    a = ap.parse_args()
    for size in a.sizes:
        for op in ("na", "dina", "dense"):
            cli(["--threads", "1", "bench", "--op", op, "--size", size, "--k", str(a.k),
                 "--dilation", str(a.dilation), "--iters", str(a.iters)])


if __name__ == "__main__":
    main()
