#!/usr/bin/env python3
"""Train the default toy agent, then dump its greedy rollouts and attention.

Usage: python3 scripts/train_toy.py [OUT_DIR] [--seed N]
"""

import argparse
import sys
from pathlib import Path

from lsanav.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", nargs="?", default="runs/toy")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    args = p.parse_args(argv)
    out = Path(args.out)
    common = ["--seed", str(args.seed)] if args.seed is not None else []
    if args.config:
        common += ["--config", args.config]
    ck = str(out / "train" / "checkpoint.bin")
    for cmd in (["train-toy", "--out", str(out / "train")],
                ["run-episode", "--checkpoint", ck, "--out", str(out / "rollouts")],
                ["attn-dump", "--checkpoint", ck, "--episode", "0", "--out", str(out / "attn")]):
        code = main(cmd + common + ["-v"])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
