#!/usr/bin/env python3
"""Run the mask-shape and iteration-count ablations into one directory.

With the default schedule this trains 13 models (about 90 s each on one
core). Pass --steps to shorten the schedule.

Usage: python3 scripts/run_ablations.py [OUT_DIR] [--steps N] [--seed N]
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from lsanav.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", nargs="?", default="runs/ablations")
    p.add_argument("--steps", type=int, help="training steps per model")
    p.add_argument("--seed", type=int)
    args = p.parse_args(argv)
    common = ["--out", args.out, "-v"]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    with tempfile.TemporaryDirectory() as tmp:
        if args.steps is not None:
            cfg = Path(tmp) / "config.json"
            cfg.write_text(json.dumps({"train": {"iterations": args.steps}}))
            common += ["--config", str(cfg)]
        for cmd in ("ablate-mask", "ablate-iters"):
            code = main([cmd] + common)
            if code:
                return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
