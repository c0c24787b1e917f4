#!/usr/bin/env python3
"""Search the level-set (alpha, sigma) on an existing run's training dates.

Expects a run directory that already holds data/ (from `chpipe synth`).
Writes tuned.json under the run directory and prints the medians, ready to
paste into the [levelset] config section.

    python scripts/tune_levelset.py --out runs/demo --max-images 4
"""

import argparse
import json
import sys

from chpipe.cli import main as chpipe_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-images", type=int, default=4)
    parser.add_argument("--max-evals", type=int, default=50)
    args = parser.parse_args()

    cmd = [
        "tune",
        "--out",
        args.out,
        "--seed",
        str(args.seed),
        "--max-images",
        str(args.max_images),
        "--max-evals",
        str(args.max_evals),
    ]
    if args.config:
        cmd += ["--config", args.config]
    code = chpipe_main(cmd)
    if code != 0:
        return code
    with open(f"{args.out}/tuned.json") as fh:
        tuned = json.load(fh)
    print("\n[levelset]")
    print(f"alpha = {tuned['alpha']}")
    print(f"sigma = {tuned['sigma']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
