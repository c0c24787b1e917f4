#!/usr/bin/env python3
"""Run the whole pipeline on a fresh synthetic corpus.

Example:

    python scripts/run_full_pipeline.py --out runs/demo --seed 0
    python scripts/run_full_pipeline.py --out runs/quick --quick

--quick shrinks the corpus (5 dates at 180x90) for a fast smoke run;
the default reproduces the full 20-date 360x180 evaluation corpus.
"""

import argparse
import sys
import time

from chpipe.cli import main as chpipe_main


QUICK_CONFIG = """\
[synth]
n_dates = 5
n_cols = 180
n_rows = 90
n_models = 6

[levelset]
n_iters = 150
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--config", default=None, help="INI config (overrides --quick)")
    parser.add_argument("--quick", action="store_true", help="small fast corpus")
    args = parser.parse_args()

    config = args.config
    if config is None and args.quick:
        from pathlib import Path

        config = str(Path(args.out) / "quick_config.ini")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        Path(config).write_text(QUICK_CONFIG)

    base = ["--out", args.out, "--seed", str(args.seed)]
    if config:
        base += ["--config", config]
    stages = [
        (["synth"], []),
        (["segment"], ["--jobs", str(args.jobs)]),
        (["match"], ["--jobs", str(args.jobs)]),
        (["train-classifier"], []),
        (["classify"], []),
        (["eval"], []),
    ]
    for cmd, extra in stages:
        t0 = time.monotonic()
        code = chpipe_main(cmd + base + extra)
        print(f"-- {cmd[0]}: {time.monotonic() - t0:.1f}s")
        if code != 0:
            return code
    print(f"done; see {args.out}/report/report.md")
    return 0


if __name__ == "__main__":
    sys.exit(main())
