"""Command-line interface.

Subcommands mirror the pipeline stages: synth, segment, match,
train-classifier, classify, tune, eval.  Every command takes --out (the run
directory) and optionally --config, --seed, --dates FROM:TO, and --jobs N.

Exit codes: 0 ok, 2 configuration error (including bad flags), 3 missing or
unusable input, 4 numerical failure.  Failures print one machine-parsable
line to stderr: ``error code=<n> kind=<kind> msg="..."``.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import PipelineError
from . import pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chpipe",
        description="Coronal-hole segmentation, cluster matching, and map classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, dates=False, jobs=False):
        p.add_argument("--config", default=None, help="INI config file (defaults used if omitted)")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None, help="run seed (default: [synth] seed)")
        if dates:
            p.add_argument("--dates", default=None, help="1-based inclusive range FROM:TO")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel date workers")

    add_common(sub.add_parser("synth", help="generate the synthetic dataset"))
    add_common(sub.add_parser("segment", help="run initializers, selection, union, level set"), dates=True, jobs=True)
    add_common(sub.add_parser("match", help="cluster and match model maps against the reference"), dates=True, jobs=True)
    add_common(sub.add_parser("train-classifier", help="train the good/bad map classifier"))
    add_common(sub.add_parser("classify", help="apply a trained classifier to match results"))
    tune_p = sub.add_parser("tune", help="pattern-search the level-set alpha/sigma")
    add_common(tune_p)
    tune_p.add_argument("--max-images", type=int, default=6, help="training images to use")
    tune_p.add_argument("--max-evals", type=int, default=50, help="objective budget per image")
    add_common(sub.add_parser("eval", help="write the consolidated report"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.synth.seed
        if args.command == "synth":
            out = pipeline.stage_synth(cfg, args.out, seed=seed)
            print(f"generated {len(out['dates'])} dates under {out['data_dir']}")
        elif args.command == "segment":
            out = pipeline.stage_segment(cfg, args.out, args.dates, args.jobs, seed)
            print(f"segmented {len(out['dates'])} dates; metrics at {out['metrics']}")
        elif args.command == "match":
            out = pipeline.stage_match(cfg, args.out, args.dates, args.jobs, seed)
            print(f"matched {len(out['dates'])} dates; results under {out['match_dir']}")
        elif args.command == "train-classifier":
            out = pipeline.stage_train_classifier(cfg, args.out, seed)
            print(
                f"classifier trained: held-out accuracy {out['accuracy']:.3f} "
                f"(n={out['n_test']}), OOB {out['oob_error']:.3f}"
            )
        elif args.command == "classify":
            out = pipeline.stage_classify(cfg, args.out)
            print(f"predictions written to {out['predictions']}")
        elif args.command == "tune":
            out = pipeline.stage_tune(
                cfg, args.out, seed, max_images=args.max_images, max_evals=args.max_evals
            )
            flag = " (budget exhausted on some images)" if out["warning"] else ""
            print(f"tuned alpha={out['alpha']:.3f} sigma={out['sigma']:.3f}{flag}")
        elif args.command == "eval":
            out = pipeline.stage_eval(cfg, args.out)
            print(f"report written to {out['report']}")
        return 0
    except PipelineError as exc:
        print(
            f'error code={exc.exit_code} kind={exc.code} msg="{exc}"',
            file=sys.stderr,
        )
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
