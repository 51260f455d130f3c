"""Command-line entry point.

Subcommands mirror the pipeline stages plus the curvature scaling benchmark:

    seguq generate|train|fit-laplace|evaluate|report|all \
        [--config cfg.json] [--seed N] [--out DIR]
    seguq bench-hessian [--out DIR] [--sizes 16,32,64]
"""

from __future__ import annotations

import argparse
import os
import sys

from . import bench, persist, pipeline
from .config import load_config


def _add_common(parser):
    parser.add_argument("--config", default=None,
                        help="JSON config; missing keys fall back to defaults")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default="out",
                        help="output directory (default: ./out)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seguq",
        description="segmentation uncertainty benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    stage_cmds = {
        "generate": "generate the synthetic dataset",
        "train": "train the configured model combinations",
        "fit-laplace": "fit weight posteriors for the trained models",
        "evaluate": "score every measure on the ID and OOD test sets",
        "report": "summarize results into AUROC and ratio tables",
        "all": "run every stage in order",
    }
    for name, help_text in stage_cmds.items():
        _add_common(sub.add_parser(name, help=help_text))
    bench_p = sub.add_parser("bench-hessian",
                             help="curvature scaling benchmark")
    bench_p.add_argument("--out", default=None,
                         help="write bench.json into this directory")
    bench_p.add_argument("--sizes", default="16,32,64",
                         help="comma-separated image side lengths")
    bench_p.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.command == "bench-hessian":
        sizes = tuple(int(s) for s in args.sizes.split(","))
        result = bench.run_bench(sizes=sizes, seed=args.seed)
        print(bench.format_bench(result))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            persist.write_json(os.path.join(args.out, "bench.json"), result)
        return 0

    cfg = load_config(args.config, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    if args.command == "all":
        pipeline.run_pipeline(cfg, args.out)
        print(f"pipeline complete: {args.out}")
        return 0
    stage_fns = {
        "generate": pipeline.stage_generate,
        "train": pipeline.stage_train,
        "fit-laplace": pipeline.stage_fit_laplace,
        "evaluate": pipeline.stage_evaluate,
        "report": pipeline.stage_report,
    }
    stage_fns[args.command](cfg, args.out)
    print(f"{args.command} complete: {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
