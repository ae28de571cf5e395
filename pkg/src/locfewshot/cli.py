"""Command-line entry point: ``locfewshot <subcommand> [flags]``.

Training and evaluation subcommands read an optional ``--config`` file (see
:mod:`locfewshot.pipeline.config`); flags given on the command line override
the file. Results are printed to stdout as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline.config import MODES, RunConfig, load_config

# flag -> RunConfig field
_OVERRIDES = {
    "mode": "localization_mode",
    "episodes": "eval_episodes",
    "seed": "seed",
    "ways": "ways",
    "shots": "shots",
    "queries": "queries_per_episode",
    "manifest": "manifest",
    "split": "eval_split",
    "epochs": "epochs",
    "episodes_per_epoch": "episodes_per_epoch",
    "rpn_checkpoint": "rpn_checkpoint",
    "cls_checkpoint": "cls_checkpoint",
    "out": "out_checkpoint",
    "metrics": "metrics_path",
}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--episodes", type=int, help="evaluation episodes")
    p.add_argument("--seed", type=int)
    p.add_argument("--ways", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--queries", type=int, help="queries per evaluation episode")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes-per-epoch", type=int)
    p.add_argument("--rpn-checkpoint")
    p.add_argument("--cls-checkpoint")
    p.add_argument("--out", help="checkpoint to write")
    p.add_argument("--metrics", help="append line-delimited JSON metrics here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locfewshot", description="Localized few-shot classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in ("train-rpn", "pretrain-cls", "train-fewshot", "finetune", "eval"):
        _add_run_flags(sub.add_parser(stage))

    g = sub.add_parser("gen-synth", help="generate a synthetic busy-scene corpus")
    g.add_argument("--classes", type=int, default=40)
    g.add_argument("--scenes-per-class", type=int, default=60)
    g.add_argument("--canvas", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("stats", help="dataset statistics after filtering")
    s.add_argument("--manifest", required=True)
    s.add_argument("--min-images", type=int, default=None, help="class image threshold (default: off)")
    s.add_argument("--min-area", type=float, default=0.002)
    return parser


def _run_config(args) -> RunConfig:
    overrides = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()}
    overrides["stage"] = args.command
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on unknown flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        if args.command == "gen-synth":
            from .ingestion import SceneSpec, generate_corpus

            spec = SceneSpec(canvas=args.canvas, n_classes=args.classes)
            corpus = generate_corpus(spec, args.scenes_per_class, seed=args.seed, out_dir=args.out)
            result = {"out": args.out, "images": len(corpus.raw.images), "annotations": len(corpus.raw.annotations)}
        elif args.command == "stats":
            from .ingestion import compute_stats, filter_dataset, load_annotations

            raw = filter_dataset(load_annotations(args.manifest), args.min_images, args.min_area)
            result = compute_stats(raw).to_dict()
        else:
            from .pipeline.stages import run_stage

            result = run_stage(_run_config(args))
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"locfewshot {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
