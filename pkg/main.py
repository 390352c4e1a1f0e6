"""
Command-line entry point.

    python main.py synth   --out data/synth --classes 84 --per-class 50 --seed 1
    python main.py split   --data data/synth --out runs/split
    python main.py train   --data data/synth --out runs/r1 --seed 7
    python main.py eval    --index runs/r1/index.tsv --checkpoint runs/r1/best.akhw --out runs/r1
    python main.py predict --checkpoint runs/r1/best.akhw --image some.png --topk 5
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from manager.eval_manager import run_eval, run_predict, run_split, run_synth
from manager.train_manager import run_train
from utils.config_loader import build_run_config
from utils.errors import EXIT_GENERIC, EXIT_OK, EXIT_USAGE, AkhcrError

logger = logging.getLogger("akhcr")


def _add_run_flags(p: argparse.ArgumentParser, training: bool) -> None:
    p.add_argument("--config", type=Path, help="key = value run configuration file")
    p.add_argument("--data", dest="data_root", type=Path, help="Dataset root (one folder per class)")
    p.add_argument("--out", dest="out_dir", type=Path, help="Output directory")
    p.add_argument("--index", dest="index_path", type=Path, help="Reuse a split index file")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--blank-threshold", dest="blank_threshold", type=float)
    p.add_argument("--prefetch-depth", dest="prefetch_depth", type=int)
    p.add_argument("--workers", type=int)
    if training:
        p.add_argument("--lr-schedule", dest="lr_schedule", help="e.g. 5x0.001,3x0.0001,3x0.00004")
        p.add_argument("--lambda", dest="lam", type=float, help="L2 strength")
        p.add_argument("--no-inception", dest="use_inception", action="store_const", const=False,
                       help="Ablation: drop the inception block")
        p.add_argument("--resume", type=Path, help="Continue from a checkpoint")
        p.add_argument("--no-progress", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="akhcr", description="AKHCRNet handwritten Bengali character recognition")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Write a procedural stand-in dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--classes", type=int, default=84)
    p.add_argument("--per-class", dest="per_class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    _add_run_flags(sub.add_parser("split", help="Scan, filter and split into index.tsv"), training=False)
    _add_run_flags(sub.add_parser("train", help="Train AKHCRNet"), training=True)

    p = sub.add_parser("eval", help="Per-class report on the validation split")
    _add_run_flags(p, training=False)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("predict", help="Rank classes for one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--topk", type=int, default=5)
    return parser


_RUN_KEYS = ["data_root", "out_dir", "index_path", "seed", "batch_size", "val_fraction", "blank_threshold",
             "prefetch_depth", "workers", "lr_schedule", "lam", "use_inception"]


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k, None) is not None}


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "synth":
        run_synth(args.out, args.classes, args.per_class, args.seed)
        return
    if args.command == "predict":
        run_predict(args.checkpoint, args.image, args.topk)
        return

    cfg = build_run_config(args.config, _overrides(args))
    if args.command == "split":
        run_split(cfg)
    elif args.command == "train":
        run_train(cfg, resume=args.resume, progress=not args.no_progress)
    elif args.command == "eval":
        run_eval(cfg, args.checkpoint)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="[%(levelname)s] %(message)s", force=True)
    try:
        dispatch(args)
    except AkhcrError as e:
        logger.error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        logger.error("Interrupted.")
        return EXIT_GENERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
