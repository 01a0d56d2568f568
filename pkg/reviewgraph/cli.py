#!/usr/bin/env python
"""
cli.py: Command-line entry point.

Usage::

    reviewgraph synth --seed 7
    reviewgraph compress
    reviewgraph init-users
    reviewgraph train --mode full
    reviewgraph eval --mode full
    reviewgraph ablate
    reviewgraph sweep-layers --layers 1,3,5,7,9

Settings come from the defaults, then ``--config`` (TOML), then flags. The
output root defaults to ``$REVIEWGRAPH_OUTPUT`` or ``./runs``. On failure a
single line ``error=<class> command=<command> message=<text>`` is written to
stderr and the exit code is 2.
"""

import argparse
import sys
from typing import Any, Callable, Dict, List, Optional

from reviewgraph import __version__
from reviewgraph.config import RunConfig, load_config, parse_int_list
from reviewgraph.exceptions import ReviewGraphError
from reviewgraph.logger import setup_logger
from reviewgraph.models.epim import InitMode, RegTarget
from reviewgraph.pipeline import (
    KINDS,
    run_ablate,
    run_align,
    run_compress,
    run_eval,
    run_init_users,
    run_sweep_layers,
    run_synth,
    run_train,
)

logger = setup_logger(__name__)

EXIT_FAILURE = 2
MODE_CHOICES = [mode.value for mode in InitMode] + ["printf"]


def _mode_list(text: str) -> List[str]:
    return [InitMode(part.strip()).value for part in text.split(",") if part.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument(
        "--output-dir",
        dest="paths.output_dir",
        help="output root (default: $REVIEWGRAPH_OUTPUT or ./runs)",
    )
    parser.add_argument(
        "--data-dir",
        dest="paths.data_dir",
        help="dataset directory (default: <output-dir>/data)",
    )
    parser.add_argument("--seed", type=int, help="seed of every random stream")


def _add_training(parser: argparse.ArgumentParser, layers: bool = True) -> None:
    parser.add_argument(
        "--mode", dest="train.mode", choices=MODE_CHOICES, help="initialisation mode"
    )
    if layers:
        parser.add_argument(
            "--layers", dest="train.layers", type=int, help="propagation layers (0-9)"
        )
    parser.add_argument("--epochs", dest="train.epochs", type=int, help="max epochs")
    parser.add_argument(
        "--patience", dest="train.patience", type=int, help="early-stopping patience"
    )
    parser.add_argument(
        "--batch-size", dest="train.batch_size", type=int, help="BPR triples per step"
    )
    parser.add_argument("--lr", dest="train.lr", type=float, help="AdamW learning rate")
    parser.add_argument(
        "--lambda-bpr", dest="train.lambda_bpr", type=float, help="BPR L2 coefficient"
    )
    parser.add_argument(
        "--reg-target",
        dest="train.reg_target",
        choices=[target.value for target in RegTarget],
        help="embeddings the BPR L2 term acts on",
    )
    parser.add_argument(
        "--freeze-items",
        dest="train.freeze_items",
        action="store_true",
        default=None,
        help="keep layer-0 item embeddings fixed",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reviewgraph",
        description="Review-aware graph recommender pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a planted-topic dataset")
    _add_common(synth)
    synth.add_argument("--users", dest="synth.num_users", type=int, help="user count")
    synth.add_argument("--items", dest="synth.num_items", type=int, help="item count")
    synth.add_argument(
        "--topics", dest="synth.num_topics", type=int, help="planted topic count"
    )
    synth.add_argument(
        "--raw-dim", dest="synth.raw_dim", type=int, help="raw embedding width"
    )
    synth.add_argument(
        "--sigma-review", dest="synth.sigma_review", type=float, help="review noise"
    )
    synth.add_argument(
        "--missing-image-rate",
        dest="synth.missing_image_rate",
        type=float,
        help="share of items without an image embedding",
    )

    align = commands.add_parser("align", help="train the image-text contrastive head")
    _add_common(align)
    align.add_argument(
        "--projection-dim",
        dest="align.projection_dim",
        type=int,
        help="shared projection width",
    )
    align.add_argument(
        "--temperature",
        dest="align.temperature",
        type=float,
        help="initial softmax temperature",
    )
    align.add_argument(
        "--epochs", dest="align.epochs", type=int, help="contrastive training epochs"
    )

    compress = commands.add_parser("compress", help="train auto-encoders")
    _add_common(compress)
    compress.add_argument(
        "--kind",
        action="append",
        choices=KINDS,
        help="table to compress; repeatable (default: all)",
    )
    compress.add_argument(
        "--code-dim", dest="compress.code_dim", type=int, help="auto-encoder code width"
    )
    compress.add_argument(
        "--epochs", dest="compress.epochs", type=int, help="auto-encoder epochs"
    )
    compress.add_argument(
        "--l2", type=float, help="auto-encoder L2 coefficient for every kind"
    )
    compress.add_argument(
        "--normalize-codes",
        dest="compress.normalize_codes",
        action="store_true",
        default=None,
        help="L2-normalise each code",
    )
    compress.add_argument(
        "--align-first",
        dest="align.first",
        action="store_true",
        default=None,
        help="compress the aligned image/text tables instead of the raw ones",
    )

    init = commands.add_parser("init-users", help="review-aware user initialisation")
    _add_common(init)
    init.add_argument(
        "--mode", dest="train.mode", choices=MODE_CHOICES, help="initialisation mode"
    )
    init.add_argument(
        "--clusters", dest="eval.cluster_k", type=int, help="co-clusters of D"
    )

    train = commands.add_parser("train", help="train the graph model")
    _add_common(train)
    _add_training(train)

    evaluate = commands.add_parser("eval", help="evaluate a trained model on test")
    _add_common(evaluate)
    _add_training(evaluate)
    evaluate.add_argument(
        "--ks", dest="eval.ks", type=parse_int_list, help="cut-offs, e.g. 5,10"
    )
    evaluate.add_argument(
        "--force",
        action="store_true",
        help="evaluate even if the checkpoint fingerprint differs",
    )
    evaluate.add_argument(
        "--compare", help="per-user report to test against (paired t-test)"
    )

    ablate = commands.add_parser("ablate", help="train and evaluate every mode")
    _add_common(ablate)
    _add_training(ablate)
    ablate.add_argument(
        "--modes", dest="eval.modes", type=_mode_list, help="comma-separated modes"
    )
    ablate.add_argument(
        "--ks", dest="eval.ks", type=parse_int_list, help="cut-offs, e.g. 5,10"
    )

    sweep = commands.add_parser("sweep-layers", help="evaluate several depths")
    _add_common(sweep)
    _add_training(sweep, layers=False)
    sweep.add_argument(
        "--layers",
        dest="eval.sweep_layers",
        type=parse_int_list,
        help="comma-separated depths, e.g. 1,3,5,7,9",
    )
    sweep.add_argument(
        "--ks", dest="eval.ks", type=parse_int_list, help="cut-offs, e.g. 5,10"
    )
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted configuration keys set on the command line."""
    overrides = {
        key: value
        for key, value in vars(args).items()
        if ("." in key or key == "seed") and value is not None
    }
    l2 = getattr(args, "l2", None)
    if l2 is not None:
        for kind in KINDS:
            overrides[f"compress.l2_{kind}"] = l2
    return overrides


def _dispatch(args: argparse.Namespace, config: RunConfig) -> Any:
    stages: Dict[str, Callable[[], Any]] = {
        "synth": lambda: run_synth(config),
        "align": lambda: run_align(config),
        "compress": lambda: run_compress(config, args.kind or KINDS),
        "init-users": lambda: run_init_users(config),
        "train": lambda: run_train(config),
        "eval": lambda: run_eval(config, force=args.force, compare=args.compare),
        "ablate": lambda: run_ablate(config),
        "sweep-layers": lambda: run_sweep_layers(config),
    }
    return stages[args.command]()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, overrides_from_args(args))
        logger.info(
            "Running %s with configuration %s", args.command, config.fingerprint
        )
        _dispatch(args, config)
    except (
        ReviewGraphError,
        FileNotFoundError,
        KeyError,
        ValueError,
    ) as error:
        message = " ".join(str(error).split())
        print(
            f"error={type(error).__name__} command={args.command} message={message}",
            file=sys.stderr,
        )
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
