"""cf2net command line - prepare data, train, evaluate, ablate, predict, self-test."""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from cf2net import __version__
from cf2net.config import ExperimentConfig, load_config, write_resolved_config
from cf2net.data.pipeline import make_folds, read_gray
from cf2net.data.store import load_prepared, prepare_dataset
from cf2net.exceptions import CF2NetError, NumericalError
from cf2net.network.checkpoint import load_checkpoint
from cf2net.training.ablation import AblationVariant, parse_variants, run_ablation
from cf2net.training.inference import predict, write_prediction
from cf2net.training.selftest import run_selftest
from cf2net.training.trainer import cross_validate, evaluate_checkpoint, resolve_device, train_fold

logger = logging.getLogger("cf2net")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

# Flag destination -> configuration key path
CONFIG_FLAGS: dict[str, tuple[str, ...]] = {
    "seed": ("seed",),
    "out": ("out",),
    "device": ("device",),
    "log_level": ("log_level",),
    "data_root": ("data", "root"),
    "prepared_dir": ("data", "prepared_dir"),
    "synthetic": ("data", "synthetic_count"),
    "band_radius": ("data", "band_radius"),
    "hflip": ("data", "horizontal_flip"),
    "workers": ("data", "num_workers"),
    "size": ("model", "image_size"),
    "base_width": ("model", "base_width"),
    "superpixel": ("model", "use_superpixel"),
    "superpixel_k": ("superpixel", "k"),
    "compactness": ("superpixel", "compactness"),
    "slic_iterations": ("superpixel", "iterations"),
    "optimizer": ("train", "optimizer"),
    "learning_rate": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "epochs"),
    "folds": ("train", "folds"),
    "grad_clip_norm": ("train", "grad_clip_norm"),
    "deterministic": ("deterministic",),
    "min_size": ("superpixel", "min_size"),
    "fsp_width": ("model", "fsp_width"),
    "em_channels": ("model", "em_channels"),
    "aspp_rates": ("model", "aspp_rates"),
    "fsp": ("model", "use_fsp"),
    "aspp": ("model", "use_aspp"),
    "ec": ("model", "use_ec"),
    "backbone_skips": ("model", "backbone_skips"),
    "lambda1": ("loss", "lambda1"),
    "lambda2": ("loss", "lambda2"),
    "lambda3": ("loss", "lambda3"),
    "mu1": ("loss", "mu1"),
    "mu2": ("loss", "mu2"),
    "balanced": ("loss", "balanced"),
    "invert_balance": ("loss", "invert_balance"),
    "literal_dice": ("loss", "paper_literal_dice"),
    "epsilon": ("loss", "epsilon"),
    "momentum": ("train", "momentum"),
}


def _configure_logging(level: str, log_file: Path | None = None) -> None:
    """Configure logging with the specified level, optionally mirrored to a run log."""
    log_level = getattr(logging, level.upper(), logging.INFO)
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=log_level, format=LOG_FORMAT, handlers=handlers, force=True)


# =============================================================================
# Arguments
# =============================================================================


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("experiment")
    group.add_argument("--config", type=Path, help="TOML config file (or a resolved_config.json)")
    group.add_argument("--seed", type=int, help="Random seed (default: 0)")
    group.add_argument("--out", type=Path, help="Run output directory (default: runs)")
    group.add_argument("--device", help="Torch device, or 'auto' (default: auto)")
    group.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], type=str.upper
    )
    group.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        help="Deterministic torch kernels (default: on)",
    )

    data = common.add_argument_group("data")
    data.add_argument("--data-root", type=Path, help="Dataset root with images/ and masks/")
    data.add_argument("--prepared-dir", type=Path, help="Prepared dataset directory")
    data.add_argument("--band-radius", type=int, help="Edge band radius in pixels (default: 5)")
    data.add_argument("--size", type=int, help="Canonical image size S (default: 256)")
    data.add_argument("--workers", type=int, help="Preparation worker processes")

    model = common.add_argument_group("model")
    model.add_argument("--base-width", type=int, help="Backbone base width (default: 64)")
    model.add_argument(
        "--superpixel",
        action=argparse.BooleanOptionalAction,
        help="Super-pixel input channel (default: on)",
    )
    model.add_argument("--superpixel-k", type=int, help="SLIC region count (default: 2000)")
    model.add_argument("--compactness", type=float, help="SLIC compactness (default: 10)")
    model.add_argument("--slic-iterations", type=int, help="SLIC iterations (default: 10)")
    model.add_argument("--min-size", type=int, help="Smallest super-pixel region (default: N/4k)")
    model.add_argument("--fsp-width", type=int, help="FSP module channel width (default: 64)")
    model.add_argument("--em-channels", type=int, help="Side map channels Em (default: 32)")
    model.add_argument(
        "--aspp-rates", type=int, nargs="+", help="ASPP dilation rates (default: 2 4 6)"
    )
    for name, label in (
        ("fsp", "Fusion side-prediction modules"),
        ("aspp", "Atrous pyramids in FSP modules"),
        ("ec", "Edge constraint units"),
        ("backbone-skips", "Backbone skip connections"),
    ):
        model.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, help=label)

    loss = common.add_argument_group("loss")
    for name, label in (
        ("lambda1", "Weight of the fused segmentation loss"),
        ("lambda2", "Weight of the auxiliary side-output losses"),
        ("lambda3", "Weight of the edge loss"),
        ("mu1", "Weighted dice coefficient in each loss"),
        ("mu2", "Cross-entropy coefficient in each loss"),
        ("epsilon", "Loss stabilizer"),
    ):
        loss.add_argument(f"--{name}", type=float, help=label)
    loss.add_argument(
        "--balanced", action=argparse.BooleanOptionalAction, help="Foreground-weighted losses"
    )
    loss.add_argument(
        "--invert-balance",
        action=argparse.BooleanOptionalAction,
        help="Swap the foreground and background weights",
    )
    loss.add_argument(
        "--literal-dice",
        action=argparse.BooleanOptionalAction,
        help="Unnormalized weighted dice variant",
    )

    train = common.add_argument_group("training")
    train.add_argument("--optimizer", choices=["adagrad", "sgd", "adam"])
    train.add_argument("--learning-rate", type=float, help="Learning rate (default: 6e-4)")
    train.add_argument("--batch-size", type=int, help="Mini-batch size (default: 4)")
    train.add_argument("--epochs", type=int, help="Epochs per fold (default: 500)")
    train.add_argument("--folds", type=int, help="Cross-validation folds (default: 4)")
    train.add_argument("--grad-clip-norm", type=float, help="Gradient clipping norm")
    train.add_argument("--momentum", type=float, help="SGD momentum (default: 0.9)")
    train.add_argument(
        "--hflip", action=argparse.BooleanOptionalAction, help="Horizontal-flip augmentation"
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="cf2net",
        description="CF2-Net breast ultrasound lesion segmentation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"cf2net {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    prepare = commands.add_parser(
        "prepare", parents=[common], help="Materialize the preprocessed dataset"
    )
    prepare.add_argument("--synthetic", type=int, help="Generate N synthetic samples instead")

    train = commands.add_parser("train", parents=[common], help="Cross-validate (or one fold)")
    train.add_argument("--fold", type=int, help="Train only this fold")

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--fold", type=int, help="Held-out fold (default: the checkpoint's)")
    evaluate.add_argument(
        "--save-overlays", action="store_true", help="Write per-image contour overlays"
    )

    ablate = commands.add_parser("ablate", parents=[common], help="Run ablation variants")
    ablate.add_argument(
        "--variants",
        default=",".join(v.value for v in AblationVariant),
        help="Comma-separated variants (default: all six)",
    )
    ablate.add_argument(
        "--save-overlays",
        action="store_true",
        help="Write one contour overlay per image comparing all variants",
    )

    predict_cmd = commands.add_parser(
        "predict",
        parents=[common],
        help="Segment one image; --out names the overlay file",
    )
    predict_cmd.add_argument("--image", type=Path, required=True)
    predict_cmd.add_argument("--checkpoint", type=Path, required=True)

    selftest = commands.add_parser("selftest", parents=[common], help="Run the self checks")
    selftest.add_argument(
        "--skip-overfit", action="store_true", help="Skip the overfit smoke test"
    )
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    return build_parser().parse_args(argv)


def config_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Nested configuration values for every flag given on the command line."""
    overrides: dict[str, Any] = {}
    for dest, path in CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if args.command == "predict" and dest == "out":
            value = value.parent
        node = overrides
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return overrides


# =============================================================================
# Commands
# =============================================================================


def cmd_prepare(config: ExperimentConfig, args: argparse.Namespace) -> int:
    manifest = prepare_dataset(config)
    logger.info(
        "Prepared dataset: %d %s samples (hash %s)",
        manifest.sample_count,
        manifest.source_tag,
        manifest.parameter_hash,
    )
    return EXIT_OK


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    data = load_prepared(config)
    if args.fold is None:
        report = cross_validate(config, data, config.out)
        print(report.to_table())
        return EXIT_OK
    folds = make_folds(data, config.train.folds, config.seed)
    result = train_fold(config, args.fold, folds, data, config.out / f"fold_{args.fold}")
    logger.info("Best checkpoint: %s", result.best_checkpoint)
    return EXIT_OK


def cmd_eval(config: ExperimentConfig, args: argparse.Namespace) -> int:
    data = load_prepared(config)
    overlay_dir = config.out / "overlays" if args.save_overlays else None
    report = evaluate_checkpoint(
        args.checkpoint, config, data, args.fold, overlay_dir, folds=args.folds
    )
    report.write(config.out, stem=f"eval_{args.checkpoint.stem}")
    print(report.to_table())
    return EXIT_OK


def cmd_ablate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    try:
        variants = parse_variants(args.variants)
    except ValueError as e:
        logger.error("Invalid --variants: %s", e)
        return EXIT_USER_ERROR
    data = load_prepared(config)
    table = run_ablation(config, variants, data, config.out, save_overlays=args.save_overlays)
    print(table.to_table())
    return EXIT_OK


def cmd_predict(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if args.out is None:
        logger.error("predict needs --out <overlay.png>")
        return EXIT_USER_ERROR
    try:
        image = read_gray(args.image)
    except OSError as e:
        logger.error("Cannot read image %s: %s", args.image, e)
        return EXIT_USER_ERROR
    checkpoint = load_checkpoint(args.checkpoint, resolve_device(config.device))
    prediction = predict(checkpoint, image, use_superpixel=args.superpixel)
    for path in write_prediction(prediction, args.out):
        logger.info("Wrote %s", path)
    return EXIT_OK


def cmd_selftest(config: ExperimentConfig, args: argparse.Namespace) -> int:
    results = run_selftest(include_overfit=not args.skip_overfit, seed=config.seed)
    failed = [result.name for result in results if not result.passed]
    if failed:
        logger.error("Self test failed: %s", ", ".join(failed))
        return EXIT_INTERNAL_ERROR
    logger.info("All %d checks passed", len(results))
    return EXIT_OK


COMMANDS: dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one cf2net command and return its exit code."""
    args = parse_args(argv)
    _configure_logging(args.log_level or "INFO")

    try:
        config = load_config(args.config, config_overrides(args))
        write_resolved_config(config, config.out)
        _configure_logging(config.log_level, config.out / "run.log")
        logger.info(
            "cf2net v%s: %s (seed %d, out %s)", __version__, args.command, config.seed, config.out
        )
        return COMMANDS[args.command](config, args)
    except NumericalError as e:
        logger.error("%s", e)
        return EXIT_INTERNAL_ERROR
    except CF2NetError as e:
        logger.error("%s", e)
        return EXIT_USER_ERROR
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_USER_ERROR
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
