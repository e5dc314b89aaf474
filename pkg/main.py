import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import config
from config import parse_norm_order
from entities import InitMode, RunConfig
from errors import NumericalFailure
from handlers.evaluate import cmd_eval, cmd_transfer
from handlers.perturb import cmd_export, cmd_perturb
from handlers.sweep import cmd_profile, cmd_sweep
from handlers.train import cmd_train

logger = logging.getLogger(__name__)

COMMANDS: dict[str, Callable[[RunConfig], dict]] = {
    "train": cmd_train,
    "perturb": cmd_perturb,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "profile": cmd_profile,
    "transfer": cmd_transfer,
    "export": cmd_export,
}

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# flags that steer the process but are not part of RunConfig
_CONTROL_FLAGS = {"command", "config", "log_level", "seed"}


def _float_list(raw: str) -> list[float]:
    return [float(token) for token in raw.split(",") if token.strip()]


def _int_list(raw: str) -> list[int]:
    return [int(token) for token in raw.split(",") if token.strip()]


def _str_list(raw: str) -> list[str]:
    return [token.strip() for token in raw.split(",") if token.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file mirroring RunConfig; flags override its values")
    parser.add_argument("--data", help="directory with IDX files (train-* and t10k-*, optionally .gz)")
    parser.add_argument("--out", help="path of the main artifact")
    parser.add_argument("--out-dir", dest="out_dir", help="directory for reports and run_config.json")
    parser.add_argument("--workers", type=int, help="thread count (default: all cores)")
    parser.add_argument("--seed", type=int, help="train seed for `train`, batch seed otherwise")
    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_attack(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model")
    parser.add_argument("--tap")
    parser.add_argument("--p", type=parse_norm_order, help="1 < p <= inf; `inf` spells infinity")
    parser.add_argument("--q", type=parse_norm_order)
    parser.add_argument("--L", dest="norm_budget", type=float, help="norm budget ||eps||_p")
    parser.add_argument("--batch", dest="batch_size", type=int)
    parser.add_argument("--power-seed", dest="power_seed", type=int)
    parser.add_argument("--max-iters", dest="max_iters", type=int)
    parser.add_argument("--rel-tol", dest="rel_tol", type=float)
    parser.add_argument("--init", choices=[mode.value for mode in InitMode if mode != InitMode.user])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="singular-fool", description="Universal adversarial perturbations from (p, q)-singular vectors")
    parser.add_argument("--version", action="version", version=config.VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train the reference network", argument_default=argparse.SUPPRESS)
    _add_common(train)
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", dest="learning_rate", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--train-batch-size", dest="train_batch_size", type=int)

    perturb = sub.add_parser("perturb", help="build a perturbation", argument_default=argparse.SUPPRESS)
    _add_common(perturb)
    _add_attack(perturb)
    perturb.add_argument("--image-id", dest="image_id", type=int, help="per-image mode (needs --batch 1)")

    evaluate = sub.add_parser("eval", help="fooling rate of a perturbation", argument_default=argparse.SUPPRESS)
    _add_common(evaluate)
    evaluate.add_argument("--model")
    evaluate.add_argument("--perturbation")
    evaluate.add_argument("--baseline-seeds", dest="baseline_seeds", type=int)
    evaluate.add_argument("--topk-image", dest="topk_image", type=int)
    evaluate.add_argument("--norms", type=_float_list, help="comma separated, ascending")
    evaluate.add_argument("--top-k", dest="top_k", type=int)
    evaluate.add_argument("--show-images", dest="show_images", type=_int_list, help="comma separated image ids")

    sweep = sub.add_parser("sweep", help="fooling rate over q or batch size", argument_default=argparse.SUPPRESS)
    _add_common(sweep)
    _add_attack(sweep)
    sweep.add_argument("--sweep", choices=["q", "batch"])
    sweep.add_argument("--values", type=_float_list, help="comma separated, strictly increasing")

    profile = sub.add_parser("profile", help="singular value of every tap", argument_default=argparse.SUPPRESS)
    _add_common(profile)
    _add_attack(profile)
    profile.add_argument("--taps", type=_str_list, help="comma separated tap names (default: all but softmax)")
    profile.add_argument("--with-fooling", dest="with_fooling", action="store_true")

    transfer = sub.add_parser("transfer", help="cross-model fooling matrix", argument_default=argparse.SUPPRESS)
    _add_common(transfer)
    transfer.add_argument("--models", nargs="+")
    transfer.add_argument("--perturbations", nargs="+")

    export = sub.add_parser("export", help="render a stored perturbation", argument_default=argparse.SUPPRESS)
    _add_common(export)
    export.add_argument("--perturbation")
    export.add_argument("--mode", choices=["raw", "pgm", "ppm"])
    export.add_argument("--transform", choices=["identity", "minmax"])
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    values = vars(args)
    base: dict = {}
    if values.get("config"):
        path = Path(values["config"])
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        base = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(base, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    overrides = {key: value for key, value in values.items() if key not in _CONTROL_FLAGS}
    if "seed" in values:
        overrides["train_seed" if args.command == "train" else "batch_seed"] = values["seed"]
    return RunConfig.model_validate({**base, **overrides, "command": args.command, "version": config.VERSION})


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if getattr(args, "log_level", None):
        logging.getLogger().setLevel(args.log_level)

    try:
        run = load_run_config(args)
        logger.info(f"Running {run.command} (version {config.VERSION})")
        COMMANDS[run.command](run)
    except NumericalFailure as exc:
        logger.exception("Numerical failure in %s", args.command)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    logging.basicConfig(format="%(asctime)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S%z", level=config.LOG_LEVEL)
    raise SystemExit(main())
