"""Command-line entry point: train, infer, eval, gradcheck, ablate."""

import argparse
import sys
from pathlib import Path

from .ablation import format_ablation_table, run_ablation
from .blocks import EnhancementNetwork
from .checkpoint import CheckpointError, load
from .config import ConfigError, desk_preset, load_config, parse_config
from .dataset import DatasetError, PairError, scan_dataset
from .imageio import ImageParseError, UnsupportedImageError, load_image, save_image
from .inference import enhance, evaluate_network
from .tensor import ContractError, DimensionError, set_backward_fault
from .training import TrainingError, restore, train
from .verify import format_report, run_full_suite

_EXPECTED_ERRORS = (ConfigError, CheckpointError, DatasetError, PairError,
                    ImageParseError, UnsupportedImageError, TrainingError,
                    ContractError, DimensionError, ValueError, OSError)


def _network_for_checkpoint(ckpt_path: str, config_path: str | None) -> EnhancementNetwork:
    if config_path is None:
        sidecar = Path(f"{ckpt_path}.cfg")
        if not sidecar.exists():
            raise ConfigError(
                f"no config given and no sidecar {sidecar} next to the checkpoint")
        config_path = sidecar
    config = load_config(config_path)
    network = EnhancementNetwork(config.network, seed=config.seed)
    restore(load(ckpt_path), network)
    return network


def _cmd_train(args) -> int:
    config = load_config(args.config)
    result = train(config, resume=args.resume, echo=print)
    print(f"finished {result.iterations} iterations; "
          f"final checkpoint: {result.final_checkpoint}")
    return 0


def _cmd_infer(args) -> int:
    network = _network_for_checkpoint(args.checkpoint, args.config)
    image = load_image(args.input)
    out = enhance(network, image, tile=args.tile)
    save_image(out, args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_eval(args) -> int:
    network = _network_for_checkpoint(args.checkpoint, args.config)
    records = scan_dataset(args.data)
    report = evaluate_network(network, records, tile=args.tile)
    print(report.to_table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"wrote {args.csv}")
    return 0


def _cmd_gradcheck(args) -> int:
    set_backward_fault(args.inject_fault)
    try:
        results = run_full_suite(trials=args.trials, seed=args.seed)
    finally:
        set_backward_fault(None)
    print(format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def _cmd_ablate(args) -> int:
    base = desk_preset() if args.preset == "desk" else None
    config = parse_config(Path(args.config).read_text(), base=base)
    results = run_ablation(config, echo=print)
    print()
    print(format_ablation_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cenet",
        description="Context-aware low-light image enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="enhance one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input image (png/ppm)")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--tile", type=int, help="process in overlapping tiles of this size")
    p.add_argument("--config", help="run config (defaults to <checkpoint>.cfg)")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM over a paired dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root with input/ and target/")
    p.add_argument("--csv", help="also write per-image rows to this CSV file")
    p.add_argument("--tile", type=int)
    p.add_argument("--config", help="run config (defaults to <checkpoint>.cfg)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops and blocks")
    p.add_argument("--trials", type=int, default=5, help="random instances per op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="OP",
                   help="corrupt OP's backward rule (negative control)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score all four context variants")
    p.add_argument("--config", required=True)
    p.add_argument("--preset", choices=["desk"],
                   help="start from the bundled desk-scale preset; the config "
                        "file then only needs data_root and output_dir")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
