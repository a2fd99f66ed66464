"""
cubic-puzzles command line.

    python -m cli.main gen-data --preset desk --out runs/data
    python -m cli.main pretrain --data runs/data --out runs/pretrain
    python -m cli.main finetune --data runs/data --checkpoint runs/pretrain/checkpoint.stcp --out runs/probe
    python -m cli.main eval --data runs/data --checkpoint runs/probe/checkpoint.stcp
    python -m cli.main gradcheck
    python -m cli.main export-filters --checkpoint runs/pretrain/checkpoint.stcp --out runs/filters
    python -m cli.main experiment --kind transfer --data runs/data

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 gradient-check or experiment expectation failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from data.clip_io import has_split, load_split, read_header
from data.synthetic import generate_synthetic_dataset
from models.checkpoint import check_header, load_checkpoint
from models.gradcheck import run_all_checks
from models.networks import ActionNetwork
from training.evaluation import evaluate_split
from training.experiments import EXPERIMENTS, Benchmark, check_experiment, format_table
from training.trainer import (
    backbone_from_header,
    finetune_run,
    geometry_from_header,
    load_pretrained,
    pretrain_run,
)

from .config import PRESETS, ConfigError, RunConfig, build_run_config, load_defaults, parse_override
from .filters import export_filters

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAILED = 0, 1, 2, 3


def setup_logging(level: Optional[str] = None):
    section = load_defaults().get("logging", {})
    level = (level or section.get("level", "INFO")).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=level, format=section.get("format"), force=True)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path,
                        help="YAML file with geometry/backbone/train/data sections (not a flat key=value file; "
                             "use --set for single keys)")
    parser.add_argument("--preset", choices=PRESETS, default="desk")
    parser.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--workers", type=int, help="sampler threads")
    parser.add_argument("--deterministic", action="store_true", help="one sampler thread, zeroed wall times")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--quiet", action="store_true", help="no progress bars")


def _add_data(parser: argparse.ArgumentParser):
    parser.add_argument("--data", type=Path, help="dataset root (default: data.root)")


def _add_ablation(parser: argparse.ArgumentParser):
    parser.add_argument("--task", choices=("st", "s", "t"))
    parser.add_argument("--steps", type=int)
    parser.add_argument("--no-jitter", action="store_true")
    parser.add_argument("--no-replication", action="store_true")
    parser.add_argument("--no-rwc", action="store_true")
    parser.add_argument("--grayscale", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubic-puzzles", description="Space-time cubic puzzle pretraining for 3D CNNs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic moving-shapes benchmark")
    _add_common(p)
    p.add_argument("--watermark", action="store_true", help="grid-coordinate watermark clips")

    p = sub.add_parser("pretrain", help="puzzle pretraining")
    _add_common(p)
    _add_data(p)
    _add_ablation(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = sub.add_parser("finetune", help="action classification from a pretrained or random backbone")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", type=Path, help="pretraining checkpoint (random init when omitted)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--linear-probe", dest="linear_probe", action="store_true", default=None)
    mode.add_argument("--full", dest="linear_probe", action="store_false", default=None)

    p = sub.add_parser("eval", help="sliding-window evaluation of an action checkpoint")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("gradcheck", help="finite-difference checks of every layer and the tiny network")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=20, help="seeds per layer check")
    p.add_argument("--network-seeds", type=int, default=20, help="seeds for the whole-network checks")

    p = sub.add_parser("export-filters", help="render first-layer filters as PGM/PPM images")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("experiment", help="pretrained-vs-random, strategy or ablation comparison")
    _add_common(p)
    _add_data(p)
    _add_ablation(p)
    p.add_argument("--kind", choices=sorted(EXPERIMENTS), required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--check", action="store_true", help="exit 3 when the expected ordering does not hold")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Preset < --config < --set < dedicated flags."""
    overrides = [parse_override(text) for text in args.overrides]
    flags = {
        "train.seed": args.seed,
        "train.workers": args.workers,
        "train.task": getattr(args, "task", None),
        "train.steps": getattr(args, "steps", None),
        "train.linear_probe": getattr(args, "linear_probe", None),
    }
    overrides += [(key, value) for key, value in flags.items() if value is not None]
    if args.deterministic:
        overrides.append(("train.deterministic", True))
    for flag, key in (("no_jitter", "train.jitter"), ("no_replication", "train.channel_replication"),
                      ("no_rwc", "train.rwc")):
        if getattr(args, flag, False):
            overrides.append((key, False))
    if getattr(args, "grayscale", False):
        overrides.append(("train.grayscale", True))
    if getattr(args, "watermark", False):
        overrides.append(("data.watermark", True))
    return build_run_config(args.preset, args.config, overrides)


def _data_root(args, config: RunConfig) -> Path:
    return Path(getattr(args, "data", None) or config.data.root)


def cmd_gen_data(args, config: RunConfig) -> int:
    spec = config.data.synthetic_spec(config.train.seed)
    root = generate_synthetic_dataset(spec, config.geometry, args.out or config.data.root, progress=not args.quiet)
    print(f"dataset written to {root}")
    return EXIT_OK


def cmd_pretrain(args, config: RunConfig) -> int:
    root = _data_root(args, config)
    clips = load_split(root, "train")
    eval_clips = load_split(root, "test") if has_split(root, "test") else None
    result = pretrain_run(clips, config.geometry, config.backbone, config.train,
                          out_dir=args.out or Path("runs/pretrain"), eval_clips=eval_clips,
                          resume=args.resume, progress=not args.quiet)
    if result.records:
        last = result.records[-1]
        print(f"step {last.step}: {last.split} loss {last.loss:.4f}, top-1 {last.top1:.3f}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _num_classes(root: Path) -> int:
    header = read_header(root)
    if "spec.num_classes" in header:
        return int(header["spec.num_classes"])
    return len([key for key in header if key.startswith("class.")])


def cmd_finetune(args, config: RunConfig) -> int:
    root = _data_root(args, config)
    pretrained, header = None, None
    if args.checkpoint is not None:
        header, pretrained = load_pretrained(args.checkpoint)
    test = load_split(root, "test") if has_split(root, "test") else None
    result = finetune_run(load_split(root, "train"), config.geometry, config.backbone, config.train,
                          _num_classes(root), pretrained=pretrained, pretrained_header=header,
                          test_clips=test, out_dir=args.out or Path("runs/finetune"), progress=not args.quiet)
    if result.accuracy is not None:
        print(f"top-1: {result.accuracy:.4f}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args, config: RunConfig) -> int:
    header, params = load_checkpoint(args.checkpoint)
    check_header(header, {"kind": "action"})
    network = ActionNetwork(backbone_from_header(header), int(header["num_classes"]))
    geometry = geometry_from_header(header, fallback=config.geometry)
    if geometry != config.geometry:
        logger.info(f"Evaluating with the checkpoint geometry {geometry.to_dict()}")
    clips = load_split(_data_root(args, config), args.split)
    result = evaluate_split(network, params, clips, geometry)
    print(f"{args.split} top-1: {result.top1:.4f} over {len(clips)} videos")
    return EXIT_OK


def cmd_gradcheck(args, config: RunConfig) -> int:
    base = config.train.seed
    results = run_all_checks(range(base, base + args.seeds), range(base, base + args.network_seeds))
    failed = [r for r in results if not r.passed]
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    for name, error in worst.items():
        print(f"{name:<24} max relative error {error:.2e}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        print(f"FAILED {r.name} seed={r.seed}: {r.error:.2e} > {r.tolerance:.0e}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_export_filters(args, config: RunConfig) -> int:
    _, params = load_checkpoint(args.checkpoint)
    result = export_filters(params, args.out or Path("runs/filters"))
    print(f"{len(result.filters)} filters, montage {result.montage}")
    return EXIT_OK


def cmd_experiment(args, config: RunConfig) -> int:
    root = _data_root(args, config)
    bench = Benchmark(load_split(root, "train"), load_split(root, "test"), _num_classes(root),
                      config.geometry, config.backbone)
    seeds = [config.train.seed + i for i in range(args.seeds)]
    rows = EXPERIMENTS[args.kind](bench, config.train, seeds, progress=not args.quiet)
    table = format_table(rows)
    print(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{args.kind}.txt").write_text(table + "\n", encoding="utf-8")
    failures = check_experiment(args.kind, rows)
    for failure in failures:
        print(f"expectation not met: {failure}", file=sys.stderr)
    return EXIT_FAILED if failures and args.check else EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-filters": cmd_export_filters,
    "experiment": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        config = resolve_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, config)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
