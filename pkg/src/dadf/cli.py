"""``dadf`` command line: data generation, training, evaluation, ablation, panels."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dadf.config import ConfigError, load_config, manifest_path


def _counts(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError("counts must be three non-negative integers: train,val,test")
    return parts[0], parts[1], parts[2]


def _add_config_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--config", required=required, help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dadf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="synthetic dataset tools")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    gen = data_sub.add_parser("generate", help="write a synthetic forgery dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--counts", type=_counts, default=(200, 50, 100))
    gen.add_argument("--shifted", action="store_true", help="also write a compression-shifted test split")
    gen.add_argument("--shift-kind", default="jpeg", choices=("jpeg", "blur", "resize"))
    gen.add_argument("--shift-severity", type=float, default=2)
    gen.add_argument("--workers", type=int, default=1)

    tr = sub.add_parser("train", help="train and evaluate the best checkpoint on the test splits")
    _add_config_args(tr)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on one manifest")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", default=None, help="report stem (default: next to the checkpoint)")
    ev.add_argument("--batch-size", type=int, default=25)
    ev.add_argument("--threshold", type=float, default=0.5)

    ab = sub.add_parser("ablate", help="run the ablation grid and write a comparison table")
    _add_config_args(ab)

    vz = sub.add_parser("viz", help="write input | gt | pred | attention panels")
    vz.add_argument("--ckpt", required=True)
    vz.add_argument("--manifest", required=True)
    vz.add_argument("--out", required=True)
    vz.add_argument("--limit", type=int, default=None)
    vz.add_argument("--threshold", type=float, default=0.5)
    return parser


def _print_report(name: str, report) -> None:
    d = report.to_dict()
    fields = " ".join(f"{k}={d[k]:.4f}" if isinstance(d[k], float) else f"{k}={d[k]}"
                      for k in ("pbca", "iinc", "acc", "auc", "eer", "n"))
    print(f"{name}: {fields}")


def cmd_generate(args) -> int:
    from dadf.data import generate_dataset

    paths = generate_dataset(args.out, args.seed, args.size, args.counts, args.shifted,
                             args.shift_kind, args.shift_severity, args.workers)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args) -> int:
    from dadf.data import load_manifest, load_samples
    from dadf.train import evaluate, load_checkpoint, train

    cfg = load_config(args.config, args.overrides)
    result = train(cfg)
    model, _ = load_checkpoint(result.best_checkpoint)
    out_dir = Path(cfg["out_dir"])
    for split in ("test", "test_shifted"):
        path = manifest_path(cfg, split)
        if path is None or not path.exists():
            continue
        report = evaluate(model, load_samples(load_manifest(path)), cfg["eval.batch_size"], cfg["eval.threshold"])
        report.write(out_dir / f"report_{split}")
        _print_report(split, report)
    print(f"best checkpoint: {result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from dadf.data import load_manifest, load_samples
    from dadf.train import evaluate, load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    report = evaluate(model, load_samples(manifest), args.batch_size, args.threshold)
    stem = Path(args.out) if args.out else Path(args.ckpt).with_name(f"report_{manifest.split}")
    stem.parent.mkdir(parents=True, exist_ok=True)
    json_path, txt_path = report.write(stem)
    _print_report(manifest.split, report)
    print(f"report: {json_path} {txt_path}")
    return 0


def cmd_ablate(args) -> int:
    from dadf.ablate import format_table, run_ablation

    cfg = load_config(args.config, args.overrides)
    results = run_ablation(cfg)
    print(format_table(results), end="")
    print(f"table: {Path(cfg['out_dir']) / 'ablation' / 'ablation.md'}")
    return 0


def cmd_viz(args) -> int:
    from dadf.data import load_manifest, load_samples
    from dadf.train import load_checkpoint
    from dadf.viz import visualize

    model, _ = load_checkpoint(args.ckpt)
    samples = load_samples(load_manifest(args.manifest))
    if args.limit is not None:
        samples = samples[: args.limit]
    paths = visualize(model, samples, args.out, args.threshold)
    print(f"wrote {len(paths)} panels to {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "viz": cmd_viz}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = cmd_generate if args.command == "data" else COMMANDS[args.command]
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"dadf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
