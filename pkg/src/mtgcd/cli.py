"""Command line entry point: ``mtgcd <datagen|train|eval|predict|ablate|init-config>``."""
import argparse
import logging
import sys

from .errors import MTGCDError
from .harness.config import ExperimentConfig, apply_seed_env, load_config, save_config, with_overrides


def _datagen(args):
    from .harness.data import write_dataset

    cfg = apply_seed_env(load_config(args.config))
    counts = write_dataset(cfg.data, args.out, args.workers)
    for split, n in counts.items():
        print(f"{split}: {n} pairs -> {args.out}/{split}")


def _train(args):
    from .harness.train import train

    cfg = apply_seed_env(load_config(args.config))
    if args.out:
        cfg = with_overrides(cfg, {"output_dir": args.out})

    def progress(step, terms):
        print(f"iter {step:>6}  " + "  ".join(f"{k}={v:.4f}" for k, v in terms.items()), flush=True)

    result = train(cfg, progress=progress)
    print(f"best val IoU {result.best_iou:.4f} at iteration {result.best_iteration}; checkpoint {result.best_checkpoint}")


def _eval(args):
    from .harness.evaluate import evaluate, format_report

    rows, path = evaluate(args.checkpoint, args.split, args.out, args.data_root)
    print(format_report(rows))
    print(f"report written to {path}")


def _predict(args):
    from .harness.evaluate import predict

    for path in predict(args.checkpoint, args.pair, args.out, aux=not args.change_only):
        print(path)


def _ablate(args):
    from .harness.evaluate import ablate

    cfg = apply_seed_env(load_config(args.config))

    def progress(row):
        print(f"{row['variant']:<14} seed={row['seed']} {row['split']:<9} IoU={row['iou']:.4f} F1={row['f1']:.4f}", flush=True)

    means = ablate(cfg, args.grid, args.out, progress=progress)
    for (variant, split), m in means.items():
        print(f"mean {variant:<14} {split:<9} IoU={m['iou']:.4f} F1={m['f1']:.4f}")


def _init_config(args):
    cfg = ExperimentConfig()
    if args.preset == "desk":
        cfg = with_overrides(cfg, {"batch_size": 8, "crop_size": 64, "schedule.max_iters": 3000, "eval_interval": 500})
    save_config(cfg, args.out)
    print(args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="mtgcd", description="Multi-task building change detection on synthetic off-nadir pairs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("datagen", help="generate every split to disk")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=_datagen)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override output_dir")
    s.set_defaults(func=_train)

    s = sub.add_parser("eval", help="score a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="all", help="train, val, test_in, test_out or all")
    s.add_argument("--out", help="CSV report path")
    s.add_argument("--data-root", help="read pairs from this datagen directory")
    s.set_defaults(func=_eval)

    s = sub.add_parser("predict", help="predict one stored pair")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pair", required=True)
    s.add_argument("--out")
    s.add_argument("--change-only", action="store_true")
    s.set_defaults(func=_predict)

    s = sub.add_parser("ablate", help="train and score an ablation grid")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True, help="grid JSON file, or 'aux' for the built-in auxiliary-task grid")
    s.add_argument("--out")
    s.set_defaults(func=_ablate)

    s = sub.add_parser("init-config", help="write a default config")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=("default", "desk"), default="desk")
    s.set_defaults(func=_init_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MTGCDError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
