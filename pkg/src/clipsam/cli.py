"""Command-line surface: train, infer, eval, ablate.

Exit codes: 0 on success, 2 for configuration errors (including missing or
incompatible fields), 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .imageio import load_pgm


def _cmd_train(args) -> int:
    from .pipeline import run_train
    cfg = load_config(args.config)
    result = run_train(cfg)
    means = result["epoch_means"]
    for epoch in sorted(means):
        print(f"epoch {epoch}: mean total loss {means[epoch]:.6f}")
    print(f"checkpoint written to {result['checkpoint']}")
    return 0


def _cmd_infer(args) -> int:
    from .pipeline import run_infer
    image = load_pgm(args.image)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    result = run_infer(args.ckpt, image, args.out, stem,
                       no_mmr=args.no_mmr, no_umci=args.no_umci)
    for kind, path in result["paths"].items():
        print(f"{kind}: {path}")
    return 0


def _cmd_eval(args) -> int:
    from .pipeline import load_model_for_checkpoint, run_eval
    model, cfg = load_model_for_checkpoint(args.ckpt)
    out = args.out if args.out else os.path.join(cfg.out_dir, f"eval_{args.seed}")
    result = run_eval(model, cfg, args.seed, args.count, out)
    for kind in ("rough", "refined"):
        r = result[kind]
        print(f"{kind}: auroc={r.auroc:.4f} ap={r.ap:.4f} "
              f"f1_max={r.f1_max:.4f} pro={r.pro:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    from .pipeline import ABLATION_VARIANTS, run_ablate
    cfg = load_config(args.config)
    results = run_ablate(cfg)
    for variant in ABLATION_VARIANTS:
        r = results[variant]["refined"]
        print(f"{variant}: auroc={r.auroc:.4f} ap={r.ap:.4f} "
              f"f1_max={r.f1_max:.4f} pro={r.pro:.4f}")
    print(f"summary written to {os.path.join(cfg.out_dir, 'summary.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clipsam",
        description="Two-stage zero-shot anomaly segmentation at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the rough-segmentation module")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.set_defaults(func=_cmd_train)

    p_infer = sub.add_parser("infer", help="segment one grayscale PGM image")
    p_infer.add_argument("--ckpt", required=True, help="model checkpoint")
    p_infer.add_argument("--image", required=True, help="8-bit PGM input image")
    p_infer.add_argument("--out", default=".", help="output directory")
    p_infer.add_argument("--no-mmr", action="store_true",
                         help="skip refinement; emit the normalized rough map")
    p_infer.add_argument("--no-umci", action="store_true",
                         help="similarity-only rough map (untrained baseline)")
    p_infer.set_defaults(func=_cmd_infer)

    p_eval = sub.add_parser("eval", help="evaluate on a generated held-out split")
    p_eval.add_argument("--ckpt", required=True, help="model checkpoint")
    p_eval.add_argument("--seed", required=True, type=int, help="split seed")
    p_eval.add_argument("--count", required=True, type=int, help="split size")
    p_eval.add_argument("--out", default=None, help="output directory")
    p_eval.set_defaults(func=_cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the structural variant matrix")
    p_ablate.add_argument("--config", required=True, help="flat key=value config file")
    p_ablate.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
