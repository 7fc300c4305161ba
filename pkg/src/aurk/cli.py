"""``aurk`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from aurk import pipeline
from aurk.config import DYNAMIC_MODES, load_config
from aurk.errors import AurkError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--mean-box", action="store_true", help="use dataset mean boxes instead of per-frame boxes")
    common.add_argument("--dynamic", choices=[m for m in DYNAMIC_MODES if m != "none"],
                        help="temporal extension to train or run")
    common.add_argument("--held-out-subjects", help="comma-separated subject ids for the held-out split")
    common.add_argument("--fold", type=int, help="held-out fold index (subject-exclusive folds)")
    common.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="aurk", description="Region-based facial action unit detection toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("partition", parents=[common], help="compute and cache AU boxes from landmarks")
    p.add_argument("--overlays", type=int, default=0, metavar="N", help="write mask overlays for the first N frames")
    sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("train", parents=[common], help="train on the training split")
    p = sub.add_parser("infer", parents=[common], help="predict per-frame labels")
    p.add_argument("--split", choices=["all", "train", "test"], default="all")
    p.add_argument("--checkpoint")
    p = sub.add_parser("eval", parents=[common], help="F1 report for predictions against labels")
    p.add_argument("--predictions")
    p.add_argument("--ground-truth")
    p.add_argument("--method", default="aurk", help="column name in the report")
    sub.add_parser("stats", parents=[common], help="duration and box-area statistics")
    p = sub.add_parser("mean-box", parents=[common], help="dataset mean boxes")
    p.add_argument("--split", choices=["all", "train", "test"], default="train")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.mean_box:
            cfg.mean_box = True
        if args.dynamic:
            cfg.dynamic = args.dynamic
        if args.held_out_subjects:
            cfg.split.held_out_subjects = [int(s) for s in args.held_out_subjects.split(",") if s]
        if args.fold is not None:
            cfg.split.held_out_fold = args.fold
        cfg.validate()
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return 0
        cmd = args.command
        if cmd == "partition":
            r = pipeline.run_partition(cfg, args.overlays)
            print(f"{len(r.frame_ids)} frames: {r.hits} cache hits, {r.misses} computed")
        elif cmd == "synth":
            ds = pipeline.run_synth(cfg)
            print(f"{len(ds)} frames written to {cfg.paths.data_dir}")
        elif cmd == "train":
            res = pipeline.run_train(cfg)
            if res["epoch_loss"]:
                print(f"final epoch loss {res['epoch_loss'][-1]:.6f}")
        elif cmd == "infer":
            ids, _ = pipeline.run_infer(cfg, args.split, args.checkpoint)
            print(f"{len(ids)} predictions written")
        elif cmd == "eval":
            rep = pipeline.run_eval(cfg, args.predictions, args.ground_truth, args.method)
            for au, f in rep.per_au_f1:
                print(f"AU{au}\t{100 * f:.1f}")
            print(f"Avg\t{100 * rep.avg_f1:.1f}")
        elif cmd == "stats":
            d, a = pipeline.run_stats(cfg)
            print(f"duration stats for {len(d.aus)} AUs, area stats for {len(a.group_ids)} groups")
        elif cmd == "mean-box":
            mbt = pipeline.run_mean_box(cfg, args.split)
            print(f"mean boxes over {mbt.n_frames} frames")
    except (AurkError, FileNotFoundError) as e:
        print(f"aurk: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
