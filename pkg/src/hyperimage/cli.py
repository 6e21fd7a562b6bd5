"""Command-line entry point: ``hyperimage <subcommand> [--config ...]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import runner, synth
from .imageops import write_pnm

STAGES = {
    "train-stage1": "train_stage1",
    "train-rank": "train_rank",
    "extract": "extract",
    "train-stage2": "train_stage2",
    "baseline-avg": "baseline_avg",
    "baseline-e2e": "baseline_e2e",
    "evaluate": "evaluate",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed (u64), overrides the config")
    p.add_argument("--out", help="output directory, overrides the config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for splits")
    p.add_argument("--profile", choices=("paper", "desk"), help="network/budget profile")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="hyperimage", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("synth-gen", parents=[common], help="dump a synthetic dataset as PGM + manifest")
    g.add_argument("--count", type=int, default=3000)
    for name in STAGES:
        s = sub.add_parser(name, parents=[common], help=f"run the {name} stage on every split")
        s.add_argument("--split", type=int, help="only this split index")
    sub.add_parser("run", parents=[common], help="full experiment: stages, baselines, summary, manifest")
    r = sub.add_parser("report", parents=[common], help="print the method comparison table")
    r.add_argument("run_dir", nargs="?", help="experiment directory (default: from --config)")
    r.add_argument("--statistic", choices=("mean", "median"))
    return parser


def _config(args) -> dict:
    if not args.config:
        raise runner.ConfigError("--config is required for this subcommand")
    return runner.load_config(args.config, profile=args.profile, seed=args.seed, out=args.out)


def synth_gen(args) -> int:
    out = Path(args.out or "synthetic")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    rows, meta = [], []
    for i, s in enumerate(synth.generate_dataset(seed, args.count)):
        name = f"s{i:05d}.pgm"
        write_pnm(out / name, s.image)
        rows.append([f"s{i:05d}", name, name, repr(s.score), f"s{i:05d}"])
        meta.append(json.dumps({"id": f"s{i:05d}", **s.metadata()}, sort_keys=True))
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "ref_path", "dist_path", "score", "group"])
        w.writerows(rows)
    (out / "metadata.jsonl").write_text("\n".join(meta) + "\n", encoding="utf-8")
    print(f"wrote {args.count} samples to {out}")
    return 0


def run_stage(args) -> int:
    cfg = _config(args)
    data, plans = runner.prepare(cfg)
    root = runner.experiment_dir(cfg)
    for plan in plans:
        if args.split is not None and plan.index != args.split:
            continue
        getattr(runner.SplitRun(cfg, data, plan, root), STAGES[args.command])()
    if args.command == "evaluate":
        runner.write_summary(root, cfg["statistic"])
    return 0


def report(args) -> int:
    if args.run_dir:
        root, stat = Path(args.run_dir), args.statistic or "mean"
    else:
        cfg = _config(args)
        root, stat = runner.experiment_dir(cfg), args.statistic or cfg["statistic"]
    # print only: the run directory is already sealed by its manifest
    sys.stdout.write(runner.emit_report(root, stat))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-gen":
            return synth_gen(args)
        if args.command == "run":
            return runner.run(_config(args), jobs=args.jobs)
        if args.command == "report":
            return report(args)
        return run_stage(args)
    except runner.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # any stage failure: nonzero exit, marker stays in place
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
