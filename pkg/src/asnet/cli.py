"""Command line entry point.

Exit codes: 0 success, 2 configuration problems (including malformed
checkpoints and bad arguments), 3 file system problems, 4 violated
runtime invariants (including gradient check failures).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, InvariantError
from .gradcheck import run_suite


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asnet",
        description="train, evaluate, and compare attention-control agents")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment config over its seeds")
    train.add_argument("--config", required=True, help="experiment JSON file")
    train.add_argument("--out", default=None, help="output directory (overrides config)")
    train.add_argument("--seeds", default=None,
                       help="comma-separated seed override, e.g. 0,1,2")
    train.add_argument("--episodes", type=int, default=None,
                       help="training episodes per seed (overrides config)")
    train.add_argument("--continual", action="store_true",
                       help="turn on the escalating ghost schedule")
    train.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: ASNET_THREADS or 1)")

    evaluate = sub.add_parser("eval", help="evaluate a saved checkpoint")
    evaluate.add_argument("--checkpoint", required=True,
                          help="checkpoint path stem (without .json/.bin)")
    evaluate.add_argument("--mode", choices=["iid", "ood"], default="iid")
    evaluate.add_argument("--episodes", type=int, default=100)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None,
                          help="also write per-episode rewards to this CSV")

    compare = sub.add_parser("compare", help="aggregate several run directories")
    compare.add_argument("runs", nargs="+", help="directories written by asnet train")
    compare.add_argument("--emit", default="csv,svg",
                         help="comma-separated outputs to write: csv, svg")
    compare.add_argument("--out", required=True, help="directory for the merged outputs")

    gradcheck = sub.add_parser("gradcheck",
                               help="finite-difference check of every layer")
    gradcheck.add_argument("--instances", type=int, default=12,
                           help="random instances per layer case")
    gradcheck.add_argument("--seed", type=int, default=0)
    return parser


def _print_summaries(summaries) -> None:
    for s in summaries:
        print(f"{s.task} {s.hypothesis} {s.phase}: "
              f"{s.mean_reward:.6g} +- {s.std_reward:.6g} over {s.n_seeds} seed(s)")


def cmd_train(args) -> int:
    config = harness.ExperimentConfig.from_json(args.config)
    if args.episodes is not None:
        if args.episodes < 1:
            raise ConfigError(f"episodes must be at least 1, got {args.episodes}")
        config.episodes = args.episodes
    if args.seeds is not None:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError(f"bad seed list {args.seeds!r}") from None
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigError(f"seed list {args.seeds!r} is empty or has duplicates")
        config.seeds = seeds
    if args.continual:
        if config.task != "ghostrun":
            raise ConfigError("continual mode only applies to the ghostrun task")
        config.continual = True
    result = harness.run_experiment(config, out_dir=args.out, threads=args.threads)
    _print_summaries(result.summaries)
    print(f"wrote {result.out_dir}")
    return 0


def cmd_eval(args) -> int:
    summary = harness.evaluate_checkpoint(args.checkpoint, args.mode,
                                          args.episodes, args.seed)
    print(f"{args.mode} reward over {summary.episodes} episode(s): "
          f"{summary.mean_reward:.6g} +- {summary.std_reward:.6g}")
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["episode", "episode_reward"])
            for i, r in enumerate(summary.rewards):
                writer.writerow([str(i), harness.fmt_float(float(r))])
        print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    emit = tuple(part.strip() for part in args.emit.split(",") if part.strip())
    bad = [part for part in emit if part not in ("csv", "svg")]
    if bad or not emit:
        raise ConfigError(f"--emit takes csv and/or svg, got {args.emit!r}")
    rows = []
    for run in args.runs:
        rows.extend(harness.load_run_rows(run))
    out = Path(args.out)
    summaries = harness.aggregate_and_emit(out, rows, emit=emit)
    _print_summaries(summaries)
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise ConfigError(f"instances must be at least 1, got {args.instances}")
    results = run_suite(instances_per_case=args.instances, seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.instances} instances, "
              f"max rel err {r.max_rel_error:.3g}, {r.seconds:.2f}s")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise InvariantError(f"gradient check failed for: {', '.join(failed)}")
    print(f"all {len(results)} layer cases pass")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
