"""Command-line harness.

Subcommands: run, verify-regret, aggregate, scale-probe, plot-data. Exit code
is 0 on success and nonzero when a check fails or an invariant is violated.
ECOFAIR_THREADS bounds the per-seed worker pool of `run`.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import BASELINE_MODES, load_run_config


def _cmd_run(args) -> int:
    from .harness import run_experiment
    cfg = load_run_config(args.config, seeds=tuple(args.seed or ()),
                          mode=args.mode, out_dir=args.out)
    by_seed = run_experiment(cfg)
    n_ep = len(next(iter(by_seed.values())))
    print(f"mode={cfg.mode} seeds={list(by_seed)} episodes={n_ep} "
          f"-> {cfg.out_dir}")
    return 0


def _cmd_verify_regret(args) -> int:
    from .regret import verify_regret
    report = verify_regret(args.kind, args.steps, seed=args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_aggregate(args) -> int:
    import os

    from .harness import EpisodeRecord, aggregate
    from .reporting import _seed_files, read_records_csv, write_aggregate_csv
    by_seed = {}
    for path in _seed_files(args.in_dir):
        rows = read_records_csv(path)
        records = [EpisodeRecord(
            episode=int(r["episode"]), seed=int(r["seed"]),
            total_return=r["total_return"], emissions_total=r["emissions_total"],
            cap=r["cap"], violation_excess=r["violation_excess"],
            gini=r["gini"], minmax=r["minmax"], throughput=int(r["throughput"]),
            waiting_hours=int(r["waiting_hours"]),
            lambda_final=r["lambda_final"], beta_final=r["beta_final"],
            max_mu=r["max_mu"], max_nu=r["max_nu"]) for r in rows]
        by_seed[records[0].seed] = records
    summary = aggregate(by_seed)
    out = os.path.join(args.in_dir, "aggregate.csv")
    write_aggregate_csv(out, summary)
    print(f"wrote {out} ({len(summary)} metrics, {len(by_seed)} seeds)")
    return 0


def _cmd_scale_probe(args) -> int:
    from .harness import scaling_probe
    cfg = load_run_config(args.config)
    counts = sorted(int(x) for x in args.agents.split(","))
    result = scaling_probe(cfg, counts, episodes=args.episodes)
    print("agents,seconds_per_episode")
    for n, secs in result["timings"]:
        print(f"{n},{secs:.4f}")
    print(f"fitted exponent: {result['exponent']:.3f}")
    return 0


def _cmd_plot_data(args) -> int:
    from .reporting import write_plot_data
    written = write_plot_data(args.in_dir, args.out, render=not args.no_figures)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecofair",
        description="Maritime fleet twin with priced emission budgets and "
                    "fairness scheduling.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded experiment")
    p.add_argument("--config", required=True, help="run-config JSON path")
    p.add_argument("--seed", type=int, action="append",
                   help="override config seeds (repeatable)")
    p.add_argument("--mode", choices=BASELINE_MODES, default=None)
    p.add_argument("--out", default=None, help="override output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify-regret", help="run a responsive-actor fixture")
    p.add_argument("--kind", choices=("emissions", "fairness"), required=True)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify_regret)

    p = sub.add_parser("aggregate", help="re-aggregate per-seed CSVs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("scale-probe", help="episode wall-clock vs fleet size")
    p.add_argument("--config", required=True)
    p.add_argument("--agents", default="10,20,40,80")
    p.add_argument("--episodes", type=int, default=3)
    p.set_defaults(func=_cmd_scale_probe)

    p = sub.add_parser("plot-data",
                       help="per-episode metric series plus report figures")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true",
                   help="emit only the CSV series")
    p.set_defaults(func=_cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # invariant failures exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
