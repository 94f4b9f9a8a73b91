"""Command-line entry point: ``python -m fedwelfare <command>``."""
from __future__ import annotations

import argparse
import json
import sys

from .harness.config import load_preset, resolve_config
from .harness.experiment import aggregate_dir, merge_tables, plot_report, run_experiment, run_sweep
from .harness.simulation import run_replication


def _mu_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def cmd_run(args) -> int:
    cfg = resolve_config(args.config).with_overrides(
        mu=args.mu, replications=args.reps, base_seed=args.seed, output_dir=args.out)
    report = run_experiment(cfg, args.out)
    print(json.dumps(report["elimination_round"], indent=2))
    return 0 if not report["replications"]["failed"] else 1


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.config).with_overrides(replications=args.reps, base_seed=args.seed)
    summary = run_sweep(cfg, _mu_list(args.mu), args.out)
    for entry in summary["sweep"]:
        rounds = ", ".join(f"{c}:{m:.2f}" for c, m in entry["elimination_round"].items())
        print(f"mu={entry['mu']:<8g} elimination rounds {rounds}")
    return 0


def cmd_toy(args) -> int:
    cfg = load_preset("toy-example").with_overrides(mu=args.mu)
    res = run_replication(cfg)
    print(f"mu = {args.mu:g}")
    for r in res.records:
        print(f"round {r.round}: A(t-1)={list(r.previous)} candidates={list(r.candidates)} "
              f"-> A(t)={list(r.active)} objective={r.objective:.6g}")
        print("  client  utility     cost   profit        q   payoff       mt  active")
        for n in sorted(r.rows):
            e = r.rows[n]
            print(f"  C{n:<5} {e.utility:8.4f} {e.cost:8.4f} {e.profit:8.4f} {e.q:8.4f} "
                  f"{e.payoff:8.4f} {e.mt:8.4f}  {int(e.active)}")
    print(f"TSW  = {res.metrics.tsw[-1]:.6g}")
    print(f"TSFI = {res.metrics.tsfi[-1]:.6g} ({res.metrics.semantics})")
    return 0


def cmd_report(args) -> int:
    if args.merge:
        merge_tables(args.input)
    report = aggregate_dir(args.input)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.svg:
        with open(f"{args.input}/report.json", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        for path in plot_report(args.input):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedwelfare", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run all replications of one scenario")
    r.add_argument("--config", required=True, help="preset name or JSON config path")
    r.add_argument("--out", required=True)
    r.add_argument("--reps", type=int)
    r.add_argument("--mu", type=float)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run one scenario for several mu values")
    s.add_argument("--config", required=True)
    s.add_argument("--mu", required=True, help="comma-separated list, e.g. 0,0.05,0.1")
    s.add_argument("--out", required=True)
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("toy-example", help="print the three-client worked example")
    t.add_argument("--mu", type=float, default=0.2)
    t.set_defaults(func=cmd_toy)

    a = sub.add_parser("report", help="aggregate the CSVs of an output directory")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--merge", action="store_true", help="re-merge per-replication CSVs first")
    a.add_argument("--svg", action="store_true", help="also write SVG charts")
    a.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
