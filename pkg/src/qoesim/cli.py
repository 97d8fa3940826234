"""simctl: command-line front end for experiments.

    simctl run --scenario cfg --scheme proposed --seeds 1..10 --out results/
    simctl sweep --k 16,18,20,22,24 --schemes proposed,wo-da --out sweep/
    simctl report results/
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from . import harness, scenario
from .bench import SchemeId

SCHEMES = {s.value: s for s in SchemeId}


def parse_seeds(text: str) -> list[int]:
    """Accepts '1..10' ranges and '1,2,5' lists."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _load_cfg(args) -> scenario.ScenarioConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.scenario:
        return scenario.load_scenario(args.scenario, overrides)
    return scenario.validate_config(scenario.parse_overrides(overrides))


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    schemes = [SCHEMES[s] for s in args.scheme.split(",")]
    seeds = parse_seeds(args.seeds)
    summaries = []
    for scheme in schemes:
        summary = harness.run_experiment(
            cfg, scheme, seeds, args.out, trace_level=args.trace_level,
            policy_in=args.policy_in, policy_out=args.policy_out)
        summaries.append(summary)
        print(f"{scheme.value}: mean ELA ratio "
              f"{summary['pooled']['mean_ela_ratio']:.4f}, "
              f"median QoE {summary['pooled']['qoe_box']['median']:.3f}")
    if len(summaries) > 1:
        print(harness.comparison_table(summaries))
    return 0


def cmd_sweep(args) -> int:
    ks = [int(x) for x in args.k.split(",")]
    schemes = [SCHEMES[s] for s in args.schemes.split(",")]
    seeds = parse_seeds(args.seeds)
    for k in ks:
        for scheme in schemes:
            sub = dict(s.split("=", 1) for s in (args.set or []))
            sub["num_users"] = str(k)
            cfg = scenario.load_scenario(args.scenario, sub) if args.scenario \
                else scenario.validate_config(scenario.parse_overrides(sub))
            out = os.path.join(args.out, f"k{k}")
            summary = harness.run_experiment(cfg, scheme, seeds, out,
                                             trace_level=args.trace_level)
            print(f"k={k} {scheme.value}: mean ELA ratio "
                  f"{summary['pooled']['mean_ela_ratio']:.4f}")
    return 0


def cmd_report(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.dir, "summary_*.json")))
    if not paths:
        print(f"no summary_*.json under {args.dir}", file=sys.stderr)
        return 1
    summaries = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            summary = json.load(fh)
        harness.validate_summary(summary)
        summaries.append(summary)
    print(harness.comparison_table(summaries))
    # plot-ready CSV: one row per scheme per CDF point
    out_csv = os.path.join(args.dir, "report_cdf.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("scheme,ratio,cdf\n")
        for s in summaries:
            for v, f in s["pooled"]["ratio_cdf"]:
                fh.write(f"{s['scheme']},{v:.10g},{f:.10g}\n")
    print(f"wrote {out_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simctl",
                                 description="QoE-driven slicing simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run one or more schemes over seeds")
    run.add_argument("--scenario", help="scenario config file")
    run.add_argument("--scheme", default="proposed",
                     help="comma list of: " + ",".join(SCHEMES))
    run.add_argument("--seeds", default="1..10", help="e.g. 1..10 or 1,2,5")
    run.add_argument("--out", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="dotted-path config override")
    run.add_argument("--trace-level", choices=("full", "aggregate"),
                     default="full")
    run.add_argument("--policy-in", help="load a trained policy checkpoint")
    run.add_argument("--policy-out", help="save the trained policy checkpoint")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="user-count sweep")
    sweep.add_argument("--scenario")
    sweep.add_argument("--k", default="16,18,20,22,24")
    sweep.add_argument("--schemes", default="proposed,wo-da,pdrl-l1,hsla-l2")
    sweep.add_argument("--seeds", default="1..3")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    sweep.add_argument("--trace-level", choices=("full", "aggregate"),
                       default="aggregate")
    sweep.set_defaults(fn=cmd_sweep)

    rep = sub.add_parser("report", help="summarize an output directory")
    rep.add_argument("dir")
    rep.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
