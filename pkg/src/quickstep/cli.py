"""Command-line entry point: run / bench / friction-compare / dump-qp."""

from __future__ import annotations

import argparse
import sys

from . import harness


def _load_scenario(args) -> harness.Scenario:
    if args.scenario:
        sc = harness.scenario_from_yaml(args.scenario)
    elif args.mode == "walk":
        sc = harness.default_walk_scenario(seed=args.seed or 0)
    elif args.mode == "friction":
        sc = harness.friction_compare_scenario(seed=args.seed or 0)
    else:
        sc = harness.default_balance_scenario(seed=args.seed or 0)
    if args.seed is not None:
        sc.seed = args.seed
    if args.solver:
        sc.solver = harness.SolverKind(args.solver)
    return sc


def _cmd_run(args) -> int:
    sc = _load_scenario(args)
    try:
        trace = harness.run_scenario(sc, dump_dir=args.out)
    except harness.ScenarioAbort as err:
        print(f"solver abort: {err}", file=sys.stderr)
        if err.qp_path:
            print(f"failing QP dumped to {err.qp_path}", file=sys.stderr)
        return 2
    paths = harness.report(trace, args.out)
    print(harness.summary_text(trace), end="")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_bench(args) -> int:
    if args.scenario:
        sc = harness.scenario_from_yaml(args.scenario)
    else:
        # Short stepping sequence so three replays stay quick.
        sc = harness.default_walk_scenario(
            spec=harness.WalkSpec(n_steps=2), seed=args.seed or 0, name="walk-bench")
    if args.solver:
        sc.solver = harness.SolverKind(args.solver)
    try:
        result = harness.benchmark(sc)
    except harness.ScenarioAbort as err:
        print(f"solver abort: {err}", file=sys.stderr)
        return 2
    paths = harness.report_benchmark(result, args.out)
    print(result.to_csv_text(), end="")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_friction(args) -> int:
    if args.scenario:
        sc = harness.scenario_from_yaml(args.scenario)
    else:
        sc = harness.friction_compare_scenario(seed=args.seed or 0)
    try:
        cmp_result = harness.compare_friction(sc, n_seeds=args.seeds)
    except harness.ScenarioAbort as err:
        print(f"solver abort: {err}", file=sys.stderr)
        return 2
    paths = harness.report_friction(cmp_result, args.out)
    print(f"multi-iteration steps, generating vectors: {int(cmp_result.multi_gv.sum())}")
    print(f"multi-iteration steps, normal + tangents:  {int(cmp_result.multi_st.sum())}")
    print(f"ratio: {cmp_result.ratio:.4f}  ci95: "
          f"[{cmp_result.ratio_ci[0]:.4f}, {cmp_result.ratio_ci[1]:.4f}]")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_dump_qp(args) -> int:
    sc = _load_scenario(args)
    try:
        path = harness.dump_step_qp(sc, args.step, args.out)
    except harness.ScenarioAbort as err:
        print(f"solver abort: {err}", file=sys.stderr)
        return 2
    print(f"qp: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quickstep",
        description="Desk-scale whole-body QP balance/walking controller harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", help="scenario YAML file")
        p.add_argument("--out", default="quickstep-out", help="output directory")
        p.add_argument("--solver", choices=[s.value for s in harness.SolverKind],
                       help="override the scenario's solver")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--mode", choices=["balance", "walk", "friction"],
                       default="balance",
                       help="built-in scenario when no file is given")

    p_run = sub.add_parser("run", help="run a scenario and write reports")
    add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="record a QP sequence and replay per solver")
    add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_fr = sub.add_parser("friction-compare",
                          help="compare cone parameterizations over seeded runs")
    add_common(p_fr)
    p_fr.add_argument("--seeds", type=int, default=10, help="number of seeded runs")
    p_fr.set_defaults(func=_cmd_friction)

    p_dump = sub.add_parser("dump-qp", help="dump one control step's QP as text")
    add_common(p_dump)
    p_dump.add_argument("--step", type=int, required=True, help="control step index")
    p_dump.set_defaults(func=_cmd_dump_qp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
