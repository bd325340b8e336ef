"""Command-line front end: solve scenarios, run suites, simulate spikes.

Exit codes follow the subcommand contracts: ``solve`` returns 2 on
parse/validation failure and 3 on solver failure; ``verify`` returns 2 on
invalid input and 1 on a failing suite; ``simulate`` returns 2 on missing
inputs.  Every output directory receives a manifest recording the exact
command line, seeds and tool version; re-running the command reproduces all
data files byte for byte (the manifest's wall-clock stamps are the only
run-dependent bytes).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import time

from . import __version__
from .equilibrium import EquilibriumError, SolverConfig, solve_equilibrium
from .fields import Strategy
from .io_utils import load_solution_dir, write_csv, write_json, write_solution_dir
from .problem import check_one_dim_positivity, validate
from .scenario import (
    classical_reduction_scenario,
    example_2_5_scenario,
    load_scenario,
    smoke_scenario,
    trivial_scenario,
)
from .simulate import SimConfig, SpikeSpec, build_controls, evaluate_cost, simulate_closed_loop, spike_test
from .verify import suite_classical_reduction, suite_equilibrium, suite_example_2_5

EXIT_OK = 0
EXIT_SUITE_FAIL = 1
EXIT_BAD_INPUT = 2
EXIT_SOLVER_FAIL = 3


def _manifest(args, command: str, extras: dict) -> dict:
    return {
        "command": command,
        "argv": sys.argv[1:],
        "tool_version": __version__,
        "wall_clock_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        **extras,
    }


def _theta0_strategy(desc: str, spec) -> Strategy:
    if desc.startswith("const:"):
        return Strategy.constant(spec.grid, float(desc.split(":", 1)[1]))
    raise ValueError(f"--theta0 must look like const:<value>, got {desc!r}")


def _load_spec_or_exit(path, grid_steps):
    try:
        spec = load_scenario(path, grid_steps)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_INPUT)
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_INPUT)
    except (ValueError, KeyError) as exc:
        print(f"error: bad scenario: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_INPUT)
    report = validate(spec)
    if not report.ok:
        for issue in report.issues:
            print(f"error: {issue}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_INPUT)
    return spec


def cmd_solve(args) -> int:
    start = time.time()
    spec = _load_spec_or_exit(args.scenario, args.grid_steps)
    theta0 = _theta0_strategy(args.theta0, spec)

    assumption_note = None
    check = args.assumption_check
    if check and spec.is_one_dimensional():
        audit = check_one_dim_positivity(spec)
        if not audit.passed:
            # The solver itself still runs: the audit is advisory at the CLI.
            assumption_note = audit.details
            check = False
    cfg = SolverConfig(
        fp_tolerance=args.fp_tolerance,
        check_assumptions=check,
        initial_window=args.window,
        damping=args.damping,
    )
    try:
        solution = solve_equilibrium(spec, theta0, cfg)
    except EquilibriumError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAIL

    with open(args.scenario, "r", encoding="utf-8") as fh:
        scenario_doc = json.load(fh)
    if args.grid_steps is not None:
        scenario_doc["grid_steps"] = args.grid_steps
    outdir = args.out
    summary = write_solution_dir(outdir, solution, scenario_doc, args.theta0)
    if args.dump_fields:
        from .io_utils import two_time_field_rows

        for name, fieldval in (("p1_full.csv", solution.p1), ("p3_full.csv", solution.p3)):
            header, rows = two_time_field_rows(fieldval)
            write_csv(os.path.join(outdir, name), header, rows)
    if assumption_note is not None:
        summary["positivity_audit_failed"] = assumption_note
        write_json(os.path.join(outdir, "summary.json"), summary)
    write_json(
        os.path.join(outdir, "manifest.json"),
        _manifest(
            args,
            "solve",
            {
                "scenario": os.path.abspath(args.scenario),
                "out": os.path.abspath(outdir),
                "theta0": args.theta0,
                "grid_steps": spec.grid.steps,
                "threads": args.threads,
                "wall_seconds": time.time() - start,
            },
        ),
    )
    flags = solution.constraint_report.summary()
    print(f"solved: gain sup-norm {solution.theta_star.sup_norm():.6g}")
    print(
        "constraints: "
        + ", ".join(f"{k}={flags[k]}" for k in ("l2_pass", "range_pass", "psd_pass"))
    )
    print(f"outputs written to {outdir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    start = time.time()
    if args.suite == "example25":
        report = suite_example_2_5(args.grid_steps or 1000)
    elif args.suite == "classical":
        if args.target is None:
            print("error: the classical suite needs a scenario file", file=sys.stderr)
            return EXIT_BAD_INPUT
        spec = _load_spec_or_exit(args.target, args.grid_steps)
        try:
            report = suite_classical_reduction(spec)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
    elif args.suite == "equilibrium":
        if args.target is None or not os.path.isdir(args.target):
            print("error: the equilibrium suite needs a solution directory", file=sys.stderr)
            return EXIT_BAD_INPUT
        try:
            solution = load_solution_dir(args.target)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            print(f"error: cannot load solution: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
        cfg = SimConfig(paths=args.paths, seed=args.seed, x0=args.x0)
        report = suite_equilibrium(solution, cfg)
    else:  # pragma: no cover - argparse enforces choices
        return EXIT_BAD_INPUT

    doc = report.to_dict()
    doc["wall_seconds"] = time.time() - start
    out = args.out or "suite_report.json"
    write_json(out, doc)
    for c in report.checks:
        mark = "pass" if c.passed else "FAIL"
        print(f"[{mark}] {c.name}: value={c.value:.6g} bound={c.bound:.6g}")
    print(f"suite {report.suite}: {'pass' if report.passed else 'FAIL'} (report: {out})")
    return EXIT_OK if report.passed else EXIT_SUITE_FAIL


def cmd_simulate(args) -> int:
    start = time.time()
    try:
        solution = load_solution_dir(args.solution_dir)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: cannot load solution: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    spec = solution.spec
    cfg = SimConfig(paths=args.paths, seed=args.seed, t_start=args.t, x0=args.x0)
    spike = SpikeSpec(v=args.spike_v)

    outdir = args.out or args.solution_dir
    os.makedirs(outdir, exist_ok=True)

    report = spike_test(
        spec,
        solution.theta_star,
        solution.p2,
        cfg,
        spike,
        args.t,
        p1_diag=solution.p1.diagonal(),
        p3_diag=solution.p3.diagonal(),
    )
    write_csv(
        os.path.join(outdir, "spike_report.csv"),
        ["eps", "delta", "stderr", "theory_quadratic", "theory_first_order"],
        (
            [r.eps_used, r.delta, r.stderr, r.theory_quadratic, r.theory_first_order]
            for r in report.rows
        ),
    )

    bundle = simulate_closed_loop(spec, solution.theta_star, solution.p2, cfg)
    cost = evaluate_cost(spec, bundle, build_controls(spec, bundle), args.t)
    write_json(
        os.path.join(outdir, "costs.json"),
        {
            "closed_loop_cost": cost.estimate,
            "stderr": cost.stderr,
            "paths": cost.paths,
            "t": args.t,
            "spike": report.summary(),
        },
    )
    if args.dump_paths:
        cap = min(100, bundle.paths)
        header = ["path", "t"] + [f"x{i}" for i in range(spec.dims.n)] + [
            f"y{i}" for i in range(spec.dims.m)
        ] + [f"z{i}" for i in range(spec.dims.m)]
        nodes = spec.grid.nodes[bundle.t_index :]
        def rows():
            for p in range(cap):
                for r, t_node in enumerate(nodes):
                    yield [p, t_node, *bundle.X[p, r], *bundle.Y[p, r], *bundle.Z[p, r]]
        write_csv(os.path.join(outdir, "paths.csv"), header, rows())

    write_json(
        os.path.join(outdir, "manifest.json"),
        _manifest(
            args,
            "simulate",
            {
                "solution_dir": os.path.abspath(args.solution_dir),
                "paths": args.paths,
                "seed": args.seed,
                "t": args.t,
                "spike_v": args.spike_v,
                "threads": args.threads,
                "wall_seconds": time.time() - start,
            },
        ),
    )
    print(f"spike test at t={args.t}: liminf {'pass' if report.liminf_pass else 'FAIL'}, "
          f"limit {'converged' if report.limit_converged else 'not converged'}")
    print(f"closed-loop cost {cost.estimate:.8g} +- {cost.stderr:.3g}")
    return EXIT_OK


def cmd_example(args) -> int:
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    docs = {
        "example25.json": example_2_5_scenario(args.grid_steps or 1000),
        "trivial.json": trivial_scenario(),
        "smoke.json": smoke_scenario(args.grid_steps or 1000),
        "classical.json": classical_reduction_scenario(args.grid_steps or 1000),
    }
    for name, doc in docs.items():
        write_json(os.path.join(outdir, name), doc)
        print(f"wrote {os.path.join(outdir, name)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbslq",
        description="Equilibrium strategies for time-inconsistent LQ control of FBSDEs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a scenario for its equilibrium gain")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--grid-steps", type=int, default=None)
    p.add_argument("--theta0", default="const:0", help="pass-through parameter, const:<value>")
    p.add_argument("--out", default="solution", help="output directory")
    p.add_argument("--fp-tolerance", type=float, default=1e-10)
    p.add_argument("--window", type=float, default=None, help="initial window width (time units)")
    p.add_argument("--damping", type=float, default=1.0)
    p.add_argument("--no-assumption-check", dest="assumption_check", action="store_false")
    p.add_argument("--dump-fields", action="store_true",
                   help="also dump the full two-time fields (t, s, entries)")
    p.add_argument("--threads", type=int, default=1, help="worker cap (single-process build)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("target", nargs="?", help="scenario file or solution directory")
    p.add_argument("--suite", required=True, choices=["example25", "classical", "equilibrium"])
    p.add_argument("--grid-steps", type=int, default=None)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="spike-variation Monte Carlo on a solved gain")
    p.add_argument("solution_dir")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--spike-v", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--out", default=None, help="output directory (default: solution dir)")
    p.add_argument("--dump-paths", action="store_true", help="dump up to 100 paths as CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("example", help="write the built-in scenario files")
    p.add_argument("--out", default="scenarios")
    p.add_argument("--grid-steps", type=int, default=None)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
