"""Command-line front end: generate, solve, validate and benchmark.

Exit codes: 0 ok, 2 input error, 3 budget interrupt (schedule still
written), 4 oracle size-guard refusal.
"""

from __future__ import annotations

import argparse
import secrets
import sys
import time
from pathlib import Path

from . import bench, model
from .oracle import OracleLimitError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERRUPTED = 3
EXIT_GUARD = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfstp",
        description="Coalition-formation scheduling: instance generation, "
                    "heuristic/exact solving, validation and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a random instance file")
    gen.add_argument("--agents", type=int, default=10)
    gen.add_argument("--tasks", type=int, default=300)
    gen.add_argument("--grid-size", type=int, default=50)
    gen.add_argument("--deadline-range", type=int, nargs=2, default=(5, 600),
                     metavar=("LO", "HI"))
    gen.add_argument("--workload-range", type=int, nargs=2, default=(10, 50),
                     metavar=("LO", "HI"))
    gen.add_argument("--k-range", type=float, nargs=2, default=(1.0, 2.0),
                     metavar=("LO", "HI"))
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("-o", "--output", required=True)

    solve = sub.add_parser("solve", help="solve an instance file")
    solve.add_argument("instance")
    solve.add_argument("--algorithm", choices=("cfla", "cfla2", "ccf", "exact"),
                       default="ccf")
    solve.add_argument("--budget-ms", type=float, default=None,
                       help="anytime wall-clock budget in milliseconds")
    solve.add_argument("-o", "--output", default=None,
                       help="schedule JSON output path")

    val = sub.add_parser("validate", help="validate a schedule against an instance")
    val.add_argument("instance")
    val.add_argument("schedule")

    bench_p = sub.add_parser("bench", help="run a benchmark sweep")
    bench_p.add_argument("--tasks", type=int, default=300)
    bench_p.add_argument("--agents", type=str, default=None,
                         help="comma-separated agent counts (default: paper sweep)")
    bench_p.add_argument("--seeds", type=int, default=100,
                         help="instances per agent count")
    bench_p.add_argument("--seed", type=int, default=0, help="base seed")
    bench_p.add_argument("--grid-size", type=int, default=50)
    bench_p.add_argument("--solvers", type=str, default="cfla,cfla2,ccf")
    bench_p.add_argument("--budget-ms", type=float, default=None)
    bench_p.add_argument("--threads", type=int, default=None,
                         help="worker processes (or env CFSTP_THREADS)")
    bench_p.add_argument("-o", "--outdir", required=True)
    return parser


def _cmd_gen(args) -> int:
    seed = args.seed
    if seed is None:
        seed = secrets.randbelow(2 ** 31)
        print(f"seed: {seed}", file=sys.stderr)
    try:
        params = bench.GenParams(
            grid_size=args.grid_size,
            task_count=args.tasks,
            deadline_range=tuple(args.deadline_range),
            workload_range=tuple(args.workload_range),
            k_range=tuple(args.k_range),
            seed=seed,
        )
        instance = bench.generate_instance(params, args.agents, seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        model.save_instance(instance, args.output)
    except OSError as exc:
        print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {args.output} ({args.tasks} tasks, {args.agents} agents, "
          f"seed {seed})")
    return EXIT_OK


def _load_instance(path: str):
    try:
        return model.load_instance(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return None


def _cmd_solve(args) -> int:
    instance = _load_instance(args.instance)
    if instance is None:
        return EXIT_INPUT
    try:
        outcome = bench.run_solver(args.algorithm, instance,
                                   budget_ms=args.budget_ms)
    except OracleLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    if args.output:
        try:
            model.save_schedule(outcome.schedule, args.output)
        except OSError as exc:
            print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
            return EXIT_INPUT
    row = bench.compute_metrics(instance, outcome, solver=args.algorithm)
    print("solver,completed_percent,mean_agent_travel_time,"
          "mean_task_completion_time,problem_completion_time,wall_clock_ms")
    completion = ("" if row.mean_task_completion_time is None
                  else f"{row.mean_task_completion_time:.3f}")
    print(f"{row.solver},{row.completed_percent:.3f},"
          f"{row.mean_agent_travel_time:.3f},{completion},"
          f"{row.problem_completion_time},{row.wall_clock_ms:.3f}")
    return EXIT_INTERRUPTED if outcome.interrupted else EXIT_OK


def _cmd_validate(args) -> int:
    instance = _load_instance(args.instance)
    if instance is None:
        return EXIT_INPUT
    try:
        schedule = model.load_schedule(args.schedule)
    except OSError as exc:
        print(f"error: cannot read {args.schedule}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {args.schedule}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = model.validate_schedule(instance, schedule)
    for violation in report.structural_violations:
        print(f"structural: {violation.subject}: {violation.description}")
    for violation in report.spatial_violations:
        print(f"spatial: {violation.subject}: {violation.description}")
    degree = model.solution_degree(instance, schedule)
    print(f"degree: {degree}")
    n_bad = len(report.structural_violations) + len(report.spatial_violations)
    print("valid" if n_bad == 0 else f"{n_bad} violations")
    return EXIT_OK if n_bad == 0 else 1


def _cmd_bench(args) -> int:
    if args.agents:
        try:
            agent_counts = tuple(int(x) for x in args.agents.split(","))
        except ValueError:
            print(f"error: bad --agents list {args.agents!r}", file=sys.stderr)
            return EXIT_INPUT
    else:
        agent_counts = bench.default_agent_counts()
    solvers = tuple(s.strip() for s in args.solvers.split(",") if s.strip())
    for solver in solvers:
        if solver not in bench.SOLVERS:
            print(f"error: unknown solver {solver!r}", file=sys.stderr)
            return EXIT_INPUT
    try:
        params = bench.GenParams(
            grid_size=args.grid_size,
            task_count=args.tasks,
            agent_counts=agent_counts,
            instances_per_config=args.seeds,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    outdir = Path(args.outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {outdir}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    t0 = time.perf_counter()
    result = bench.run_benchmark(params, solvers, threads=args.threads,
                                 budget_ms=args.budget_ms)
    bench.write_aggregate_csv(result, outdir / "aggregate.csv")
    bench.write_runtime_csv(result, outdir / "runtime.csv")
    bench.write_long_csv(result, outdir / "runs.csv")
    bench.write_charts(result, outdir)
    elapsed = time.perf_counter() - t0
    failures = [r for r in result.rows if r.error]
    print(f"wrote {outdir}/aggregate.csv, runtime.csv, runs.csv and charts "
          f"({len(result.rows)} runs, {len(failures)} failed) "
          f"in {elapsed:.1f}s")
    if failures and len(failures) == len(result.rows):
        return 1
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {
        "gen": _cmd_gen,
        "solve": _cmd_solve,
        "validate": _cmd_validate,
        "bench": _cmd_bench,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
