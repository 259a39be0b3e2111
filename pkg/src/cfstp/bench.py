"""Instance generator, run metrics and the benchmark sweep harness.

Instances follow the standard random setup: locations uniform on a square
grid, integer-uniform deadlines and workloads, one coalition-value
coefficient per instance.  Sweeps run every requested solver on identical
instances and aggregate mean and sample standard deviation per metric.
"""

from __future__ import annotations

import csv
import os
import random
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import ccf, cfla, model, oracle
from .model import Agent, Instance, Location, SolveOutcome, Task

__all__ = [
    "GenParams",
    "MetricsRow",
    "BenchmarkResult",
    "SOLVERS",
    "default_agent_counts",
    "generate_instance",
    "run_solver",
    "compute_metrics",
    "instance_seed",
    "resolve_threads",
    "run_benchmark",
    "write_aggregate_csv",
    "write_runtime_csv",
    "write_long_csv",
    "write_charts",
]

# The four per-run metrics of the evaluation protocol, plus wall-clock.
METRIC_NAMES = (
    "completed_percent",
    "mean_agent_travel_time",
    "mean_task_completion_time",
    "problem_completion_time",
)
WALL_CLOCK = "wall_clock_ms"


def default_agent_counts() -> tuple[int, ...]:
    """2 to 20 in steps of 2, then 20 to 40 in steps of 5."""
    return tuple(range(2, 21, 2)) + tuple(range(25, 41, 5))


@dataclass(frozen=True)
class GenParams:
    grid_size: int = 50
    task_count: int = 300
    agent_counts: tuple[int, ...] = field(default_factory=default_agent_counts)
    deadline_range: tuple[int, int] = (5, 600)
    workload_range: tuple[int, int] = (10, 50)
    k_range: tuple[float, float] = (1.0, 2.0)
    instances_per_config: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("deadline_range", "workload_range", "k_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"bad {name}: ({lo}, {hi})")
        if self.grid_size <= 0 or self.task_count < 0:
            raise ValueError("grid_size must be positive, task_count >= 0")
        if self.instances_per_config <= 0:
            raise ValueError("instances_per_config must be positive")


def generate_instance(params: GenParams, agent_count: int, seed: int) -> Instance:
    """One random instance; byte-identical for identical arguments.

    Uses the stdlib Mersenne Twister, which produces identical streams on
    every platform for a fixed seed.  All agents share speed 1.
    """
    if agent_count < 1:
        raise ValueError("agent_count must be >= 1")
    rng = random.Random(seed)
    grid = params.grid_size
    tasks = []
    for i in range(params.task_count):
        tasks.append(Task(
            id=i,
            location=Location(rng.randrange(grid), rng.randrange(grid)),
            workload=rng.randint(*params.workload_range),
            deadline=rng.randint(*params.deadline_range),
        ))
    agents = []
    for i in range(agent_count):
        agents.append(Agent(
            id=i,
            initial_location=Location(rng.randrange(grid), rng.randrange(grid)),
            speed=1.0,
        ))
    k = rng.uniform(*params.k_range)
    return Instance(tasks=tuple(tasks), agents=tuple(agents), grid_size=grid,
                    value_coefficient=k)


def run_solver(name: str, instance: Instance,
               budget_ms: Optional[float] = None) -> SolveOutcome:
    if name == "cfla":
        return cfla.solve_cfla(instance, cfla.LookAheadVariant.CFLA,
                               budget_ms=budget_ms)
    if name == "cfla2":
        return cfla.solve_cfla(instance, cfla.LookAheadVariant.CFLA2,
                               budget_ms=budget_ms)
    if name == "ccf":
        return ccf.solve_ccf(instance, budget_ms=budget_ms)
    if name == "exact":
        t0 = time.perf_counter()
        _, schedule = oracle.solve_exact(instance)
        # Replay for the bookkeeping the metrics need.
        outcome = _replay(instance, schedule)
        outcome.wall_ms = (time.perf_counter() - t0) * 1000.0
        return outcome
    raise ValueError(f"unknown solver {name!r}")


SOLVERS = ("cfla", "cfla2", "ccf", "exact")


def _replay(instance: Instance, schedule: model.Schedule) -> SolveOutcome:
    """Re-drive a schedule's dispatches through the kernel for bookkeeping."""
    state = model.new_state(instance)
    pending = {a: list(v) for a, v in schedule.agent_routes().items()}
    horizon = max((al.time for al in schedule.allocations), default=0)
    while state.now <= horizon:
        model.process_arrivals(state, instance)
        for agent_id, visits in sorted(pending.items(), key=lambda kv: str(kv[0])):
            if not visits or state.status[agent_id] is not model.AgentStatus.FREE:
                continue
            nxt = visits[0]
            agent = instance.agents_by_id[agent_id]
            rho = instance.travel_time(agent, state.location[agent_id],
                                       instance.tasks_by_id[nxt.task].location)
            if state.now + rho >= nxt.start:
                # Leave now: any later and the recorded start would be missed.
                model.dispatch(state, instance, agent_id, nxt.task)
                visits.pop(0)
        model.step_simulation(state, instance)
        # Agents parked on a task that expired are released for their next
        # recorded visit (mirrors the oracle's route semantics).
        for agent_id, status in list(state.status.items()):
            if status is model.AgentStatus.WORKING:
                task_id = state.assignment[agent_id]
                if (state.now > instance.tasks_by_id[task_id].deadline
                        and task_id not in state.completed):
                    state.status[agent_id] = model.AgentStatus.FREE
                    del state.assignment[agent_id]
    return model.outcome_from_state(state, schedule)


@dataclass
class MetricsRow:
    solver: str
    seed: int
    agents: int
    completed_percent: float
    mean_agent_travel_time: float
    mean_task_completion_time: Optional[float]
    problem_completion_time: int
    wall_clock_ms: float
    error: str = ""


def compute_metrics(instance: Instance, outcome: SolveOutcome,
                    solver: str = "", seed: int = 0) -> MetricsRow:
    """The four evaluation metrics plus wall-clock for one run."""
    n_tasks = len(instance.tasks)
    n_agents = len(instance.agents)
    completed_percent = (100.0 * outcome.degree / n_tasks) if n_tasks else 0.0
    total_travel = sum(outcome.travel_steps.values())
    mean_travel = total_travel / n_agents if n_agents else 0.0
    if outcome.completion_times:
        mean_completion = (sum(outcome.completion_times.values())
                           / len(outcome.completion_times))
    else:
        mean_completion = None
    last_work = max((a.time for a in outcome.schedule.allocations), default=-1)
    problem_completion = max(last_work, outcome.last_travel_step, 0)
    return MetricsRow(
        solver=solver,
        seed=seed,
        agents=n_agents,
        completed_percent=completed_percent,
        mean_agent_travel_time=mean_travel,
        mean_task_completion_time=mean_completion,
        problem_completion_time=problem_completion,
        wall_clock_ms=outcome.wall_ms,
    )


def instance_seed(base_seed: int, agent_count: int, index: int) -> int:
    # Collision-free mix; keeps one instance per (agent count, index) cell.
    return (base_seed * 1_000_003 + agent_count) * 1_000_003 + index


def _bench_worker(args) -> MetricsRow:
    params, agent_count, index, solver, budget_ms = args
    seed = instance_seed(params.seed, agent_count, index)
    try:
        instance = generate_instance(params, agent_count, seed)
        outcome = run_solver(solver, instance, budget_ms=budget_ms)
        return compute_metrics(instance, outcome, solver=solver, seed=seed)
    except Exception as exc:  # recorded per-row, the sweep continues
        return MetricsRow(solver=solver, seed=seed, agents=agent_count,
                          completed_percent=0.0, mean_agent_travel_time=0.0,
                          mean_task_completion_time=None,
                          problem_completion_time=0, wall_clock_ms=0.0,
                          error=f"{type(exc).__name__}: {exc}")


@dataclass
class BenchmarkResult:
    rows: list            # long-form MetricsRow, deterministic order
    aggregates: list      # (agents, solver, metric, mean, std, n)


def _aggregate(values: list) -> tuple[float, float, int]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std, len(values)


def resolve_threads(flag: Optional[int] = None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("CFSTP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def run_benchmark(params: GenParams, solvers: Sequence[str],
                  threads: Optional[int] = None,
                  budget_ms: Optional[float] = None) -> BenchmarkResult:
    """Run every solver on identical instances for each (agent count, seed)
    cell and aggregate per (agent count, solver, metric)."""
    specs = [
        (params, agent_count, index, solver, budget_ms)
        for agent_count in params.agent_counts
        for index in range(params.instances_per_config)
        for solver in solvers
    ]
    workers = resolve_threads(threads)
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_worker, specs, chunksize=1))
    else:
        rows = [_bench_worker(spec) for spec in specs]

    rows.sort(key=lambda r: (r.agents, r.solver, r.seed))
    aggregates = []
    for agent_count in sorted(set(params.agent_counts)):
        for solver in solvers:
            cell = [r for r in rows
                    if r.agents == agent_count and r.solver == solver
                    and not r.error]
            for metric in METRIC_NAMES + (WALL_CLOCK,):
                values = [getattr(r, metric) for r in cell
                          if getattr(r, metric) is not None]
                if not values:
                    continue
                mean, std, n = _aggregate(values)
                aggregates.append((agent_count, solver, metric, mean, std, n))
    return BenchmarkResult(rows=rows, aggregates=aggregates)


def write_aggregate_csv(result: BenchmarkResult, path) -> None:
    """Aggregate CSV over the four deterministic metrics; wall-clock is kept
    out so identical sweeps produce identical bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agents", "solver", "metric", "mean", "std", "n"])
        for agents, solver, metric, mean, std, n in result.aggregates:
            if metric == WALL_CLOCK:
                continue
            writer.writerow([agents, solver, metric,
                             f"{mean:.6f}", f"{std:.6f}", n])


def write_runtime_csv(result: BenchmarkResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agents", "solver", "metric", "mean", "std", "n"])
        for agents, solver, metric, mean, std, n in result.aggregates:
            if metric != WALL_CLOCK:
                continue
            writer.writerow([agents, solver, metric,
                             f"{mean:.6f}", f"{std:.6f}", n])


def write_long_csv(result: BenchmarkResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agents", "solver", "seed", "completed_percent",
                         "mean_agent_travel_time", "mean_task_completion_time",
                         "problem_completion_time", "wall_clock_ms", "error"])
        for r in result.rows:
            writer.writerow([
                r.agents, r.solver, r.seed,
                f"{r.completed_percent:.6f}",
                f"{r.mean_agent_travel_time:.6f}",
                "" if r.mean_task_completion_time is None
                else f"{r.mean_task_completion_time:.6f}",
                r.problem_completion_time,
                f"{r.wall_clock_ms:.3f}",
                r.error,
            ])


def write_charts(result: BenchmarkResult, outdir) -> list:
    """One SVG line chart per metric: mean with a +-std band per solver."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    written = []
    solvers = sorted({solver for _, solver, _, _, _, _ in result.aggregates})
    for metric in METRIC_NAMES:
        fig, ax = plt.subplots(figsize=(6, 4))
        for solver in solvers:
            points = [(agents, mean, std)
                      for agents, s, m, mean, std, _ in result.aggregates
                      if s == solver and m == metric]
            if not points:
                continue
            points.sort()
            xs = [p[0] for p in points]
            means = [p[1] for p in points]
            stds = [p[2] for p in points]
            ax.plot(xs, means, marker="o", label=solver)
            ax.fill_between(xs,
                            [m - s for m, s in zip(means, stds)],
                            [m + s for m, s in zip(means, stds)],
                            alpha=0.2)
        ax.set_xlabel("agents")
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend()
        fig.tight_layout()
        path = outdir / f"{metric}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
