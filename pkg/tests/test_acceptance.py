"""Acceptance gate: one test per criterion, each printing a PASS line.

The heavyweight benchmark sweep (300 tasks, agents 10-40, 20 seeds, all
three heuristics) is computed once and shared by the criteria that read
different columns of it.
"""

import itertools
import random
import statistics

import pytest

from cfstp import bench, cfla, model
from cfstp.bench import GenParams, generate_instance, instance_seed, run_solver
from cfstp.cfla import LookAheadVariant, ecf_coalition, legal_agent_allocations
from cfstp.ccf import solve_ccf
from cfstp.model import Schedule, validate_schedule
from cfstp.oracle import solve_exact

from conftest import agent, instance, random_tiny_instance, task

HEURISTICS = ("cfla", "cfla2", "ccf")


def announce(capsys, line):
    with capsys.disabled():
        print(f"\n{line}", flush=True)


# ---------------------------------------------------------------------------
# Shared heavy sweep: 300 tasks, agents {10, 20, 30, 40}, 20 seeds.
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def figure_sweep():
    params = GenParams(task_count=300, agent_counts=(10, 20, 30, 40),
                       instances_per_config=20, seed=0)
    result = bench.run_benchmark(params, HEURISTICS, threads=1)
    assert not any(r.error for r in result.rows)
    return result.rows


def _mean(rows, solver, agents, attr):
    values = [getattr(r, attr) for r in rows
              if r.solver == solver and r.agents == agents]
    assert len(values) == 20
    return statistics.fmean(values)


def test_criterion_1_feasibility_suite(capsys):
    """All three heuristics produce violation-free schedules, including
    budget-interrupted runs, across 100 seeded instances per solver."""
    params = GenParams(task_count=50)
    agent_cycle = (5, 10, 20)
    checked = 0
    for solver in HEURISTICS:
        for i in range(100):
            agents = agent_cycle[i % 3]
            inst = generate_instance(params, agents,
                                     instance_seed(100, agents, i))
            budget = 5.0 if i % 10 == 0 else None  # sprinkle interruptions
            out = run_solver(solver, inst, budget_ms=budget)
            report = validate_schedule(inst, out.schedule)
            assert report.structural_violations == [], (solver, i)
            assert report.spatial_violations == [], (solver, i)
            checked += 1
    assert checked == 300
    announce(capsys, "[PASS] criterion 1: feasibility suite "
                     "(300 runs, zero structural/spatial violations)")


def test_criterion_2_oracle_dominance(capsys):
    """The exhaustive oracle never scores below a heuristic on 200 tiny
    instances, and beats at least one of them somewhere."""
    rng = random.Random(2)
    strict = 0
    for _ in range(200):
        inst = random_tiny_instance(rng)
        exact_degree, schedule = solve_exact(inst)
        assert validate_schedule(inst, schedule).ok
        for solver in HEURISTICS:
            h = run_solver(solver, inst).degree
            assert h <= exact_degree
            if h < exact_degree:
                strict += 1
    assert strict >= 1

    # Fixed regression: nearest-first greediness loses the urgent far task.
    inst = instance([task("v1", 1, 0, 1, 10), task("v2", 3, 0, 1, 3)],
                    [agent("a", 0, 0)])
    assert solve_ccf(inst).degree == 1
    assert solve_exact(inst)[0] == 2
    announce(capsys, f"[PASS] criterion 2: oracle dominance "
                     f"(200 instances, {strict} strict gaps, regression case "
                     f"1 vs 2)")


def test_criterion_3_completion_trend(figure_sweep, capsys):
    """Completion-percentage ordering at scale: the cluster solver keeps up
    with (or beats) the look-ahead solvers as agents grow."""
    lines = []
    for agents in (10, 20, 30, 40):
        ccf_mean = _mean(figure_sweep, "ccf", agents, "completed_percent")
        cfla_mean = _mean(figure_sweep, "cfla", agents, "completed_percent")
        cfla2_mean = _mean(figure_sweep, "cfla2", agents, "completed_percent")
        lines.append(f"  agents={agents}: ccf={ccf_mean:.1f} "
                     f"cfla={cfla_mean:.1f} cfla2={cfla2_mean:.1f}")
        assert ccf_mean >= cfla_mean - 5.0, lines[-1]
        if agents >= 20:
            assert ccf_mean >= cfla2_mean - 5.0, lines[-1]
    announce(capsys, "[PASS] criterion 3: completion trend\n"
                     + "\n".join(lines))


def test_criterion_4_travel_time_gap(figure_sweep, capsys):
    """Proximity-driven clustering cuts mean agent travel time to at most
    0.6x the look-ahead solver's at 20 agents."""
    ccf_travel = _mean(figure_sweep, "ccf", 20, "mean_agent_travel_time")
    cfla_travel = _mean(figure_sweep, "cfla", 20, "mean_agent_travel_time")
    assert ccf_travel <= 0.6 * cfla_travel, (ccf_travel, cfla_travel)
    announce(capsys, f"[PASS] criterion 4: travel-time gap "
                     f"(ccf {ccf_travel:.1f} <= 0.6 x cfla {cfla_travel:.1f})")


def test_criterion_5_runtime_gap(figure_sweep, capsys):
    """At 40 agents the cluster solver is at least two orders of magnitude
    faster than both look-ahead variants (5 seeds)."""
    def mean_wall(solver):
        values = [r.wall_clock_ms for r in figure_sweep
                  if r.solver == solver and r.agents == 40][:5]
        assert len(values) == 5
        return statistics.fmean(values)

    ccf_ms = mean_wall("ccf")
    ratios = {}
    for solver in ("cfla", "cfla2"):
        ratios[solver] = mean_wall(solver) / ccf_ms
        assert ratios[solver] >= 100.0, (solver, ratios[solver])
    announce(capsys, f"[PASS] criterion 5: runtime gap "
                     f"(ccf {ccf_ms:.0f} ms; {ratios['cfla']:.0f}x vs cfla, "
                     f"{ratios['cfla2']:.0f}x vs cfla2)")


def test_criterion_6_anytime_monotonicity(capsys):
    """Interrupting a run after any simulated step leaves a validator-clean
    schedule whose degree never decreases as the cutoff grows.

    Solvers append work allocations in simulated-time order, so the schedule
    an interruption at step t would return is exactly the prefix with
    time <= t - 1."""
    params = GenParams(task_count=50)
    runs = 0
    for i in range(10):
        inst = generate_instance(params, 10, instance_seed(600, 10, i))
        for solver in ("ccf", "cfla2"):
            out = run_solver(solver, inst)
            prev = 0
            for t in range(out.stop_time + 1):
                prefix = Schedule([a for a in out.schedule.allocations
                                   if a.time < t])
                assert validate_schedule(inst, prefix).ok
                degree = model.solution_degree(inst, prefix)
                assert degree >= prev, (solver, i, t)
                prev = degree
            assert prev == out.degree
            runs += 1
    assert runs == 20
    announce(capsys, "[PASS] criterion 6: anytime monotonicity "
                     "(20 runs, per-step prefixes clean and non-decreasing)")


def test_criterion_7_ccf_scaling(capsys):
    """Doubling the task count from 150 to 300 at 20 agents raises the
    cluster solver's median wall-clock by at most 2.5x."""
    medians = {}
    for tasks in (150, 300):
        params = GenParams(task_count=tasks)
        instances = [generate_instance(params, 20, instance_seed(700, 20, i))
                     for i in range(10)]
        run_solver("ccf", instances[0])  # warm-up, excluded from timing
        medians[tasks] = statistics.median(
            run_solver("ccf", inst).wall_ms for inst in instances)
    ratio = medians[300] / medians[150]
    assert ratio <= 2.5, medians
    announce(capsys, f"[PASS] criterion 7: scaling "
                     f"(median {medians[150]:.1f} ms -> {medians[300]:.1f} ms,"
                     f" ratio {ratio:.2f} <= 2.5)")


def test_criterion_8_generator_statistics(capsys):
    """Sampled deadlines and workloads match their distribution means."""
    params = GenParams(task_count=500)
    deadlines, workloads = [], []
    for i in range(20):  # 20 x 500 = 10,000 tasks
        inst = generate_instance(params, 2, instance_seed(800, 2, i))
        deadlines.extend(t.deadline for t in inst.tasks)
        workloads.extend(t.workload for t in inst.tasks)
    assert len(deadlines) == 10_000
    mean_d = statistics.fmean(deadlines)
    mean_w = statistics.fmean(workloads)
    assert abs(mean_d - 302.5) <= 0.02 * 302.5, mean_d
    assert abs(mean_w - 30.0) <= 0.02 * 30.0, mean_w
    announce(capsys, f"[PASS] criterion 8: generator statistics "
                     f"(mean deadline {mean_d:.1f}, mean workload {mean_w:.2f})")


# ---------------------------------------------------------------------------
# Criterion 9: the property suites, with fixed seeds.
# ---------------------------------------------------------------------------

def _brute_force_min_size(inst, state, legal, v):
    candidates = legal.agents_for_task(v.id)
    workload = state.remaining_workload[v.id]
    for size in range(1, len(candidates) + 1):
        for combo in itertools.combinations(candidates, size):
            arrivals = sorted(arr for _, arr in combo)
            done = 0.0
            for t in range(arrivals[0], v.deadline + 1):
                done += sum(1 for arr in arrivals
                            if arr <= t) * inst.value_coefficient
                if done >= workload:
                    return size
    return None


def _ecf_minimality(rng):
    for _ in range(40):
        n_a = rng.randint(1, 10)
        tasks = [task("v", rng.randrange(8), rng.randrange(8),
                      rng.randint(1, 20), rng.randint(1, 14))]
        agents = [agent(i, rng.randrange(8), rng.randrange(8))
                  for i in range(n_a)]
        inst = instance(tasks, agents, grid_size=8, k=rng.choice([1.0, 1.5]))
        state = model.new_state(inst)
        legal = legal_agent_allocations(state, inst)
        expected = _brute_force_min_size(inst, state, legal, inst.tasks[0])
        result = ecf_coalition(inst.tasks[0], legal, state, inst)
        if expected is None:
            assert result is None
        else:
            assert result is not None and len(result[0]) == expected


def _random_instance(rng, n_tasks=8, n_agents=4, grid=10, d_max=30):
    tasks = [task(i, rng.randrange(grid), rng.randrange(grid),
                  rng.randint(1, 8), rng.randint(1, d_max))
             for i in range(n_tasks)]
    agents = [agent(i, rng.randrange(grid), rng.randrange(grid))
              for i in range(n_agents)]
    return instance(tasks, agents, grid_size=grid, k=rng.choice([1.0, 1.5]))


def _dispatch_counts(solve):
    dispatched = []
    original = model.dispatch

    def recording(state, instance_, agent_id, task_id):
        dispatched.append((state.now, agent_id, task_id))
        return original(state, instance_, agent_id, task_id)

    model.dispatch = recording
    try:
        solve()
    finally:
        model.dispatch = original
    return dispatched


def _one_task_per_step(rng):
    for variant in LookAheadVariant:
        for _ in range(8):
            inst = _random_instance(rng)
            events = _dispatch_counts(lambda: cfla.solve_cfla(inst, variant))
            per_step = {}
            for now, _, task_id in events:
                per_step.setdefault(now, set()).add(task_id)
            assert all(len(v) == 1 for v in per_step.values())


def _at_most_all_agents_per_step(rng):
    for _ in range(10):
        inst = _random_instance(rng)
        events = _dispatch_counts(lambda: solve_ccf(inst))
        per_step = {}
        for now, agent_id, _ in events:
            per_step.setdefault(now, []).append(agent_id)
        for agents_dispatched in per_step.values():
            assert len(agents_dispatched) <= len(inst.agents)
            assert len(set(agents_dispatched)) == len(agents_dispatched)


def _kernel_delta_agreement(rng):
    for _ in range(40):
        inst = _random_instance(rng, n_tasks=4, n_agents=3, grid=6, d_max=15)
        state = model.new_state(inst)
        allocs = []
        while state.now <= inst.d_max:
            model.process_arrivals(state, inst)
            model.release_expired_workers(state, inst)
            for aid in state.free_agents():
                open_tasks = [t for t in inst.tasks
                              if t.id not in state.completed]
                if open_tasks and rng.random() < 0.7:
                    model.dispatch(state, inst, aid,
                                   rng.choice(open_tasks).id)
            model.step_simulation(state, inst, allocs)
        for t in inst.tasks:
            assert model.task_completed(
                t, allocs, value_coefficient=inst.value_coefficient) \
                == (t.id in state.completed)


def _variant_equivalence(rng):
    for _ in range(15):
        tasks = [task(i, rng.randrange(10), rng.randrange(10), 4, 20)
                 for i in range(5)]
        agents = [agent(i, rng.randrange(10), rng.randrange(10))
                  for i in range(3)]
        inst = instance(tasks, agents, grid_size=10, k=1.0)
        out1 = cfla.solve_cfla(inst, LookAheadVariant.CFLA)
        out2 = cfla.solve_cfla(inst, LookAheadVariant.CFLA2)
        assert out1.schedule.allocations == out2.schedule.allocations


def test_criterion_9_property_suites(capsys):
    _ecf_minimality(random.Random(901))
    _one_task_per_step(random.Random(902))
    _at_most_all_agents_per_step(random.Random(903))
    _kernel_delta_agreement(random.Random(904))
    _variant_equivalence(random.Random(905))
    announce(capsys, "[PASS] criterion 9: property suites (minimal "
                     "coalitions, per-step allocation bounds, kernel/"
                     "completion agreement, variant equivalence)")
