"""Look-ahead coalition formation solver, in two variants.

The improved variant filters look-ahead targets by deadline and weights them
by leftover workload; the original variant does neither.  Both allocate at
most one task per time step: the task whose tentative earliest-completion
coalition leaves the most other tasks completable afterwards.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import model
from .model import (
    AgentStatus,
    Instance,
    Schedule,
    SimState,
    SolveOutcome,
    Task,
    ValueFn,
)

__all__ = [
    "LookAheadVariant",
    "LegalAllocationSet",
    "combinations",
    "legal_agent_allocations",
    "ecf_coalition",
    "look_ahead_degree",
    "solve_cfla",
]


class LookAheadVariant(Enum):
    """CFLA2 enables the deadline filter and the workload bonus; CFLA has
    the plain unit-increment look-ahead."""

    CFLA = "cfla"
    CFLA2 = "cfla2"


def combinations(pool, size: int):
    """All size-subsets of the pool, lexicographic by sorted member ids."""
    if size <= 0:
        raise ValueError("size must be positive")
    yield from itertools.combinations(sorted(pool), size)


# ---------------------------------------------------------------------------
# Per-instance geometry arrays, shared by the hot loops.
# ---------------------------------------------------------------------------

class _InstanceArrays:
    def __init__(self, instance: Instance):
        tasks = sorted(instance.tasks, key=lambda t: t.id)
        self.task_ids = [t.id for t in tasks]
        self.index = {t.id: i for i, t in enumerate(tasks)}
        self.tasks = tasks
        self.tx = np.array([t.location.x for t in tasks], dtype=np.float64)
        self.ty = np.array([t.location.y for t in tasks], dtype=np.float64)
        self.deadlines = np.array([t.deadline for t in tasks], dtype=np.int64)
        self.workloads = np.array([t.workload for t in tasks], dtype=np.float64)
        if instance.metric == "manhattan":
            self.task_dist = (np.abs(self.tx[:, None] - self.tx[None, :])
                              + np.abs(self.ty[:, None] - self.ty[None, :]))
        else:
            self.task_dist = np.hypot(self.tx[:, None] - self.tx[None, :],
                                      self.ty[:, None] - self.ty[None, :])

    def dists_from(self, instance: Instance, loc) -> np.ndarray:
        if instance.metric == "manhattan":
            return np.abs(self.tx - loc.x) + np.abs(self.ty - loc.y)
        return np.hypot(self.tx - loc.x, self.ty - loc.y)


def _arrays(instance: Instance) -> _InstanceArrays:
    # Stashed in the instance's __dict__ (like cached_property does for the
    # frozen dataclass): field-wise hashing of a 300-task instance on every
    # lookup dominated solver runtime when this was a keyed cache.
    arrays = instance.__dict__.get("_solver_arrays")
    if arrays is None:
        arrays = _InstanceArrays(instance)
        instance.__dict__["_solver_arrays"] = arrays
    return arrays


# ---------------------------------------------------------------------------
# Phase 1: legal agent allocations.
# ---------------------------------------------------------------------------

@dataclass
class LegalAllocationSet:
    """Admissible (free agent, uncompleted task) pairs at one time step, with
    the work-time window [arrival, deadline] of each pair."""

    now: int
    per_task: dict = field(default_factory=dict)  # task id -> [(agent id, arrival)]
    deadlines: dict = field(default_factory=dict)  # task id -> deadline

    def agents_for_task(self, task_id) -> list:
        return self.per_task.get(task_id, [])

    def window(self, agent_id, task_id):
        for aid, arrival in self.per_task.get(task_id, []):
            if aid == agent_id:
                return (arrival, self.deadlines[task_id])
        return None

    def entries(self) -> dict:
        return {
            (aid, task_id): (arrival, self.deadlines[task_id])
            for task_id, pairs in self.per_task.items()
            for aid, arrival in pairs
        }

    def __len__(self) -> int:
        return sum(len(p) for p in self.per_task.values())


def legal_agent_allocations(state: SimState, instance: Instance) -> LegalAllocationSet:
    """Which free agents can reach which uncompleted tasks within deadline."""
    arrays = _arrays(instance)
    legal = LegalAllocationSet(now=state.now)
    free = sorted(state.free_agents())
    for agent_id in free:
        agent = instance.agents_by_id[agent_id]
        dists = arrays.dists_from(instance, state.location[agent_id])
        arrivals = state.now + np.ceil(dists / agent.speed).astype(np.int64)
        ok = arrivals <= arrays.deadlines
        for idx in np.nonzero(ok)[0]:
            task_id = arrays.task_ids[idx]
            if task_id in state.completed:
                continue
            legal.per_task.setdefault(task_id, []).append(
                (agent_id, int(arrivals[idx])))
            legal.deadlines[task_id] = int(arrays.deadlines[idx])
    return legal


# ---------------------------------------------------------------------------
# Phase 2: earliest-completion-first coalitions.
# ---------------------------------------------------------------------------

def _completion_step(arrivals: Sequence[int], workload: float, deadline: int,
                     per_agent_rate: float) -> Optional[int]:
    """Earliest step at which staggered cumulative work reaches the workload.

    Arrivals must be sorted ascending and all <= deadline; each arrived agent
    contributes `per_agent_rate` per step from its arrival through the
    deadline.  None if the workload is not reached by the deadline.
    """
    done = 0.0
    n = len(arrivals)
    for j, lam in enumerate(arrivals):
        seg_end = (arrivals[j + 1] - 1) if j + 1 < n else deadline
        seg_end = min(seg_end, deadline)
        span = seg_end - lam + 1
        if span <= 0:
            continue
        rate = per_agent_rate * (j + 1)
        if done + rate * span >= workload:
            steps = math.ceil((workload - done) / rate)
            return lam + steps - 1
        done += rate * span
    return None


def _completion_step_general(members: Sequence[tuple], workload: float,
                             deadline: int, task: Task,
                             value_fn: ValueFn) -> Optional[int]:
    """Stepwise variant for arbitrary value functions: members are
    (agent id, arrival) pairs; the arrived sub-coalition works each step."""
    if not members:
        return None
    start = min(arr for _, arr in members)
    done = 0.0
    for t in range(start, deadline + 1):
        arrived = frozenset(aid for aid, arr in members if arr <= t)
        if arrived:
            done += value_fn(arrived, task)
            if done >= workload:
                return t
    return None


def _lex_min_subset(candidates: list, size: int, target: int,
                    workload: float, deadline: int, rate: float) -> list:
    """Lexicographically-smallest size-subset completing no later than target.

    Relies on earlier arrivals never doing less work, so a prefix is feasible
    iff it still completes by `target` when padded with the earliest-arriving
    remaining candidates.
    """
    by_id = sorted(candidates)
    chosen: list = []
    for j, (aid, arr) in enumerate(by_id):
        if len(chosen) == size:
            break
        rest = sorted(a for _, a in by_id[j + 1:])[: size - len(chosen) - 1]
        trial = sorted([a for _, a in chosen] + [arr] + rest)
        if len(trial) == size:
            done_at = _completion_step(trial, workload, deadline, rate)
            if done_at is not None and done_at <= target:
                chosen.append((aid, arr))
    return chosen


def ecf_coalition(task: Task, legal: LegalAllocationSet, state: SimState,
                  instance: Instance,
                  value_fn: Optional[ValueFn] = None):
    """Smallest coalition of reachable free agents that completes the task,
    earliest completion first.

    Returns (coalition as frozenset of agent ids, completion step) or None
    when no subset of the reachable agents can complete the task in time.
    Ties at the minimal size and completion step go to the lexicographically
    smallest agent-id set.
    """
    candidates = legal.agents_for_task(task.id)
    if not candidates:
        return None
    workload = state.remaining_workload.get(task.id, task.workload)
    deadline = task.deadline

    if value_fn is None:
        rate = instance.value_coefficient
        by_arrival = sorted(candidates, key=lambda p: (p[1], p[0]))
        arrivals = [arr for _, arr in by_arrival]
        for size in range(1, len(arrivals) + 1):
            done_at = _completion_step(arrivals[:size], workload, deadline, rate)
            if done_at is not None:
                chosen = _lex_min_subset(candidates, size, done_at,
                                         workload, deadline, rate)
                return frozenset(aid for aid, _ in chosen), done_at

        return None

    # Arbitrary value function: literal size-by-size subset enumeration.
    best = None
    for size in range(1, len(candidates) + 1):
        for combo in combinations([aid for aid, _ in candidates], size):
            members = [(aid, dict(candidates)[aid]) for aid in combo]
            done_at = _completion_step_general(members, workload, deadline,
                                               task, value_fn)
            if done_at is not None and (best is None or done_at < best[1]):
                best = (frozenset(combo), done_at)
        if best is not None:
            return best
    return None


# ---------------------------------------------------------------------------
# Phase 3: one-step look-ahead degree.
# ---------------------------------------------------------------------------

def _unallocated_tasks(state: SimState) -> set:
    busy = set(state.assignment.values())
    return {t for t in state.remaining_workload
            if t not in state.completed and t not in busy}


def look_ahead_degree(task: Task, coalition: frozenset, state: SimState,
                      instance: Instance, variant: LookAheadVariant,
                      completion_time: Optional[int] = None,
                      candidate_tasks: Optional[set] = None,
                      value_fn: Optional[ValueFn] = None) -> float:
    """Degree of a task: how many other tasks stay completable after the
    tentative coalition finishes it.

    The improved variant only counts tasks with a deadline at least the
    task's own, and adds a bonus of 1 - eta for each (eta is the candidate
    workload normalised over the candidates' [min, max] range; 0 when all
    candidate workloads are equal), so lighter leftovers score higher.
    """
    arrays = _arrays(instance)
    if candidate_tasks is None:
        candidate_tasks = _unallocated_tasks(state)

    if completion_time is None:
        members = []
        for aid in coalition:
            agent = instance.agents_by_id[aid]
            rho = instance.travel_time(agent, state.location[aid], task.location)
            members.append((aid, state.now + rho))
        workload = state.remaining_workload.get(task.id, task.workload)
        if value_fn is None:
            arrivals = sorted(arr for _, arr in members)
            completion_time = _completion_step(arrivals, workload,
                                               task.deadline,
                                               instance.value_coefficient)
        else:
            completion_time = _completion_step_general(members, workload,
                                                       task.deadline, task,
                                                       value_fn)
    if completion_time is None:
        return 0.0
    f_v = completion_time

    others = [t for t in candidate_tasks if t != task.id]
    if not others:
        return 0.0

    free_others = [aid for aid in state.free_agents() if aid not in coalition]

    if value_fn is None:
        return _degree_fast(task, coalition, free_others, state, instance,
                            arrays, variant, f_v, others)
    return _degree_general(task, coalition, free_others, state, instance,
                           variant, f_v, others, value_fn)


def _degree_fast(task, coalition, free_others, state, instance, arrays,
                 variant, f_v, others) -> float:
    idx = np.fromiter((arrays.index[t] for t in others), dtype=np.int64,
                      count=len(others))
    deadlines = arrays.deadlines[idx]
    if variant is LookAheadVariant.CFLA2:
        keep = deadlines >= task.deadline
        idx = idx[keep]
        deadlines = deadlines[keep]
        if idx.size == 0:
            return 0.0
    workloads = arrays.workloads[idx]

    # Total work each reachable participant can add by each deadline; the
    # sub-coalition sums collapse to per-agent presence times for size-based
    # coalition values, so total-by-deadline decides completability.
    vi = arrays.index[task.id]
    potential = np.zeros(idx.size)
    for aid in coalition:
        speed = instance.agents_by_id[aid].speed
        arr = f_v + np.ceil(arrays.task_dist[vi, idx] / speed)
        potential += np.maximum(0.0, deadlines - arr + 1)
    for aid in free_others:
        agent = instance.agents_by_id[aid]
        dists = arrays.dists_from(instance, state.location[aid])[idx]
        arr = f_v + np.ceil(dists / agent.speed)
        potential += np.maximum(0.0, deadlines - arr + 1)

    completable = potential * instance.value_coefficient >= workloads
    n = int(np.count_nonzero(completable))
    if n == 0:
        return 0.0
    if variant is LookAheadVariant.CFLA:
        return float(n)
    w_min = float(workloads.min())
    w_max = float(workloads.max())
    if w_max == w_min:
        eta = np.zeros(idx.size)
    else:
        eta = (workloads - w_min) / (w_max - w_min)
    return float(np.sum((2.0 - eta)[completable]))


def _degree_general(task, coalition, free_others, state, instance, variant,
                    f_v, others, value_fn) -> float:
    if variant is LookAheadVariant.CFLA2:
        workload_pool = sorted(
            state.remaining_workload[t] for t in others
            if instance.tasks_by_id[t].deadline >= task.deadline)
    else:
        workload_pool = sorted(state.remaining_workload[t] for t in others)
    if not workload_pool:
        return 0.0
    w_min, w_max = workload_pool[0], workload_pool[-1]

    degree = 0.0
    for t2 in sorted(others):
        task2 = instance.tasks_by_id[t2]
        if variant is LookAheadVariant.CFLA2 and task2.deadline < task.deadline:
            continue
        participants = []
        for aid in coalition:
            agent = instance.agents_by_id[aid]
            rho = instance.travel_time(agent, task.location, task2.location)
            participants.append((aid, f_v + rho))
        for aid in free_others:
            agent = instance.agents_by_id[aid]
            rho = instance.travel_time(agent, state.location[aid], task2.location)
            participants.append((aid, f_v + rho))
        participants = [(aid, arr) for aid, arr in participants
                        if arr <= task2.deadline]
        found = False
        for size in range(1, len(participants) + 1):
            for combo in combinations([aid for aid, _ in participants], size):
                members = [(aid, arr) for aid, arr in participants
                           if aid in combo]
                if _completion_step_general(members,
                                            state.remaining_workload[t2],
                                            task2.deadline, task2,
                                            value_fn) is not None:
                    found = True
                    break
            if found:
                break
        if found:
            if variant is LookAheadVariant.CFLA:
                degree += 1.0
            else:
                eta = 0.0 if w_max == w_min else (
                    (state.remaining_workload[t2] - w_min) / (w_max - w_min))
                degree += 1.0 + (1.0 - eta)
    return degree


# ---------------------------------------------------------------------------
# Phase 4: main loop.
# ---------------------------------------------------------------------------

def solve_cfla(instance: Instance,
               variant: LookAheadVariant = LookAheadVariant.CFLA2,
               budget_ms: Optional[float] = None,
               rng=None,
               value_fn: Optional[ValueFn] = None) -> SolveOutcome:
    """Run the look-ahead solver to completion (or budget exhaustion).

    One task is allocated per time step: the one with the highest look-ahead
    degree among those with a feasible earliest-completion coalition.  Ties
    go to the smallest task id, or uniformly at random when `rng` (a seeded
    random.Random) is given.  Interruption by budget returns the partial
    schedule flagged `interrupted`.
    """
    t_start = time.perf_counter()
    state = model.new_state(instance)
    allocations: list = []
    unallocated = {t.id for t in instance.tasks}
    d_max = instance.d_max
    interrupted = False

    while True:
        if len(state.completed) == len(instance.tasks):
            break
        if state.now > d_max:
            break
        if budget_ms is not None and (time.perf_counter() - t_start) * 1000.0 > budget_ms:
            interrupted = True
            break

        model.process_arrivals(state, instance)
        model.release_expired_workers(state, instance)
        legal = legal_agent_allocations(state, instance)

        best_degree = -1.0
        best: Optional[tuple] = None
        ties: list = []
        for task_id in sorted(unallocated):
            task = instance.tasks_by_id[task_id]
            result = ecf_coalition(task, legal, state, instance, value_fn)
            if result is None:
                continue
            coalition, f_v = result
            degree = look_ahead_degree(task, coalition, state, instance,
                                       variant, completion_time=f_v,
                                       candidate_tasks=unallocated,
                                       value_fn=value_fn)
            if degree > best_degree:
                best_degree = degree
                best = (task_id, coalition)
                ties = [best]
            elif degree == best_degree and best is not None:
                ties.append((task_id, coalition))

        allocated = False
        if best is not None:
            if rng is not None and len(ties) > 1:
                best = ties[rng.randrange(len(ties))]
            task_id, coalition = best
            for aid in sorted(coalition):
                model.dispatch(state, instance, aid, task_id)
            unallocated.discard(task_id)
            allocated = True

        model.step_simulation(state, instance, allocations, value_fn)

        if not allocated and all(s is AgentStatus.FREE
                                 for s in state.status.values()):
            break

    wall_ms = (time.perf_counter() - t_start) * 1000.0
    return model.outcome_from_state(state, Schedule(allocations),
                                    interrupted=interrupted, wall_ms=wall_ms)
