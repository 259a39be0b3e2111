"""Cluster-based coalition formation solver.

Each free agent scores every reachable uncompleted task by arrival time plus
a small urgency weight on the time left before the deadline, and picks the
minimum -- so nearby tasks win unless a farther task's deadline presses.
Each picked task is then assigned the smallest prefix of its candidates, in
arrival order, that a conservative interval estimate says can finish the
job.  Several tasks can be allocated in the same time step, and committed
agents are never re-tasked.

The solver is also travel-thrifty: a dispatch that is both long (the trip
exceeds DEFER_TRIP) and unhurried (the task's slack after arrival exceeds
DEFER_SLACK) is deferred while other agents are still busy.  Waiting costs
nothing under the travel metric, and an agent freed later is often much
closer to the task than anyone is right now; the slack cap guarantees the
task is still dispatched in time once its deadline approaches.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model
from .cfla import _arrays
from .model import (
    Agent,
    Instance,
    Schedule,
    SimState,
    SolveOutcome,
    Task,
    ValueFn,
)

__all__ = [
    "TaskCandidateBuffer",
    "best_task_for_agent",
    "min_coalition_for_task",
    "solve_ccf",
]


@dataclass
class TaskCandidateBuffer:
    """Per-step scratch: which tasks were picked this step and by whom."""

    candidates: dict = field(default_factory=dict)  # task id -> [agent ids]

    @property
    def allocable(self) -> set:
        return set(self.candidates)

    def add(self, task_id, agent_id) -> None:
        self.candidates.setdefault(task_id, []).append(agent_id)


# Weight of the time-to-deadline term in the pick score.  One extra step of
# travel trades against 1/URGENCY_WEIGHT steps of deadline headroom; small
# enough that proximity dominates, large enough that early-deadline tasks are
# served before they expire.
URGENCY_WEIGHT = 0.035

# A dispatch is deferred (the agent waits this step) when the trip is longer
# than DEFER_TRIP steps *and* the task would still have more than DEFER_SLACK
# steps of slack after a solo agent finished it -- but only while some agent
# is busy, so the wait can actually improve the geometry.
DEFER_TRIP = 10
DEFER_SLACK = 10


def _committed_tasks(state: SimState) -> set:
    """Tasks some agent is travelling to or working on."""
    return set(state.assignment.values())


def _candidate_masks(state: SimState, instance: Instance, committed: set,
                     value_fn: Optional[ValueFn] = None) -> tuple:
    """(unallocated, allocated-but-needing-help) boolean masks over the
    id-sorted task arrays; shared by every free agent within one step.

    A committed task only accepts joiners while its current coalition is
    estimated insufficient: once (deadline - now) * u(C) covers the remaining
    workload, piling on more agents would just duplicate travel.
    """
    arrays = _arrays(instance)
    n = len(arrays.task_ids)
    uncompleted = np.ones(n, dtype=bool)
    if state.completed:
        uncompleted[[arrays.index[tid] for tid in state.completed]] = False
    needs_help = np.zeros(n, dtype=bool)
    committed_mask = np.zeros(n, dtype=bool)
    if committed:
        coalitions: dict = {}
        for agent_id, task_id in state.assignment.items():
            coalitions.setdefault(task_id, set()).add(agent_id)
        if value_fn is None:
            # Fast path for the default linear value u(C) = k * |C|.
            k = instance.value_coefficient
            for task_id in committed:
                i = arrays.index[task_id]
                committed_mask[i] = True
                task = instance.tasks_by_id[task_id]
                u = k * len(coalitions.get(task_id, ()))
                w_rem = state.remaining_workload.get(task_id, task.workload)
                if (task.deadline - state.now) * u < w_rem:
                    needs_help[i] = True
        else:
            for task_id in committed:
                i = arrays.index[task_id]
                committed_mask[i] = True
                task = instance.tasks_by_id[task_id]
                coalition = frozenset(coalitions.get(task_id, ()))
                u = value_fn(coalition, task)
                w_rem = state.remaining_workload.get(task_id, task.workload)
                if (task.deadline - state.now) * u < w_rem:
                    needs_help[i] = True
    return uncompleted & ~committed_mask, uncompleted & needs_help


def _scan_winner(arrivals, deadlines, candidate_mask, now):
    """Index of the winning candidate for one agent: the minimum of
    arrival + URGENCY_WEIGHT * (deadline - now), ties broken by the earliest
    deadline, then by ascending scan order.  Proximity as the dominant term
    keeps coalitions spatially clustered and travel low; the urgency term
    keeps tight deadlines from being starved by it."""
    cand = np.nonzero(candidate_mask)[0]
    if cand.size == 0:
        return None
    score = (arrivals[cand]
             + URGENCY_WEIGHT * np.maximum(deadlines[cand] - now, 0))
    tied = cand[score == score.min()]
    return int(tied[np.argmin(deadlines[tied])])


def best_task_for_agent(state: SimState, instance: Instance, agent: Agent,
                        committed: Optional[set] = None,
                        masks: Optional[tuple] = None,
                        value_fn: Optional[ValueFn] = None):
    """The agent's best reachable uncompleted task: the minimiser of the
    arrival-plus-urgency score over the pool of unallocated tasks and
    allocated tasks whose coalition still needs help.  Returns
    (task id, slot) with slot 0 for unallocated and 1 for allocated, or None
    when nothing qualifies.
    """
    arrays = _arrays(instance)
    if committed is None:
        committed = _committed_tasks(state)
    if masks is None:
        masks = _candidate_masks(state, instance, committed, value_fn)

    loc = state.location[agent.id]
    dists = arrays.dists_from(instance, loc)
    arrivals = state.now + np.ceil(dists / agent.speed).astype(np.int64)
    return _pick_from_arrivals(arrivals, arrays, masks, state.now)


def _pick_from_arrivals(arrivals, arrays, masks, now):
    feasible = arrivals <= arrays.deadlines
    idx = _scan_winner(arrivals, arrays.deadlines,
                       (masks[0] | masks[1]) & feasible, now)
    if idx is None:
        return None
    return arrays.task_ids[idx], (0 if masks[0][idx] else 1)


def _batched_picks(state: SimState, instance: Instance, seekers: list,
                   masks: tuple) -> dict:
    """best_task_for_agent for every seeker at once; one distance matrix
    evaluation instead of one vector per agent.  Returns agent id -> pick."""
    arrays = _arrays(instance)
    xs = np.array([state.location[a].x for a in seekers], dtype=np.float64)
    ys = np.array([state.location[a].y for a in seekers], dtype=np.float64)
    if instance.metric == "manhattan":
        dists = (np.abs(arrays.tx[None, :] - xs[:, None])
                 + np.abs(arrays.ty[None, :] - ys[:, None]))
    else:
        dists = np.hypot(arrays.tx[None, :] - xs[:, None],
                         arrays.ty[None, :] - ys[:, None])
    speeds = np.array([instance.agents_by_id[a].speed for a in seekers])
    arrivals = state.now + np.ceil(dists / speeds[:, None]).astype(np.int64)

    # One matrix argmin with the same float semantics as _scan_winner: score
    # rows, infeasible / out-of-pool entries pushed to +inf, ties resolved by
    # the earliest deadline and then by scan order.
    pool = (masks[0] | masks[1]) & (arrivals <= arrays.deadlines[None, :])
    score = (arrivals
             + URGENCY_WEIGHT * np.maximum(arrays.deadlines - state.now, 0))
    score = np.where(pool, score, np.inf)
    best = score.min(axis=1)
    tied = np.where(score == best[:, None], arrays.deadlines[None, :],
                    np.iinfo(np.int64).max)
    winners = tied.argmin(axis=1)
    picks = {}
    for row, agent_id in enumerate(seekers):
        if not np.isfinite(best[row]):
            picks[agent_id] = None
            continue
        idx = int(winners[row])
        picks[agent_id] = (arrays.task_ids[idx], 0 if masks[0][idx] else 1,
                           int(arrivals[row, idx]) - state.now)
    return picks


def _should_defer(state: SimState, instance: Instance, agent_id,
                  task_id, rho: int) -> bool:
    """Whether this dispatch should wait for the fleet geometry to improve.

    True when the trip (`rho` steps) is longer than DEFER_TRIP and the task
    would retain more than DEFER_SLACK steps of slack even if the agent
    finished it alone (remaining workload at the single-agent rate).  Callers
    must also check that some other agent is busy; deferring with the whole
    fleet idle only burns slack for nothing.
    """
    if rho <= DEFER_TRIP:
        return False
    task = instance.tasks_by_id[task_id]
    w_rem = state.remaining_workload.get(task.id, task.workload)
    solo = instance.value(frozenset((agent_id,)), task)
    work_time = math.ceil(w_rem / solo) if solo > 0 else task.deadline
    slack = task.deadline - (state.now + rho) - work_time
    return slack > DEFER_SLACK


def min_coalition_for_task(state: SimState, task: Task,
                           candidates: Sequence[tuple],
                           working: frozenset,
                           instance: Instance,
                           value_fn: Optional[ValueFn] = None) -> list:
    """Smallest arrival-ordered candidate prefix estimated to finish the task.

    Candidates are (agent id, arrival) pairs sorted ascending by arrival;
    `working` is the coalition already on the task.  The estimate credits
    work interval-by-interval between consecutive arrivals and compares the
    final candidate's remaining window against the leftover; if it never
    suffices, the whole candidate set is returned anyway and the task may
    expire uncompleted.
    """
    return _min_coalition(state, task, candidates, working, instance,
                          value_fn)[0]


def _min_coalition(state: SimState, task: Task, candidates: Sequence[tuple],
                   working: frozenset, instance: Instance,
                   value_fn: Optional[ValueFn] = None) -> tuple:
    """min_coalition_for_task plus whether the estimate ever fired: the
    second element is False when even the full candidate set looks unable to
    finish the task in time."""
    workload = state.remaining_workload.get(task.id, task.workload)
    chosen: list = []
    phi = 0.0
    n = len(candidates)
    for i, (agent_id, lam) in enumerate(candidates):
        chosen.append(agent_id)
        lam_next = candidates[i + 1][1] if i + 1 < n else task.deadline
        star = frozenset(chosen)
        full = star | working
        u_full = (value_fn(full, task) if value_fn is not None
                  else instance.value(full, task))
        phi += (lam_next - lam) * u_full
        u_star = (value_fn(star, task) if value_fn is not None
                  else instance.value(star, task))
        if (task.deadline - lam) * u_star >= workload - phi:
            return chosen, True
    return chosen, False


def solve_ccf(instance: Instance,
              budget_ms: Optional[float] = None,
              value_fn: Optional[ValueFn] = None) -> SolveOutcome:
    """Run the cluster-based solver to completion (or budget exhaustion).

    Per step: every free agent picks its best task; long unhurried trips are
    deferred while other agents are busy; every picked task gets its minimum
    candidate coalition dispatched; then the kernel advances one step.
    Stops when all tasks are done, the horizon passes, or every agent is
    idle with nothing allocable or deferred.  Anytime: a budget interruption
    returns the partial schedule flagged `interrupted`.
    """
    t_start = time.perf_counter()
    state = model.new_state(instance)
    allocations: list = []
    d_max = instance.d_max
    n_tasks = len(instance.tasks)
    tasks_by_id = instance.tasks_by_id
    k = instance.value_coefficient
    fast = value_fn is None  # default linear value: scalar bookkeeping works
    agent_order = sorted(a.id for a in instance.agents)
    arrays = _arrays(instance)
    index = arrays.index
    # Incrementally maintained "not yet completed" mask (fast path only).
    uncompleted_mask = np.ones(len(arrays.task_ids), dtype=bool)
    known_completed: set = set()
    interrupted = False
    # A free agent that found nothing reachable never will (it cannot move
    # and the task set only shrinks), so skip re-querying it.
    hopeless: set = set()
    # Pick cache: agent id -> (task id, slot, rho, workload snapshot, defer
    # horizon).  A static agent's scores all shift by the same constant each
    # step, so its argmin is stable while its pick stays in the candidate
    # pool; the pool shrinking elsewhere cannot change it.  Only pool
    # *growth* (a committed task newly needing help) invalidates every entry.
    # The defer horizon is the last step at which deferral still leaves more
    # than DEFER_SLACK of slack; it moves only if the workload snapshot does.
    picks_cache: dict = {}
    prev_needs_help: set = set()

    while True:
        if len(state.completed) == n_tasks:
            break
        if state.now > d_max:
            break
        if budget_ms is not None and (time.perf_counter() - t_start) * 1000.0 > budget_ms:
            interrupted = True
            break

        model.process_arrivals(state, instance)
        model.release_expired_workers(state, instance)
        assignment = state.assignment  # free agents are exactly those not here
        anyone_busy = bool(assignment)
        seekers = [a for a in agent_order
                   if a not in assignment and a not in hopeless]

        buffer = TaskCandidateBuffer()
        deferred = False
        if seekers and fast:
            now = state.now
            sizes: dict = {}
            for task_id in assignment.values():
                sizes[task_id] = sizes.get(task_id, 0) + 1
            needs_help = set()
            for task_id, size in sizes.items():
                if ((tasks_by_id[task_id].deadline - now) * (k * size)
                        < state.remaining_workload[task_id]):
                    needs_help.add(task_id)
            if any(t not in prev_needs_help for t in needs_help):
                picks_cache.clear()  # the pool grew: every argmin is suspect
            else:
                for agent_id in list(picks_cache):
                    task_id, _, rho, _, _ = picks_cache[agent_id]
                    if (task_id in state.completed
                            or (task_id in sizes
                                and task_id not in needs_help)
                            or now + rho > tasks_by_id[task_id].deadline):
                        del picks_cache[agent_id]
            prev_needs_help = needs_help

            missing = [a for a in seekers if a not in picks_cache]
            if missing:
                if len(known_completed) != len(state.completed):
                    fresh = state.completed - known_completed
                    uncompleted_mask[[index[t] for t in fresh]] = False
                    known_completed |= fresh
                unallocated = uncompleted_mask.copy()
                if sizes:
                    unallocated[[index[t] for t in sizes]] = False
                helpers = np.zeros(len(unallocated), dtype=bool)
                if needs_help:
                    # Tasks needing help are committed, hence uncompleted.
                    helpers[[index[t] for t in needs_help]] = True
                masks = (unallocated, helpers)
                for agent_id, picked in _batched_picks(
                        state, instance, missing, masks).items():
                    if picked is None:
                        hopeless.add(agent_id)
                    else:
                        task_id, slot, rho = picked
                        w_rem = state.remaining_workload[task_id]
                        horizon = (tasks_by_id[task_id].deadline - rho
                                   - math.ceil(w_rem / k) - DEFER_SLACK)
                        picks_cache[agent_id] = (task_id, slot, rho,
                                                 w_rem, horizon)
            for agent_id in seekers:
                entry = picks_cache.get(agent_id)
                if entry is None:
                    continue
                task_id, slot, rho, w_snap, horizon = entry
                w_rem = state.remaining_workload[task_id]
                if w_rem != w_snap:  # someone worked on it: refresh horizon
                    horizon = (tasks_by_id[task_id].deadline - rho
                               - math.ceil(w_rem / k) - DEFER_SLACK)
                    picks_cache[agent_id] = (task_id, slot, rho,
                                             w_rem, horizon)
                if anyone_busy and rho > DEFER_TRIP and now < horizon:
                    deferred = True
                else:
                    buffer.add(task_id, agent_id)
        elif seekers:
            # General value functions skip the scalar bookkeeping and
            # re-derive every pick from scratch each step.
            committed = _committed_tasks(state)
            masks = _candidate_masks(state, instance, committed, value_fn)
            for agent_id, picked in _batched_picks(state, instance, seekers,
                                                   masks).items():
                if picked is None:
                    hopeless.add(agent_id)
                elif anyone_busy and _should_defer(state, instance, agent_id,
                                                   picked[0], picked[2]):
                    deferred = True
                else:
                    buffer.add(picked[0], agent_id)

        dispatched = False
        for task_id in sorted(buffer.candidates):
            task = tasks_by_id[task_id]
            working = state.working_on(task_id)
            pairs = []
            for agent_id in buffer.candidates[task_id]:
                agent = instance.agents_by_id[agent_id]
                rho = instance.travel_time(agent, state.location[agent_id],
                                           task.location)
                pairs.append((agent_id, state.now + rho))
            pairs.sort(key=lambda p: (p[1], p[0]))
            coalition, sufficient = _min_coalition(state, task, pairs, working,
                                                   instance, value_fn)
            if not sufficient and not working:
                # Even every candidate together cannot finish a fresh task in
                # time; dispatching would only burn travel.  The pickers stay
                # free, so if other agents free up later the task gets another
                # chance with a bigger candidate pool.
                continue
            for agent_id in coalition:
                model.dispatch(state, instance, agent_id, task_id)
                picks_cache.pop(agent_id, None)
                dispatched = True

        model.step_simulation(state, instance, allocations, value_fn)

        if not dispatched and not deferred and not state.assignment:
            break

    wall_ms = (time.perf_counter() - t_start) * 1000.0
    return model.outcome_from_state(state, Schedule(allocations),
                                    interrupted=interrupted, wall_ms=wall_ms)
