"""Exhaustive optimal solver for tiny instances.

Depth-first search over joint agent itineraries: whenever an agent is free
and at least one task is still reachable, branch on every dispatch choice
for it; between decision points the shared simulation kernel advances time.
Dispatches happen as early as possible (delaying a dispatch can only push
every completion later under additive size-based work, so the earliest-
dispatch policy loses no optimal outcome), and a branch-and-bound cut on the
optimistically-completable task count trims hopeless subtrees.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import model
from .model import AgentStatus, Instance, Schedule, SimState

__all__ = ["OracleLimits", "OracleLimitError", "solve_exact"]


@dataclass(frozen=True)
class OracleLimits:
    """Size guards; the search is factorial and refuses bigger inputs."""

    max_agents: int = 4
    max_tasks: int = 5
    max_horizon: int = 30


class OracleLimitError(ValueError):
    """Instance exceeds the exhaustive-search size guards."""


def _check_limits(instance: Instance, limits: OracleLimits) -> None:
    if len(instance.agents) > limits.max_agents:
        raise OracleLimitError(
            f"{len(instance.agents)} agents exceed the oracle limit of "
            f"{limits.max_agents}")
    if len(instance.tasks) > limits.max_tasks:
        raise OracleLimitError(
            f"{len(instance.tasks)} tasks exceed the oracle limit of "
            f"{limits.max_tasks}")
    if instance.d_max > limits.max_horizon:
        raise OracleLimitError(
            f"latest deadline {instance.d_max} exceeds the oracle limit of "
            f"{limits.max_horizon}")


def _viable_dispatches(state: SimState, instance: Instance, agent_id) -> list:
    agent = instance.agents_by_id[agent_id]
    loc = state.location[agent_id]
    out = []
    for task in sorted(instance.tasks, key=lambda t: t.id):
        if task.id in state.completed:
            continue
        rho = instance.travel_time(agent, loc, task.location)
        if state.now + rho <= task.deadline:
            out.append(task.id)
    return out


def _optimistic_bound(state: SimState, instance: Instance) -> int:
    """Completed plus every uncompleted task that could still be finished if
    all agents converged on it as fast as conceivably possible."""
    k = instance.value_coefficient
    extra = 0
    for task in instance.tasks:
        if task.id in state.completed:
            continue
        remaining = state.remaining_workload[task.id]
        potential = 0.0
        for agent in instance.agents:
            status = state.status[agent.id]
            if status is AgentStatus.FREE:
                earliest = state.now + instance.travel_time(
                    agent, state.location[agent.id], task.location)
            elif status is AgentStatus.TRAVELLING:
                target = instance.tasks_by_id[state.assignment[agent.id]]
                earliest = state.arrival[agent.id] + instance.travel_time(
                    agent, target.location, task.location)
            else:  # working; could be freed as early as the next step
                here = instance.tasks_by_id[state.assignment[agent.id]]
                earliest = state.now + 1 + instance.travel_time(
                    agent, here.location, task.location)
            if state.assignment.get(agent.id) == task.id:
                earliest = min(earliest, state.now)
            if earliest <= task.deadline:
                potential += k * (task.deadline - earliest + 1)
        if potential >= remaining:
            extra += 1
    return len(state.completed) + extra


def solve_exact(instance: Instance,
                limits: OracleLimits = OracleLimits()) -> tuple[int, Schedule]:
    """Maximum number of completable tasks, with a schedule achieving it.

    Exhaustive over per-agent visit orders with earliest dispatch, evaluated
    by the simulation kernel; deterministic (first co-optimal solution in
    lexicographic dispatch order wins).  Raises OracleLimitError beyond the
    size guards.
    """
    _check_limits(instance, limits)
    d_max = instance.d_max
    best_degree = -1
    best_allocations: list = []

    def record(state: SimState, allocations: list) -> None:
        nonlocal best_degree, best_allocations
        if len(state.completed) > best_degree:
            best_degree = len(state.completed)
            best_allocations = list(allocations)

    def dfs(state: SimState, allocations: list) -> None:
        nonlocal best_degree
        while True:
            if len(state.completed) == len(instance.tasks) or state.now > d_max:
                record(state, allocations)
                return
            if _optimistic_bound(state, instance) <= best_degree:
                record(state, allocations)
                return
            model.process_arrivals(state, instance)
            model.release_expired_workers(state, instance)

            decision = None
            for agent_id in sorted(state.free_agents()):
                options = _viable_dispatches(state, instance, agent_id)
                if options:
                    decision = (agent_id, options)
                    break
            if decision is not None:
                agent_id, options = decision
                mark = len(allocations)
                for task_id in options:
                    child = state.clone()
                    model.dispatch(child, instance, agent_id, task_id)
                    dfs(child, allocations)
                    del allocations[mark:]
                return

            if all(s is AgentStatus.FREE for s in state.status.values()):
                record(state, allocations)
                return
            model.step_simulation(state, instance, allocations)

    dfs(model.new_state(instance), [])
    if best_degree < 0:
        best_degree = 0
        best_allocations = []
    return best_degree, Schedule(best_allocations)
