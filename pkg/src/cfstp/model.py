"""CFSTP domain types, discrete-time simulation kernel and schedule validator.

Tasks sit at fixed grid locations with a workload and a deadline; agents move
on the grid and burn workload down while they stand on a task.  Everything is
driven by the same kernel (`step_simulation`), so solvers, the oracle and the
metrics all agree on what "completing a task" means.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, Mapping, Optional, Sequence

__all__ = [
    "Location",
    "Task",
    "Agent",
    "Instance",
    "AgentAllocation",
    "CoalitionAllocation",
    "Schedule",
    "Visit",
    "AgentStatus",
    "SimState",
    "SolveOutcome",
    "Violation",
    "ValidationReport",
    "travel_time",
    "coalition_value",
    "derive_coalition_allocations",
    "new_state",
    "dispatch",
    "process_arrivals",
    "step_simulation",
    "task_completed",
    "solution_degree",
    "validate_schedule",
    "instance_to_json",
    "instance_from_json",
    "load_instance",
    "save_instance",
    "schedule_to_json",
    "schedule_from_json",
    "load_schedule",
    "save_schedule",
]

# A coalition value function: (set of agent ids, task) -> work per time step.
ValueFn = Callable[[frozenset, "Task"], float]


@dataclass(frozen=True)
class Location:
    """A point on the instance grid."""

    x: int
    y: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative grid coordinate: ({self.x}, {self.y})")


def _manhattan(a: Location, b: Location) -> float:
    return abs(a.x - b.x) + abs(a.y - b.y)


def _euclidean(a: Location, b: Location) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


METRICS: dict[str, Callable[[Location, Location], float]] = {
    "manhattan": _manhattan,
    "euclidean": _euclidean,
}


@dataclass(frozen=True)
class Task:
    id: object
    location: Location
    workload: float
    deadline: int

    def __post_init__(self):
        if self.workload <= 0:
            raise ValueError(f"task {self.id}: workload must be positive")
        if self.deadline < 0:
            raise ValueError(f"task {self.id}: deadline must be >= 0")


@dataclass(frozen=True)
class Agent:
    id: object
    initial_location: Location
    speed: float = 1.0

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError(f"agent {self.id}: speed must be positive")


@dataclass(frozen=True)
class Instance:
    """Immutable problem description, safe to share between solver runs."""

    tasks: tuple[Task, ...]
    agents: tuple[Agent, ...]
    grid_size: int
    value_coefficient: float = 1.0
    metric: str = "manhattan"

    def __post_init__(self):
        if self.grid_size <= 0:
            raise ValueError("grid_size must be positive")
        if self.value_coefficient <= 0:
            raise ValueError("value_coefficient must be positive")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "agents", tuple(self.agents))
        seen = set()
        for t in self.tasks:
            if t.id in seen:
                raise ValueError(f"duplicate task id {t.id!r}")
            seen.add(t.id)
            self._check_bounds(t.location, f"task {t.id}")
        seen = set()
        for a in self.agents:
            if a.id in seen:
                raise ValueError(f"duplicate agent id {a.id!r}")
            seen.add(a.id)
            self._check_bounds(a.initial_location, f"agent {a.id}")

    def _check_bounds(self, loc: Location, what: str):
        if loc.x >= self.grid_size or loc.y >= self.grid_size:
            raise ValueError(f"{what}: location ({loc.x}, {loc.y}) outside "
                             f"{self.grid_size}x{self.grid_size} grid")

    @cached_property
    def tasks_by_id(self) -> dict:
        return {t.id: t for t in self.tasks}

    @cached_property
    def agents_by_id(self) -> dict:
        return {a.id: a for a in self.agents}

    @cached_property
    def d_max(self) -> int:
        return max((t.deadline for t in self.tasks), default=0)

    def distance(self, a: Location, b: Location) -> float:
        return METRICS[self.metric](a, b)

    def travel_time(self, agent: Agent, origin: Location, dest: Location) -> int:
        return math.ceil(self.distance(origin, dest) / agent.speed)

    def value(self, coalition: frozenset, task: Task) -> float:
        return coalition_value(len(coalition), self.value_coefficient)


def travel_time(agent: Agent, origin: Location, dest: Location,
                metric: str = "manhattan") -> int:
    """Time units an agent needs to move between two locations (0 if equal)."""
    return math.ceil(METRICS[metric](origin, dest) / agent.speed)


def coalition_value(coalition_size: int, value_coefficient: float) -> float:
    """Work per time step done by a coalition: size times the coefficient."""
    if value_coefficient <= 0:
        raise ValueError("value_coefficient must be positive")
    if coalition_size < 0:
        raise ValueError("coalition_size must be >= 0")
    return coalition_size * value_coefficient


@dataclass(frozen=True, order=True)
class AgentAllocation:
    """Agent `agent` works on task `task` during time step `time`."""

    agent: object
    task: object
    time: int


@dataclass(frozen=True)
class CoalitionAllocation:
    """Derived groupwise view: `coalition` works on `task` at `time`."""

    coalition: frozenset
    task: object
    time: int


def derive_coalition_allocations(allocations: Iterable[AgentAllocation],
                                 horizon: int) -> list[CoalitionAllocation]:
    """Group agent allocations with time <= horizon into coalition allocations."""
    groups: dict[tuple, set] = {}
    for alloc in allocations:
        if alloc.time <= horizon:
            groups.setdefault((alloc.task, alloc.time), set()).add(alloc.agent)
    return [
        CoalitionAllocation(coalition=frozenset(agents), task=task, time=time)
        for (task, time), agents in sorted(groups.items(),
                                           key=lambda kv: (str(kv[0][0]), kv[0][1]))
    ]


@dataclass(frozen=True)
class Visit:
    """One stop in an agent route: worked on `task` during [start, end]."""

    task: object
    start: int
    end: int


@dataclass
class Schedule:
    """A solution: the set of per-step agent allocations."""

    allocations: list[AgentAllocation] = field(default_factory=list)

    def coalition_allocations(self, horizon: int) -> list[CoalitionAllocation]:
        return derive_coalition_allocations(self.allocations, horizon)

    def agent_routes(self) -> dict:
        """Per-agent ordered visits; a visit is a maximal same-task run."""
        per_agent: dict = {}
        for alloc in self.allocations:
            per_agent.setdefault(alloc.agent, []).append(alloc)
        routes = {}
        for agent, allocs in per_agent.items():
            allocs.sort(key=lambda a: (a.time, str(a.task)))
            visits: list[Visit] = []
            for alloc in allocs:
                if visits and visits[-1].task == alloc.task:
                    visits[-1] = Visit(alloc.task, visits[-1].start, alloc.time)
                else:
                    visits.append(Visit(alloc.task, alloc.time, alloc.time))
            routes[agent] = visits
        return routes


class AgentStatus(Enum):
    FREE = "free"
    TRAVELLING = "travelling"
    WORKING = "working"


@dataclass
class SimState:
    """Mutable world state; single-owner, advanced by `step_simulation`."""

    now: int
    status: dict            # agent id -> AgentStatus
    assignment: dict        # agent id -> task id (travelling/working only)
    arrival: dict           # agent id -> arrival time (travelling only)
    location: dict          # agent id -> Location
    remaining_workload: dict  # task id -> remaining work
    completed: set          # task ids
    completion_time: dict = field(default_factory=dict)  # task id -> step
    travel_steps: dict = field(default_factory=dict)     # agent id -> steps spent travelling
    last_travel_step: int = -1

    def clone(self) -> "SimState":
        return SimState(
            now=self.now,
            status=dict(self.status),
            assignment=dict(self.assignment),
            arrival=dict(self.arrival),
            location=dict(self.location),
            remaining_workload=dict(self.remaining_workload),
            completed=set(self.completed),
            completion_time=dict(self.completion_time),
            travel_steps=dict(self.travel_steps),
            last_travel_step=self.last_travel_step,
        )

    def free_agents(self) -> list:
        return [a for a, s in self.status.items() if s is AgentStatus.FREE]

    def uncompleted(self) -> list:
        return [t for t in self.remaining_workload if t not in self.completed]

    def working_on(self, task_id) -> frozenset:
        return frozenset(
            a for a, s in self.status.items()
            if s is AgentStatus.WORKING and self.assignment[a] == task_id
        )


def new_state(instance: Instance) -> SimState:
    return SimState(
        now=0,
        status={a.id: AgentStatus.FREE for a in instance.agents},
        assignment={},
        arrival={},
        location={a.id: a.initial_location for a in instance.agents},
        remaining_workload={t.id: t.workload for t in instance.tasks},
        completed=set(),
        travel_steps={a.id: 0 for a in instance.agents},
    )


def dispatch(state: SimState, instance: Instance, agent_id, task_id) -> int:
    """Send a free agent toward a task; returns the arrival time step."""
    if state.status[agent_id] is not AgentStatus.FREE:
        raise ValueError(f"agent {agent_id!r} is not free")
    agent = instance.agents_by_id[agent_id]
    task = instance.tasks_by_id[task_id]
    rho = instance.travel_time(agent, state.location[agent_id], task.location)
    state.status[agent_id] = AgentStatus.TRAVELLING
    state.assignment[agent_id] = task_id
    state.arrival[agent_id] = state.now + rho
    return state.now + rho


def process_arrivals(state: SimState, instance: Instance) -> None:
    """Turn travelling agents whose arrival time has come into workers.

    Arriving at an already-completed task frees the agent on the spot.
    Idempotent within a step; `step_simulation` calls it first.
    """
    for agent_id in list(state.arrival):
        if state.arrival[agent_id] <= state.now:
            task_id = state.assignment[agent_id]
            state.location[agent_id] = instance.tasks_by_id[task_id].location
            del state.arrival[agent_id]
            if task_id in state.completed:
                state.status[agent_id] = AgentStatus.FREE
                del state.assignment[agent_id]
            else:
                state.status[agent_id] = AgentStatus.WORKING


def release_expired_workers(state: SimState, instance: Instance) -> None:
    """Free agents working on a task whose deadline has passed uncompleted.

    Past the deadline no further work counts, so the coalition dissolves
    where it stands and its members become available for reassignment.
    The kernel itself never applies this; solvers opt in between steps.
    """
    for agent_id, status in list(state.status.items()):
        if status is AgentStatus.WORKING:
            task = instance.tasks_by_id[state.assignment[agent_id]]
            if state.now > task.deadline and task.id not in state.completed:
                state.status[agent_id] = AgentStatus.FREE
                del state.assignment[agent_id]


def step_simulation(state: SimState, instance: Instance,
                    active_allocations: Optional[list] = None,
                    value_fn: Optional[ValueFn] = None) -> SimState:
    """Advance the world by one time step.

    Order of events: arrivals become workers; each working coalition on an
    uncompleted task within its deadline removes u(C, v) workload; tasks whose
    workload drops to <= 0 complete and free their agents at the task location;
    time increments.  Work at steps past the deadline is not applied; the
    final step may overshoot (no fractional steps).

    When `active_allocations` is a list, one AgentAllocation per working agent
    is appended for every step of work actually performed.
    """
    process_arrivals(state, instance)
    now = state.now
    coalitions: dict = {}
    for agent_id, status in state.status.items():
        if status is AgentStatus.TRAVELLING:
            state.travel_steps[agent_id] += 1
            state.last_travel_step = now
        elif status is AgentStatus.WORKING:
            coalitions.setdefault(state.assignment[agent_id], []).append(agent_id)

    for task_id, members in sorted(coalitions.items(), key=lambda kv: str(kv[0])):
        if task_id in state.completed:
            continue
        task = instance.tasks_by_id[task_id]
        if now > task.deadline:
            continue
        u = (value_fn(frozenset(members), task) if value_fn is not None
             else len(members) * instance.value_coefficient)
        state.remaining_workload[task_id] -= u
        if active_allocations is not None:
            for agent_id in sorted(members, key=str):
                active_allocations.append(AgentAllocation(agent_id, task_id, now))
        if state.remaining_workload[task_id] <= 0:
            state.completed.add(task_id)
            state.completion_time[task_id] = now
            for agent_id in members:
                state.status[agent_id] = AgentStatus.FREE
                del state.assignment[agent_id]

    state.now = now + 1
    return state


def task_completed(task: Task, allocations: Iterable[AgentAllocation],
                   value_fn: Optional[ValueFn] = None,
                   value_coefficient: float = 1.0) -> bool:
    """Temporal check: does cumulative coalition work reach the workload by
    the deadline?  Allocations for other tasks or past the deadline are ignored."""
    per_time: dict[int, set] = {}
    for alloc in allocations:
        if alloc.task == task.id and alloc.time <= task.deadline:
            per_time.setdefault(alloc.time, set()).add(alloc.agent)
    done = 0.0
    for time in sorted(per_time):
        coalition = frozenset(per_time[time])
        done += (value_fn(coalition, task) if value_fn is not None
                 else coalition_value(len(coalition), value_coefficient))
        if done >= task.workload:
            return True
    return False


def solution_degree(instance: Instance, schedule: Schedule,
                    value_fn: Optional[ValueFn] = None) -> int:
    """Number of tasks the schedule completes within their deadlines."""
    return sum(
        task_completed(task, schedule.allocations, value_fn,
                       instance.value_coefficient)
        for task in instance.tasks
    )


@dataclass(frozen=True)
class Violation:
    subject: str
    description: str


@dataclass
class ValidationReport:
    structural_violations: list[Violation] = field(default_factory=list)
    spatial_violations: list[Violation] = field(default_factory=list)
    temporal_notes: list[tuple] = field(default_factory=list)  # (task id, delta)

    @property
    def ok(self) -> bool:
        return not self.structural_violations and not self.spatial_violations


def validate_schedule(instance: Instance, schedule: Schedule,
                      coalition_allocations: Optional[Sequence[CoalitionAllocation]] = None,
                      value_fn: Optional[ValueFn] = None) -> ValidationReport:
    """Independent re-check of a schedule against the instance.

    Flags: one-coalition-per-task-per-time clashes, an agent on two tasks at
    different locations at once, allocations past a task deadline, starts
    before first possible arrival, and route chaining that ignores travel
    time.  Unknown ids are violations, not errors.  The per-task completion
    flag (delta) is reported informationally; it is the objective, not a
    feasibility condition.
    """
    report = ValidationReport()
    tasks = instance.tasks_by_id
    agents = instance.agents_by_id

    known: list[AgentAllocation] = []
    for alloc in schedule.allocations:
        bad = False
        if alloc.task not in tasks:
            report.structural_violations.append(Violation(
                f"task {alloc.task!r} at t={alloc.time}", "unknown task id"))
            bad = True
        if alloc.agent not in agents:
            report.structural_violations.append(Violation(
                f"agent {alloc.agent!r} at t={alloc.time}", "unknown agent id"))
            bad = True
        if alloc.time < 0:
            report.structural_violations.append(Violation(
                f"agent {alloc.agent!r} at t={alloc.time}", "negative time"))
            bad = True
        if bad:
            continue
        if alloc.time > tasks[alloc.task].deadline:
            report.structural_violations.append(Violation(
                f"task {alloc.task!r} at t={alloc.time}",
                f"allocation past deadline {tasks[alloc.task].deadline}"))
            continue
        known.append(alloc)

    # Structural: at most one coalition per task per time.  Derived coalition
    # allocations merge by construction, so this can only fire on explicitly
    # authored (adversarial) coalition allocations.
    if coalition_allocations is None:
        coalition_allocations = derive_coalition_allocations(known, instance.d_max)
    by_task_time: dict[tuple, list] = {}
    for ca in coalition_allocations:
        by_task_time.setdefault((ca.task, ca.time), []).append(ca.coalition)
    for (task_id, time), coalitions in sorted(by_task_time.items(),
                                              key=lambda kv: (str(kv[0][0]), kv[0][1])):
        distinct = set(coalitions)
        if len(distinct) > 1:
            report.structural_violations.append(Violation(
                f"task {task_id!r} at t={time}",
                f"{len(distinct)} distinct coalitions allocated at once"))

    # Structural: no agent on two differently-located tasks at the same time.
    by_agent_time: dict[tuple, set] = {}
    for alloc in known:
        by_agent_time.setdefault((alloc.agent, alloc.time), set()).add(alloc.task)
    for (agent_id, time), task_ids in sorted(by_agent_time.items(),
                                             key=lambda kv: (str(kv[0][0]), kv[0][1])):
        locations = {tasks[t].location for t in task_ids}
        if len(locations) > 1:
            report.structural_violations.append(Violation(
                f"agent {agent_id!r} at t={time}",
                f"allocated to {len(task_ids)} tasks at different locations"))

    # Spatial: first start no earlier than travel from the initial location,
    # and consecutive visits chained by inter-task travel time.
    clean = Schedule([a for a in known
                      if len({tasks[t].location
                              for t in by_agent_time[(a.agent, a.time)]}) == 1])
    for agent_id, visits in sorted(clean.agent_routes().items(), key=lambda kv: str(kv[0])):
        agent = agents[agent_id]
        if not visits:
            continue
        first = visits[0]
        rho0 = instance.travel_time(agent, agent.initial_location,
                                    tasks[first.task].location)
        if first.start < rho0:
            report.spatial_violations.append(Violation(
                f"agent {agent_id!r} -> task {first.task!r}",
                f"starts at t={first.start} but earliest arrival from the "
                f"initial location is t={rho0}"))
        for prev, nxt in zip(visits, visits[1:]):
            rho = instance.travel_time(agent, tasks[prev.task].location,
                                       tasks[nxt.task].location)
            if prev.end + rho > nxt.start:
                report.spatial_violations.append(Violation(
                    f"agent {agent_id!r}: task {prev.task!r} -> task {nxt.task!r}",
                    f"finishes at t={prev.end}, needs {rho} travel, but starts "
                    f"at t={nxt.start}"))

    for task in instance.tasks:
        delta = int(task_completed(task, known, value_fn, instance.value_coefficient))
        report.temporal_notes.append((task.id, delta))
    return report


@dataclass
class SolveOutcome:
    """Result of one solver run, with the bookkeeping the metrics need."""

    schedule: Schedule
    completed: set
    completion_times: dict      # task id -> step
    travel_steps: dict          # agent id -> steps spent travelling
    last_travel_step: int
    stop_time: int
    interrupted: bool = False
    wall_ms: float = 0.0

    @property
    def degree(self) -> int:
        return len(self.completed)


def outcome_from_state(state: SimState, schedule: Schedule,
                       interrupted: bool = False,
                       wall_ms: float = 0.0) -> SolveOutcome:
    return SolveOutcome(
        schedule=schedule,
        completed=set(state.completed),
        completion_times=dict(state.completion_time),
        travel_steps=dict(state.travel_steps),
        last_travel_step=state.last_travel_step,
        stop_time=state.now,
        interrupted=interrupted,
        wall_ms=wall_ms,
    )


# ---------------------------------------------------------------------------
# File formats (JSON).  Field names are fixed; unknown fields are rejected.
# ---------------------------------------------------------------------------

def _check_fields(obj: Mapping, required: set, what: str) -> None:
    if not isinstance(obj, Mapping):
        raise ValueError(f"{what}: expected an object, got {type(obj).__name__}")
    missing = required - set(obj)
    if missing:
        raise ValueError(f"{what}: missing fields {sorted(missing)}")
    unknown = set(obj) - required
    if unknown:
        raise ValueError(f"{what}: unknown fields {sorted(unknown)}")


def instance_to_json(instance: Instance) -> dict:
    return {
        "grid_size": instance.grid_size,
        "value_coefficient": instance.value_coefficient,
        "tasks": [
            {"id": t.id, "x": t.location.x, "y": t.location.y,
             "workload": t.workload, "deadline": t.deadline}
            for t in instance.tasks
        ],
        "agents": [
            {"id": a.id, "x": a.initial_location.x, "y": a.initial_location.y,
             "speed": a.speed}
            for a in instance.agents
        ],
    }


def instance_from_json(data: Mapping) -> Instance:
    _check_fields(data, {"grid_size", "value_coefficient", "tasks", "agents"},
                  "instance")
    tasks = []
    for i, entry in enumerate(data["tasks"]):
        _check_fields(entry, {"id", "x", "y", "workload", "deadline"},
                      f"tasks[{i}]")
        tasks.append(Task(entry["id"], Location(entry["x"], entry["y"]),
                          entry["workload"], entry["deadline"]))
    agents = []
    for i, entry in enumerate(data["agents"]):
        _check_fields(entry, {"id", "x", "y", "speed"}, f"agents[{i}]")
        agents.append(Agent(entry["id"], Location(entry["x"], entry["y"]),
                            entry["speed"]))
    return Instance(tasks=tuple(tasks), agents=tuple(agents),
                    grid_size=data["grid_size"],
                    value_coefficient=data["value_coefficient"])


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def save_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(instance), fh, indent=2)
        fh.write("\n")


def schedule_to_json(schedule: Schedule) -> list:
    return [{"agent": a.agent, "task": a.task, "time": a.time}
            for a in schedule.allocations]


def schedule_from_json(data) -> Schedule:
    if not isinstance(data, list):
        raise ValueError("schedule: expected a list of allocations")
    allocations = []
    for i, entry in enumerate(data):
        _check_fields(entry, {"agent", "task", "time"}, f"schedule[{i}]")
        allocations.append(AgentAllocation(entry["agent"], entry["task"],
                                           entry["time"]))
    return Schedule(allocations)


def load_schedule(path) -> Schedule:
    with open(path) as fh:
        return schedule_from_json(json.load(fh))


def save_schedule(schedule: Schedule, path) -> None:
    with open(path, "w") as fh:
        json.dump(schedule_to_json(schedule), fh, indent=2)
        fh.write("\n")
