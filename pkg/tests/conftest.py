"""Shared builders for test instances."""

import random

from cfstp.model import Agent, Instance, Location, Task


def task(tid, x, y, workload, deadline):
    return Task(id=tid, location=Location(x, y), workload=workload,
                deadline=deadline)


def agent(aid, x, y, speed=1.0):
    return Agent(id=aid, initial_location=Location(x, y), speed=speed)


def instance(tasks, agents, grid_size=50, k=1.0, metric="manhattan"):
    return Instance(tasks=tuple(tasks), agents=tuple(agents),
                    grid_size=grid_size, value_coefficient=k, metric=metric)


def random_tiny_instance(rng: random.Random, max_agents=3, max_tasks=4,
                         max_deadline=15, grid=5, k_choices=(1.0, 1.5)):
    """Small random instance within the exhaustive oracle's size guards."""
    n_a = rng.randint(1, max_agents)
    n_v = rng.randint(1, max_tasks)
    tasks = [
        task(i, rng.randrange(grid), rng.randrange(grid),
             rng.randint(1, 8), rng.randint(1, max_deadline))
        for i in range(n_v)
    ]
    agents = [
        agent(i, rng.randrange(grid), rng.randrange(grid))
        for i in range(n_a)
    ]
    return instance(tasks, agents, grid_size=grid, k=rng.choice(k_choices))
