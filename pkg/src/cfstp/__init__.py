"""Coalition scheduling toolkit: spatial/temporal task allocation.

Tasks sit on a grid with workloads and hard deadlines; agents travel to
them and work in coalitions whose speed grows with size.  The package
bundles a discrete-time simulation kernel, two look-ahead greedy solvers,
a fast cluster-based solver, an exhaustive oracle for tiny instances, a
schedule validator and a benchmark harness.
"""

from .bench import (
    GenParams,
    compute_metrics,
    generate_instance,
    run_benchmark,
    run_solver,
)
from .ccf import solve_ccf
from .cfla import LookAheadVariant, ecf_coalition, solve_cfla
from .model import (
    Agent,
    AgentAllocation,
    Instance,
    Location,
    Schedule,
    SimState,
    SolveOutcome,
    Task,
    coalition_value,
    load_instance,
    load_schedule,
    save_instance,
    save_schedule,
    solution_degree,
    step_simulation,
    validate_schedule,
)
from .oracle import OracleLimitError, OracleLimits, solve_exact

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentAllocation",
    "GenParams",
    "Instance",
    "Location",
    "LookAheadVariant",
    "OracleLimitError",
    "OracleLimits",
    "Schedule",
    "SimState",
    "SolveOutcome",
    "Task",
    "coalition_value",
    "compute_metrics",
    "ecf_coalition",
    "generate_instance",
    "load_instance",
    "load_schedule",
    "run_benchmark",
    "run_solver",
    "save_instance",
    "save_schedule",
    "solution_degree",
    "solve_ccf",
    "solve_cfla",
    "solve_exact",
    "step_simulation",
    "validate_schedule",
]
