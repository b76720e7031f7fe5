from .actuation import GuardThresholds, PlanDeadlock, SlotMove, actuation_guard, apply_move, plan_moves, replay
from .brute import MAX_STATES, brute_force_solve, compositions, count_states
from .milp import solve
from .model import (
    Allocation,
    InputError,
    Objective,
    OracleRefused,
    SolverError,
    SolverInfeasible,
    SolverInput,
    check_feasible,
    evaluate,
    excluded_pairs,
    fill_missing,
    input_from_document,
    input_to_document,
    load_input,
    objective_vector,
    parse_objective,
    performance_costs,
)

__all__ = [
    "Allocation",
    "GuardThresholds",
    "InputError",
    "MAX_STATES",
    "Objective",
    "OracleRefused",
    "PlanDeadlock",
    "SlotMove",
    "SolverError",
    "SolverInfeasible",
    "SolverInput",
    "actuation_guard",
    "apply_move",
    "brute_force_solve",
    "check_feasible",
    "compositions",
    "count_states",
    "evaluate",
    "excluded_pairs",
    "fill_missing",
    "input_from_document",
    "input_to_document",
    "load_input",
    "objective_vector",
    "parse_objective",
    "performance_costs",
    "plan_moves",
    "replay",
    "solve",
]
