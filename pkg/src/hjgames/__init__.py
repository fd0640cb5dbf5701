"""Zero-sum differential game lab: grid reachability ground truth, value
learning with PDE-residual self-supervision plus adversarial sampling-MPC
supervision, policy extraction, and simulated matchups."""

from .errors import (
    ConfigError,
    ContractError,
    EstimationError,
    HjgamesError,
    NumericalError,
    OutOfDomainError,
)
from .problems import (
    BoundaryFn,
    DynamicsModel,
    GameProblem,
    InputBox,
    available_problems,
    clamp_inputs,
    dubins_relative_state,
    euler_step,
    eval_boundary,
    flow_terms,
    get_problem,
    load_problem,
    register_problem,
)

__all__ = [
    "BoundaryFn",
    "ConfigError",
    "ContractError",
    "DynamicsModel",
    "EstimationError",
    "GameProblem",
    "HjgamesError",
    "InputBox",
    "NumericalError",
    "OutOfDomainError",
    "available_problems",
    "clamp_inputs",
    "dubins_relative_state",
    "euler_step",
    "eval_boundary",
    "flow_terms",
    "get_problem",
    "load_problem",
    "register_problem",
]
