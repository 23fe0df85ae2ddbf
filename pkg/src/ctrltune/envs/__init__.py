"""Benchmark plants and their controllers."""
from .acc import AccEnv, AccPlantParams, PidController, acc_space, evaluate_pid_batch
from .bicycle import TRUE_PARAMS, BicycleParams, bicycle_step
from .mpc import MpcProblem, MpcSolution, mpc_solve
from .tracking import MpcController, TrackingEnv, TrackingScenario, generate_reference, nominal_theta, tracking_space

__all__ = [
    "AccEnv", "AccPlantParams", "PidController", "acc_space", "evaluate_pid_batch",
    "TRUE_PARAMS", "BicycleParams", "bicycle_step",
    "MpcProblem", "MpcSolution", "mpc_solve",
    "MpcController", "TrackingEnv", "TrackingScenario", "generate_reference", "nominal_theta", "tracking_space",
]
