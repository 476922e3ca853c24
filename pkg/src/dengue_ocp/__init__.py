"""Direct-transcription optimal control of a dengue epidemic model."""

from .model import (
    ModelParams,
    Scenario,
    cost_integrand,
    dynamics,
    jacobian_u,
    jacobian_x,
    read_scenario,
    seasonal_growth,
)
from .simulate import (
    NonConvergence,
    Trajectory,
    simulate,
    step_euler,
    step_trapezoidal,
)
from .solver import SolveReport, SolverOptions, Status, initial_guess, kkt_residuals, solve
from .transcription import Grid, NlpProblem, Scheme, build

__all__ = [
    "Grid",
    "ModelParams",
    "NlpProblem",
    "NonConvergence",
    "Scenario",
    "Scheme",
    "SolveReport",
    "SolverOptions",
    "Status",
    "Trajectory",
    "build",
    "cost_integrand",
    "dynamics",
    "jacobian_u",
    "jacobian_x",
    "initial_guess",
    "kkt_residuals",
    "read_scenario",
    "seasonal_growth",
    "simulate",
    "solve",
    "step_euler",
    "step_trapezoidal",
]
