"""Model predictive attitude control for agile Earth observation satellites.

Four controllers (unconstrained, constrained and augmented linear MPC, and
nonlinear MPC) track a moving ground target on a nonlinear reaction-wheel
spacecraft model.  :mod:`agile_mpc.harness` runs seeded Monte-Carlo
comparisons and computes the tracking metrics.
"""

from .attitude import error_angle, quat_error, quat_mul
from .controllers import ULMPC, CLMPC, AugmentedCLMPC, LmpcConfig, feedforward_torque
from .harness import RunConfig, run_closed_loop, run_monte_carlo, metrics_document
from .nmpc import NMPC, NmpcConfig
from .plant import ActuatorLimits, NoiseConfig, Plant, PlantState
from .qp import ActiveSetSolver, QpProblem, qp_solve
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "ActiveSetSolver", "ActuatorLimits", "AugmentedCLMPC", "CLMPC", "LmpcConfig", "NMPC", "NmpcConfig",
    "NoiseConfig", "Plant", "PlantState", "QpProblem", "RunConfig", "Scenario", "ScenarioError", "ULMPC",
    "error_angle", "feedforward_torque", "load_scenario", "metrics_document", "qp_solve", "quat_error",
    "quat_mul", "run_closed_loop", "run_monte_carlo",
]
