"""Linear MPC attitude controllers.

Three variants share the linearized error model ``x = [xi; w]``:

* ``ULMPC``: unconstrained, closed-form gain.
* ``CLMPC``: same cost with wheel torque and momentum constraints (QP).
* ``AugmentedCLMPC``: velocity-form model with the output appended to the
  state, which puts an integrator in the loop; optimizes torque increments.

The controllers return the compensated torque ``T_c``; the wheel command adds
the gyroscopic term via :func:`feedforward_torque`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linear_model import augment, build_continuous, discretize, prediction_matrices
from .plant import INERTIA, ActuatorLimits
from .qp import ActiveSetSolver, QpProblem

log = logging.getLogger(__name__)

WEIGHTS = {"ulmpc": 10.0, "clmpc": 10.0, "aclmpc": 40.0, "nmpc": 10.0}


@dataclass(frozen=True)
class LmpcConfig:
    Np: int = 10
    Nc: int = 10
    weight: float = 10.0
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    ts: float = 2.0

    def __post_init__(self):
        if self.Nc > self.Np:
            raise ValueError("Nc must not exceed Np")
        if self.weight <= 0:
            raise ValueError("weight must be positive")
        if self.ts <= 0:
            raise ValueError("ts must be positive")


def feedforward_torque(T_c, omega_meas, h_rw_meas, J=INERTIA) -> np.ndarray:
    """Wheel torque command ``T_c + w x (J w + h_rw)``; not saturated here."""
    w = np.asarray(omega_meas, float)
    return np.asarray(T_c, float) + np.cross(w, np.asarray(J) @ w + np.asarray(h_rw_meas, float))


def error_state(q_e, omega) -> np.ndarray:
    """Linear-model state ``[xi; w]`` from an error quaternion and body rate."""
    return np.concatenate([np.asarray(q_e, float)[1:], np.asarray(omega, float)])


def _cumsum_matrix(Nc: int) -> np.ndarray:
    return np.kron(np.tril(np.ones((Nc, Nc))), np.eye(3))


class _LinearMPC:
    name = "lmpc"

    def __init__(self, cfg: LmpcConfig | None = None, J=INERTIA):
        self.cfg = cfg or LmpcConfig(weight=WEIGHTS[self.name])
        self.J = np.asarray(J, float)
        self.continuous = build_continuous(self.J)
        self.discrete = discretize(self.continuous, self.cfg.ts)
        self.status = "optimal"
        self.last_plan = np.zeros((self.cfg.Nc, 3))
        self.prev_Tc = np.zeros(3)

    def reset(self):
        self.status = "optimal"
        self.last_plan = np.zeros((self.cfg.Nc, 3))
        self.prev_Tc = np.zeros(3)

    def planned_momentum(self, h_rw) -> np.ndarray:
        """Wheel momentum implied by ``last_plan`` at the end of each horizon step."""
        return np.asarray(h_rw, float) - self.cfg.ts * np.cumsum(self.last_plan, axis=0)

    def _fallback(self, reason: str) -> np.ndarray:
        lim = self.cfg.limits
        log.warning("%s: %s, holding previous torque", self.name, reason)
        self.status = "fallback"
        T_c = np.clip(self.prev_Tc, lim.t_min, lim.t_max)
        self.last_plan = np.tile(T_c, (self.cfg.Nc, 1))
        self.prev_Tc = T_c
        return T_c


class ULMPC(_LinearMPC):
    """Unconstrained LMPC with a cached gain ``K = (R'R + W I)^-1 R' Phi``."""

    name = "ulmpc"

    def __init__(self, cfg: LmpcConfig | None = None, J=INERTIA):
        super().__init__(cfg, J)
        d = self.discrete
        pm = prediction_matrices(d.A2, d.B2, d.C2, self.cfg.Np, self.cfg.Nc)
        self.prediction = pm
        n_u = pm.R.shape[1]
        self.gain = np.linalg.solve(pm.R.T @ pm.R + self.cfg.weight * np.eye(n_u), pm.R.T @ pm.Phi)

    def plan(self, x) -> np.ndarray:
        return -(self.gain @ np.asarray(x, float))

    def step(self, q_e, omega_meas, h_rw_meas=None) -> np.ndarray:
        U = self.plan(error_state(q_e, omega_meas))
        self.last_plan = U.reshape(-1, 3)
        self.prev_Tc = U[:3].copy()
        return U[:3].copy()


class CLMPC(_LinearMPC):
    """LMPC with torque bounds and cumulative wheel-momentum bounds over the horizon."""

    name = "clmpc"

    def __init__(self, cfg: LmpcConfig | None = None, J=INERTIA):
        super().__init__(cfg, J)
        d = self.discrete
        pm = prediction_matrices(d.A2, d.B2, d.C2, self.cfg.Np, self.cfg.Nc)
        self.prediction = pm
        Nc = self.cfg.Nc
        self.H = 2.0 * (pm.R.T @ pm.R + self.cfg.weight * np.eye(3 * Nc))
        self.L = _cumsum_matrix(Nc)
        self.A_ineq = np.vstack([np.eye(3 * Nc), -self.cfg.ts * self.L])
        self.solver = ActiveSetSolver(remember=True)
        self.last_solution = None

    def reset(self):
        super().reset()
        self.solver.last = None
        self.last_solution = None

    def problem(self, x, h_rw) -> QpProblem:
        lim, Nc = self.cfg.limits, self.cfg.Nc
        pm = self.prediction
        f = 2.0 * pm.R.T @ (pm.Phi @ x)
        h = np.asarray(h_rw, float)
        lb = np.concatenate([np.tile(lim.t_min, Nc), np.tile(lim.h_min - h, Nc)])
        ub = np.concatenate([np.tile(lim.t_max, Nc), np.tile(lim.h_max - h, Nc)])
        return QpProblem(self.H, f, self.A_ineq, lb, ub)

    def step(self, q_e, omega_meas, h_rw_meas) -> np.ndarray:
        x = error_state(q_e, omega_meas)
        # the zero-torque plan is feasible whenever the wheels are within their bounds
        sol = self.solver.solve(self.problem(x, h_rw_meas), x0=np.zeros(3 * self.cfg.Nc))
        self.last_solution = sol
        if not sol.ok:
            return self._fallback(f"QP {sol.status}")
        self.status = "optimal"
        self.last_plan = sol.x.reshape(-1, 3)
        self.prev_Tc = sol.x[:3].copy()
        return sol.x[:3].copy()


class AugmentedCLMPC(_LinearMPC):
    """Constrained LMPC on the augmented (incremental) model.

    Decision variables are torque increments ``dT_c``; the absolute torques
    ``T_c(k+i) = prev_Tc + sum_{j<=i} dT_c(k+j)`` enter the constraints through
    the block lower-triangular accumulation matrix ``S``.
    """

    name = "aclmpc"

    def __init__(self, cfg: LmpcConfig | None = None, J=INERTIA):
        super().__init__(cfg, J)
        self.augmented = augment(self.discrete)
        a = self.augmented
        pm = prediction_matrices(a.Aa, a.Ba, a.Ca, self.cfg.Np, self.cfg.Nc)
        self.prediction = pm
        Nc = self.cfg.Nc
        self.H = 2.0 * (pm.R.T @ pm.R + self.cfg.weight * np.eye(3 * Nc))
        self.S = _cumsum_matrix(Nc)
        self.A_ineq = np.vstack([self.S, -self.cfg.ts * self.S @ self.S])
        self.steps_ahead = np.repeat(np.arange(1, Nc + 1), 3).astype(float)
        self.solver = ActiveSetSolver(remember=True)
        self.prev_x = None
        self.last_solution = None

    def reset(self):
        super().reset()
        self.solver.last = None
        self.prev_x = None
        self.last_solution = None

    def augmented_state(self, x) -> np.ndarray:
        if self.prev_x is None:
            self.prev_x = x.copy()
        return np.concatenate([x - self.prev_x, x[:3]])

    def problem(self, x_a, h_rw) -> QpProblem:
        lim, Nc, ts = self.cfg.limits, self.cfg.Nc, self.cfg.ts
        pm = self.prediction
        f = 2.0 * pm.R.T @ (pm.Phi @ x_a)
        prev = np.tile(self.prev_Tc, Nc)
        h = np.tile(np.asarray(h_rw, float), Nc)
        hold = ts * self.steps_ahead * prev  # momentum drawn by holding prev_Tc
        lb = np.concatenate([np.tile(lim.t_min, Nc) - prev, np.tile(lim.h_min, Nc) - h + hold])
        ub = np.concatenate([np.tile(lim.t_max, Nc) - prev, np.tile(lim.h_max, Nc) - h + hold])
        return QpProblem(self.H, f, self.A_ineq, lb, ub)

    def step(self, q_e, omega_meas, h_rw_meas) -> np.ndarray:
        x = error_state(q_e, omega_meas)
        x_a = self.augmented_state(x)
        zero_plan = np.zeros(3 * self.cfg.Nc)
        zero_plan[:3] = -self.prev_Tc
        sol = self.solver.solve(self.problem(x_a, h_rw_meas), x0=zero_plan)
        self.last_solution = sol
        self.prev_x = x.copy()
        if not sol.ok:
            return self._fallback(f"QP {sol.status}")
        self.status = "optimal"
        self.last_increments = sol.x.reshape(-1, 3)
        self.last_plan = self.prev_Tc + np.cumsum(self.last_increments, axis=0)
        T_c = self.last_plan[0].copy()
        self.prev_Tc = T_c
        return T_c.copy()
