"""Nonlinear MPC over the full quaternion dynamics, solved by SQP.

Multiple-shooting transcription with a Gauss-Newton Hessian.  Each SQP
iteration linearizes the shooting dynamics with central finite differences,
condenses the state deviations out of the QP (so the QP has only the ``3N``
torque variables) and takes a full step.

The node state is ``s = [q_e (4), w (3), h_rw (3)]`` where ``q_e`` is the
error of the body attitude relative to the target sampled at that node.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .attitude import quat_conjugate, quat_error, quat_mul, quat_normalize
from .plant import INERTIA, ActuatorLimits, rk4
from .qp import ActiveSetSolver, QpProblem

log = logging.getLogger(__name__)

NX = 10
NU = 3


@dataclass(frozen=True)
class NmpcConfig:
    N: int = 10
    weight: float = 10.0
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    ts: float = 2.0
    max_sqp_iters: int = 5
    step_tolerance: float = 1e-6
    fd_step: float = 1e-6
    slack_penalty: float = 1e6
    # feed the active command's target motion over the horizon; False freezes q_t
    preview: bool = True

    def __post_init__(self):
        if self.N < 1 or self.max_sqp_iters < 1:
            raise ValueError("N and max_sqp_iters must be at least 1")


@dataclass
class ShootingTrajectory:
    states: np.ndarray  # (N+1, 10)
    controls: np.ndarray  # (N, 3)

    @property
    def q_e(self) -> np.ndarray:
        return self.states[:, :4]

    @property
    def omega(self) -> np.ndarray:
        return self.states[:, 4:7]

    @property
    def h_rw(self) -> np.ndarray:
        return self.states[:, 7:10]


def target_steps(q_t_seq) -> np.ndarray:
    """Per-interval rotations ``conj(q_t[k+1]) * q_t[k]`` that re-express the error."""
    q_t_seq = np.asarray(q_t_seq, float)
    return quat_mul(quat_conjugate(q_t_seq[1:]), q_t_seq[:-1])


def _propagate(s, u, ts, J, J_inv, steps):
    q, w, h = rk4(s[..., :4], s[..., 4:7], s[..., 7:10], u, ts, J, J_inv)
    if steps is not None:
        q = quat_mul(steps, q)
    return np.concatenate([q, w, h], axis=-1)


def discrete_dynamics(q_e, omega, h_rw, T, ts, J=INERTIA, target_step=None):
    """One control interval of the error dynamics under constant wheel torque ``T``.

    ``target_step`` is ``conj(q_t(k+1)) * q_t(k)``; leave it ``None`` for a
    target held constant over the interval.
    """
    J = np.asarray(J, float)
    s = np.concatenate([np.asarray(q_e, float), np.asarray(omega, float), np.asarray(h_rw, float)])
    out = _propagate(s, np.asarray(T, float), ts, J, np.linalg.inv(J), target_step)
    return out[:4], out[4:7], out[7:10]


def rollout(s0, controls, ts, J, J_inv, steps=None) -> np.ndarray:
    controls = np.asarray(controls, float)
    states = np.empty((len(controls) + 1, NX))
    states[0] = s0
    for k, u in enumerate(controls):
        states[k + 1] = _propagate(states[k], u, ts, J, J_inv, None if steps is None else steps[k])
    return states


def rollout_cost(traj: ShootingTrajectory, cfg: NmpcConfig) -> float:
    """Stage cost summed over k = 0..N-1: ``|vec(q_e,k)|^2 + W |T_k|^2``."""
    N = len(traj.controls)
    xi = traj.states[:N, 1:4]
    return float(np.sum(xi * xi) + cfg.weight * np.sum(traj.controls * traj.controls))


def shooting_jacobians(states, controls, ts, J, J_inv, steps, eps):
    """Central-difference Jacobians of every shooting interval, evaluated in one batch.

    Returns ``(F, A, B)`` with ``F`` the propagated nodes ``(N, 10)``,
    ``A`` of shape ``(N, 10, 10)`` and ``B`` of shape ``(N, 10, 3)``.
    """
    N = len(controls)
    nz = NX + NU
    z = np.concatenate([states[:N], controls], axis=1)  # (N, 13)
    pert = np.concatenate([np.eye(nz), -np.eye(nz)]) * eps  # (26, 13)
    batch = np.concatenate([z[:, None, :], z[:, None, :] + pert[None]], axis=1)  # (N, 27, 13)
    flat = batch.reshape(-1, nz)
    step_b = None if steps is None else np.repeat(steps, 2 * nz + 1, axis=0)
    out = _propagate(flat[:, :NX], flat[:, NX:], ts, J, J_inv, step_b).reshape(N, 2 * nz + 1, NX)
    F = out[:, 0]
    D = (out[:, 1:nz + 1] - out[:, nz + 1:]) / (2.0 * eps)  # (N, 13, 10)
    jac = np.transpose(D, (0, 2, 1))
    return F, jac[:, :, :NX], jac[:, :, NX:]


class NMPC:
    """SQP-based nonlinear MPC with shift warm start.

    ``step`` takes the target attitude at the ``N + 1`` horizon nodes.  Passing
    the same quaternion at every node freezes the target over the horizon.
    """

    name = "nmpc"

    def __init__(self, cfg: NmpcConfig | None = None, J=INERTIA):
        self.cfg = cfg or NmpcConfig()
        self.J = np.asarray(J, float)
        self.J_inv = np.linalg.inv(self.J)
        self.solver = ActiveSetSolver()
        self.reset()

    def reset(self):
        self.warm_controls = None
        self.trajectory: ShootingTrajectory | None = None
        self.status = "optimal"
        self.sqp_iterations = 0
        self.cost_history: list[float] = []
        self.defect = 0.0
        self.solve_time = 0.0
        self.cost_increases = 0

    def _cost_of(self, s0, controls, steps) -> float:
        states = rollout(s0, controls, self.cfg.ts, self.J, self.J_inv, steps)
        return rollout_cost(ShootingTrajectory(states, controls), self.cfg)

    def _qp(self, G, r0, U, h_bar, Mh, ch):
        cfg, lim = self.cfg, self.cfg.limits
        N = cfg.N
        n = NU * N
        H = 2.0 * (G.T @ G + cfg.weight * np.eye(n))
        f = 2.0 * (G.T @ r0 + cfg.weight * U.ravel())
        A = np.vstack([np.eye(n), Mh])
        h_nom = (h_bar + ch).ravel()
        lb = np.concatenate([np.tile(lim.t_min, N) - U.ravel(), np.tile(lim.h_min, N) - h_nom])
        ub = np.concatenate([np.tile(lim.t_max, N) - U.ravel(), np.tile(lim.h_max, N) - h_nom])
        sol = self.solver.solve(QpProblem(H, f, A, lb, ub), x0=-U.ravel())
        if sol.ok:
            return sol.x, False
        # relax the momentum rows with a single penalized slack
        log.warning("nmpc: QP %s, relaxing momentum bounds", sol.status)
        m_h = Mh.shape[0]
        scale = max(1.0, np.abs(H).max())
        H_s = np.zeros((n + 1, n + 1))
        H_s[:n, :n] = H
        H_s[n, n] = 1e-6 * scale
        f_s = np.append(f, cfg.slack_penalty * scale)
        A_s = np.zeros((n + 2 * m_h + 1, n + 1))
        A_s[:n, :n] = np.eye(n)
        A_s[n:n + m_h, :n] = Mh
        A_s[n:n + m_h, n] = 1.0
        A_s[n + m_h:n + 2 * m_h, :n] = Mh
        A_s[n + m_h:n + 2 * m_h, n] = -1.0
        A_s[-1, n] = 1.0
        inf = np.full(m_h, np.inf)
        lb_s = np.concatenate([lb[:n], lb[n:], -inf, [0.0]])
        ub_s = np.concatenate([ub[:n], inf, ub[n:], [np.inf]])
        sol = self.solver.solve(QpProblem(H_s, f_s, A_s, lb_s, ub_s))
        return sol.x[:n], True

    def solve(self, s0, q_t_seq) -> ShootingTrajectory:
        cfg = self.cfg
        N, ts = cfg.N, cfg.ts
        q_t_seq = np.asarray(q_t_seq, float)
        if q_t_seq.ndim == 1:
            q_t_seq = np.tile(q_t_seq, (N + 1, 1))
        steps = target_steps(q_t_seq)

        U = np.zeros((N, NU)) if self.warm_controls is None else self.warm_controls.copy()
        S = rollout(s0, U, ts, self.J, self.J_inv, steps)
        self.cost_history = [rollout_cost(ShootingTrajectory(S, U), cfg)]
        relaxed = False
        P = np.zeros((3, NX))
        P[:, 1:4] = np.eye(3)
        for it in range(1, cfg.max_sqp_iters + 1):
            F, A, B = shooting_jacobians(S, U, ts, self.J, self.J_inv, steps, cfg.fd_step)
            defects = F - S[1:]
            # condense: dS_k = M_k dU + c_k with dS_0 = 0
            M = np.zeros((N + 1, NX, NU * N))
            c = np.zeros((N + 1, NX))
            for k in range(N):
                M[k + 1] = A[k] @ M[k]
                M[k + 1][:, NU * k:NU * (k + 1)] += B[k]
                c[k + 1] = A[k] @ c[k] + defects[k]
            G = (P @ M[:N]).reshape(3 * N, NU * N)  # xi_0..xi_{N-1}
            r0 = (S[:N, 1:4] + c[:N, 1:4]).ravel()
            Mh = M[1:, 7:10].reshape(3 * N, NU * N)  # h_1..h_N
            dU, used_slack = self._qp(G, r0, U, S[1:, 7:10], Mh, c[1:, 7:10])
            relaxed |= used_slack
            dS = (M @ dU) + c
            U = U + dU.reshape(N, NU)
            S = S + dS
            S[:, :4] = quat_normalize(S[:, :4])
            self.cost_history.append(self._cost_of(s0, U, steps))
            if self.cost_history[-1] > self.cost_history[-2] + 1e-12:
                self.cost_increases += 1
            if max(np.abs(dU).max(), np.abs(dS).max()) < cfg.step_tolerance:
                break
        self.sqp_iterations = it
        F = _propagate(S[:N], U, ts, self.J, self.J_inv, steps)
        self.defect = float(np.abs(F - S[1:]).max())
        self.status = "relaxed" if relaxed else "optimal"
        traj = ShootingTrajectory(S, U)
        self.trajectory = traj
        self.warm_controls = np.vstack([U[1:], U[-1:]])
        return traj

    def step(self, q_meas, omega_meas, h_rw_meas, q_t_seq) -> np.ndarray:
        """Solve from the current measurement and return the first wheel torque."""
        q_t_seq = np.asarray(q_t_seq, float)
        q_t0 = q_t_seq if q_t_seq.ndim == 1 else q_t_seq[0]
        s0 = np.concatenate([quat_error(q_meas, q_t0), omega_meas, h_rw_meas])
        t0 = time.perf_counter()
        traj = self.solve(s0, q_t_seq)
        self.solve_time = time.perf_counter() - t0
        return traj.controls[0].copy()
