"""Nonlinear rigid-body plant with three body-axis reaction wheels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attitude import IDENTITY, quat_normalize

# Satellite inertia [kg m^2]
INERTIA = np.array(
    [
        [0.2912908, -0.0024154, 0.0011626],
        [-0.0024154, 0.2837495, 0.0009412],
        [0.0011626, 0.0009412, 0.3940411],
    ]
)

SUBSTEPS = 4


def _vec3(value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (3,)).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ActuatorLimits:
    """Reaction-wheel torque [N m] and momentum [N m s] bounds per body axis."""

    t_max: np.ndarray = field(default_factory=lambda: _vec3(4.18e-3))
    t_min: np.ndarray = field(default_factory=lambda: _vec3(-4.18e-3))
    h_max: np.ndarray = field(default_factory=lambda: _vec3(1.84e-2))
    h_min: np.ndarray = field(default_factory=lambda: _vec3(-1.84e-2))

    def __post_init__(self):
        for name in ("t_max", "t_min", "h_max", "h_min"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if not (np.all(self.t_min < 0) and np.all(self.t_max > 0)):
            raise ValueError("torque limits must satisfy t_min < 0 < t_max")
        if not (np.all(self.h_min < 0) and np.all(self.h_max > 0)):
            raise ValueError("momentum limits must satisfy h_min < 0 < h_max")


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor noise levels.

    Wheel noise is modelled as wheel-speed measurement noise and mapped to
    momentum through ``wheel_inertia``.  The default inertia makes
    ``h_max = 1.84e-2`` correspond to 6000 rpm.
    """

    gyro_std: float = 0.27  # deg/s
    rw_std_rpm: float = 5.0
    wheel_inertia: float = 2.93e-5  # kg m^2
    seed: int = 0

    def __post_init__(self):
        if self.gyro_std < 0 or self.rw_std_rpm < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.wheel_inertia <= 0:
            raise ValueError("wheel_inertia must be positive")

    @property
    def momentum_std(self) -> float:
        return self.wheel_inertia * (2.0 * np.pi / 60.0) * self.rw_std_rpm

    @classmethod
    def off(cls, seed: int = 0) -> "NoiseConfig":
        return cls(gyro_std=0.0, rw_std_rpm=0.0, seed=seed)


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    h_rw: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, size in (("q", 4), ("omega", 3), ("h_rw", 3)):
            arr = np.array(getattr(self, name), dtype=float).reshape(size)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class Measurement:
    q_meas: np.ndarray
    omega_meas: np.ndarray
    h_rw_meas: np.ndarray


def check_inertia(J) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape != (3, 3):
        raise ValueError("inertia must be 3x3")
    if not np.allclose(J, J.T, rtol=0.0, atol=1e-12):
        raise ValueError("inertia must be symmetric")
    if np.min(np.linalg.eigvalsh(J)) <= 0.0:
        raise ValueError("inertia must be positive definite")
    return J


def _cross(a, b):
    # np.cross carries a lot of overhead for the small stacked arrays used here
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1], axis=-1)


def derivatives(q, omega, h_rw, torque, J, J_inv):
    """Right-hand side of the attitude kinematics, rigid-body dynamics and wheel momentum.

    Works on stacked arrays; ``q`` has shape ``(..., 4)`` and the others ``(..., 3)``.
    """
    w = omega
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    q_dot = 0.5 * np.stack(
        [
            -q1 * w1 - q2 * w2 - q3 * w3,
            q0 * w1 - q3 * w2 + q2 * w3,
            q3 * w1 + q0 * w2 - q1 * w3,
            -q2 * w1 + q1 * w2 + q0 * w3,
        ],
        axis=-1,
    )
    momentum = w @ J.T + h_rw
    w_dot = (torque - _cross(w, momentum)) @ J_inv.T
    return q_dot, w_dot, -torque


def plant_derivative(state: PlantState, torque, J=INERTIA):
    """Return ``(q_dot, omega_dot, h_rw_dot)`` for the given state and wheel torque."""
    J = np.asarray(J, dtype=float)
    return derivatives(state.q, state.omega, state.h_rw, np.asarray(torque, float), J, np.linalg.inv(J))


def rk4(q, omega, h_rw, torque, dt, J, J_inv, substeps=SUBSTEPS):
    """Classical RK4 under zero-order-hold torque; renormalizes the quaternion."""
    h = dt / substeps
    for _ in range(substeps):
        k1 = derivatives(q, omega, h_rw, torque, J, J_inv)
        k2 = derivatives(q + 0.5 * h * k1[0], omega + 0.5 * h * k1[1], h_rw + 0.5 * h * k1[2], torque, J, J_inv)
        k3 = derivatives(q + 0.5 * h * k2[0], omega + 0.5 * h * k2[1], h_rw + 0.5 * h * k2[2], torque, J, J_inv)
        k4 = derivatives(q + h * k3[0], omega + h * k3[1], h_rw + h * k3[2], torque, J, J_inv)
        q = q + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        omega = omega + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        h_rw = h_rw + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return quat_normalize(q), omega, h_rw


def saturate_torque(torque_cmd, h_rw, dt: float, limits: ActuatorLimits) -> np.ndarray:
    """Clamp a wheel torque command to what the wheels can deliver over ``dt``.

    The command is clamped to the torque limits, then limited per axis so the
    wheel momentum stays inside its bounds (``dh/dt = -T``).  A wheel sitting
    at a momentum bound therefore gets zero torque in the direction that would
    push it further.
    """
    h = np.asarray(h_rw, float)
    torque = np.clip(np.asarray(torque_cmd, dtype=float), limits.t_min, limits.t_max)
    low = np.minimum((h - limits.h_max) / dt, 0.0)
    high = np.maximum((h - limits.h_min) / dt, 0.0)
    return np.clip(torque, low, high)


class Plant:
    """Ground-truth satellite simulator.

    Each instance owns its noise stream; use one instance per simulation run.
    """

    def __init__(self, state: PlantState | None = None, J=INERTIA,
                 limits: ActuatorLimits | None = None, noise: NoiseConfig | None = None):
        self.J = check_inertia(J)
        self.J_inv = np.linalg.inv(self.J)
        self.limits = limits or ActuatorLimits()
        self.noise = noise or NoiseConfig()
        self.rng = np.random.default_rng(self.noise.seed)
        self.state = state or PlantState()

    def saturate(self, torque_cmd, dt: float, h_rw=None) -> np.ndarray:
        """Torque the wheels can actually deliver over the next ``dt`` seconds; see :func:`saturate_torque`."""
        h = self.state.h_rw if h_rw is None else h_rw
        return saturate_torque(torque_cmd, h, dt, self.limits)

    def step(self, torque_cmd, dt: float) -> np.ndarray:
        """Advance the true state by ``dt`` seconds; returns the applied torque."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        s = self.state
        if not (np.all(np.isfinite(s.q)) and np.all(np.isfinite(s.omega)) and np.all(np.isfinite(s.h_rw))):
            raise FloatingPointError("plant state is not finite")
        if not np.all(np.isfinite(torque_cmd)):
            raise FloatingPointError("torque command is not finite")
        torque = self.saturate(torque_cmd, dt)
        q, w, h = rk4(s.q, s.omega, s.h_rw, torque, dt, self.J, self.J_inv)
        h = np.clip(h, self.limits.h_min, self.limits.h_max)
        self.state = PlantState(q, w, h)
        return torque

    def measure(self) -> Measurement:
        return measure(self.state, self.noise, self.rng)


def measure(state: PlantState, noise: NoiseConfig, rng: np.random.Generator) -> Measurement:
    """Gyro and wheel-momentum readings with Gaussian noise; attitude is exact."""
    gyro = np.radians(noise.gyro_std) * rng.standard_normal(3)
    wheel = noise.momentum_std * rng.standard_normal(3)
    return Measurement(state.q.copy(), state.omega + gyro, state.h_rw + wheel)
