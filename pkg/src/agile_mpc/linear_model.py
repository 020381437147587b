"""Linearized attitude-error models and condensed horizon predictions.

State ``x = [xi; w]`` (error-quaternion vector part and body rate), input is
the feedforward-compensated torque ``T_c`` and output ``y = xi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import check_inertia

I3 = np.eye(3)
Z3 = np.zeros((3, 3))


@dataclass(frozen=True)
class ContinuousModel:
    A1: np.ndarray
    B1: np.ndarray
    C1: np.ndarray


@dataclass(frozen=True)
class DiscreteModel:
    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    ts: float


@dataclass(frozen=True)
class AugmentedModel:
    """Velocity-form model with state ``x_a = [x(k) - x(k-1); y(k)]`` and input ``dT_c``."""

    Aa: np.ndarray
    Ba: np.ndarray
    Ca: np.ndarray


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked outputs ``Y = Phi @ x + R @ U`` over ``Np`` steps with ``Nc`` free moves."""

    Phi: np.ndarray
    R: np.ndarray
    Np: int
    Nc: int


def build_continuous(J) -> ContinuousModel:
    J = check_inertia(J)
    A1 = np.block([[Z3, 0.5 * I3], [Z3, Z3]])
    B1 = np.vstack([Z3, np.linalg.inv(J)])
    C1 = np.hstack([I3, Z3])
    return ContinuousModel(A1, B1, C1)


def discretize(m: ContinuousModel, ts: float) -> DiscreteModel:
    """Zero-order-hold discretization.

    ``A1 @ A1 == 0`` for this model, so the exponential series stops after the
    linear term: ``A2 = I + A1 ts`` and ``B2 = (ts I + ts^2/2 A1) B1``.
    """
    if ts <= 0:
        raise ValueError("ts must be positive")
    n = m.A1.shape[0]
    eye = np.eye(n)
    A2 = eye + m.A1 * ts
    B2 = (ts * eye + 0.5 * ts**2 * m.A1) @ m.B1
    return DiscreteModel(A2, B2, m.C1.copy(), float(ts))


def augment(m: DiscreteModel) -> AugmentedModel:
    n = m.A2.shape[0]
    p = m.C2.shape[0]
    CA = m.C2 @ m.A2
    Aa = np.block([[m.A2, np.zeros((n, p))], [CA, np.eye(p)]])
    Ba = np.vstack([m.B2, m.C2 @ m.B2])
    Ca = np.hstack([np.zeros((p, n)), np.eye(p)])
    return AugmentedModel(Aa, Ba, Ca)


def prediction_matrices(A, B, C, Np: int, Nc: int) -> PredictionMatrices:
    if Nc > Np:
        raise ValueError(f"control horizon Nc={Nc} exceeds prediction horizon Np={Np}")
    if Nc < 1:
        raise ValueError("horizons must be positive")
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    p, m = C.shape[0], B.shape[1]

    # CA^i for i = 0..Np
    powers = [C]
    for _ in range(Np):
        powers.append(powers[-1] @ A)
    Phi = np.vstack(powers[1:])
    markov = [cap @ B for cap in powers[:Np]]  # C A^i B
    R = np.zeros((p * Np, m * Nc))
    for i in range(Np):
        for j in range(min(i + 1, Nc)):
            R[i * p:(i + 1) * p, j * m:(j + 1) * m] = markov[i - j]
    return PredictionMatrices(Phi, R, Np, Nc)
