"""Closed loops of the linear controllers against the discrete linear model."""

import numpy as np

from agile_mpc.linear_model import build_continuous, discretize
from agile_mpc.plant import INERTIA


def q_from_xi(xi):
    return np.concatenate([[np.sqrt(max(0.0, 1.0 - xi @ xi))], xi])


def linear_loop(ctrl, x0, steps, disturbance=None, ts=2.0):
    """Drive ``ctrl`` on ``x+ = A2 x + B2 T_c (+ d on the xi rows)``; returns outputs and torques."""
    d = discretize(build_continuous(INERTIA), ts)
    dist = np.zeros(6)
    if disturbance is not None:
        dist[:3] = disturbance
    x = np.asarray(x0, float).copy()
    ys, us = [], []
    for _ in range(steps):
        u = ctrl.step(q_from_xi(x[:3]), x[3:], np.zeros(3))
        x = d.A2 @ x + d.B2 @ u + dist
        ys.append(d.C2 @ x)
        us.append(u)
    return np.array(ys), np.array(us)
