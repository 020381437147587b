"""Quaternion algebra and small rotation helpers.

Convention
----------
Quaternions are scalar-first numpy arrays ``[q0, q1, q2, q3]`` and ``quat_mul``
is the Hamilton product (``i * j = k``).  A quaternion ``q_AB`` describes the
attitude of frame A relative to frame B: it maps A-frame components to B-frame
components through ``v_B = q_AB * v_A * conj(q_AB)``.  With this convention the
body kinematics read ``dq/dt = 0.5 * q * [0, w]`` with ``w`` in body axes, and
frame chains compose left to right, ``q_AC = q_BC * q_AB``.

All functions accept stacked inputs with shape ``(..., 4)`` / ``(..., 3)``.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    b0, b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Resolve the double cover: scalar part >= 0.

    When the scalar part is exactly zero the first nonzero vector component is
    made positive, so ``(0, 0, 0, -1)`` maps to ``(0, 0, 0, 1)``.
    """
    q = np.array(q, dtype=float)
    flat = q.reshape(-1, 4)
    for row in flat:
        nonzero = np.flatnonzero(row)
        if nonzero.size and row[nonzero[0]] < 0.0:
            row *= -1.0
    return flat.reshape(q.shape)


def quat_error(q: np.ndarray, q_t: np.ndarray) -> np.ndarray:
    """Attitude error of ``q`` relative to the target ``q_t``, canonicalized.

    Computed as ``conj(q_t) * q`` so that the vector part evolves as
    ``d(xi)/dt = 0.5 * (eta * I + [xi x]) w`` with ``w`` the body rate.
    """
    return quat_canonical(quat_mul(quat_conjugate(q_t), q))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("rotation axis must be a finite nonzero vector")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / norm])


def error_angle(q_e: np.ndarray) -> np.ndarray | float:
    """Rotation angle of an error quaternion in degrees, in [0, 180]."""
    q_e = np.asarray(q_e, dtype=float)
    c = np.clip(np.abs(q_e[..., 0]), 0.0, 1.0)
    angle = np.degrees(2.0 * np.arccos(c))
    return float(angle) if np.ndim(angle) == 0 else angle


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the rotation of ``q`` to vector ``v`` (``q * v * conj(q)``)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_triad(x_axis, y_axis, z_axis) -> np.ndarray:
    """Quaternion mapping the unit vectors ``e_x, e_y, e_z`` onto the given axes.

    The axes must form a right-handed orthonormal triad.  Uses Shepperd's
    method on the matrix whose columns are the axes.
    """
    m = np.column_stack([x_axis, y_axis, z_axis]).astype(float)
    tr = np.trace(m)
    diag = np.diag(m)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(np.array(q)))


def shortest_arc(u, v) -> np.ndarray:
    """Minimal rotation taking unit vector ``u`` onto unit vector ``v``."""
    u = np.asarray(u, dtype=float) / np.linalg.norm(u)
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    d = float(np.dot(u, v))
    if d < -1.0 + 1e-12:
        # antiparallel: any axis orthogonal to u works; pick a deterministic one
        axis = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(u, [0.0, 1.0, 0.0])
        return quat_from_axis_angle(axis, np.pi)
    q = np.concatenate([[1.0 + d], np.cross(u, v)])
    return quat_normalize(q)
