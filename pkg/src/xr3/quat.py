"""Unit quaternion helpers.

Convention: scalar-first ``[w, x, y, z]``, float64 numpy arrays. All
functions are pure and allocate fresh arrays.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def identity() -> np.ndarray:
    return IDENTITY.copy()


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (apply b's rotation, then a's)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vector v by unit quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    uv = np.cross(u, v)
    return np.asarray(v, dtype=np.float64) + 2.0 * (w * uv + np.cross(u, uv))


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    s = np.sin(half) / n
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis XYZ convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    qx = from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return multiply(qz, multiply(qy, qx))


def to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return normalize(np.array([0.25 * s,
                                   (m[2, 1] - m[1, 2]) / s,
                                   (m[0, 2] - m[2, 0]) / s,
                                   (m[1, 0] - m[0, 1]) / s]))
    if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        return normalize(np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                                   (m[0, 1] + m[1, 0]) / s,
                                   (m[0, 2] + m[2, 0]) / s]))
    if m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        return normalize(np.array([(m[0, 2] - m[2, 0]) / s,
                                   (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                                   (m[1, 2] + m[2, 1]) / s]))
    s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
    return normalize(np.array([(m[1, 0] - m[0, 1]) / s,
                               (m[0, 2] + m[2, 0]) / s,
                               (m[1, 2] + m[2, 1]) / s, 0.25 * s]))


def angle(q: np.ndarray) -> float:
    """Rotation angle of q in [0, pi]."""
    w = min(1.0, abs(float(q[0])) / max(float(np.linalg.norm(q)), 1e-300))
    return 2.0 * float(np.arccos(w))


def rotation_vector(q: np.ndarray) -> np.ndarray:
    """Axis * angle of q (minimal representation, angle in [0, pi])."""
    w, x, y, z = q
    if w < 0.0:  # pick the short way round
        w, x, y, z = -w, -x, -y, -z
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return np.array([2.0 * x, 2.0 * y, 2.0 * z])  # small-angle limit
    ang = 2.0 * np.arctan2(s, w)
    return np.array([x, y, z]) * (ang / s)
