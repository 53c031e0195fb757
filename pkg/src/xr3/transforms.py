"""Rigid poses: position (meters) + unit quaternion orientation.

Orientation is scalar-first ``[w, x, y, z]`` (see :mod:`xr3.quat`).
``compose(A, B)`` means "apply B, then A": the result maps a point p to
``A.apply(B.apply(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat

_ORIENT_TOL = 1e-9


@dataclass(frozen=True)
class Transform:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat.identity)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > _ORIENT_TOL:
            if n < 1e-12:
                raise ValueError("orientation quaternion is near zero")
            q = q / n
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_xyz_rpy(xyz, rpy) -> "Transform":
        return Transform(np.asarray(xyz, dtype=np.float64),
                         quat.from_rpy(*rpy))

    def apply(self, point: np.ndarray) -> np.ndarray:
        return quat.rotate(self.orientation, point) + self.position

    def rotate(self, vector: np.ndarray) -> np.ndarray:
        return quat.rotate(self.orientation, vector)

    def compose(self, other: "Transform") -> "Transform":
        return Transform(
            self.position + quat.rotate(self.orientation, other.position),
            quat.multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Transform":
        q_inv = quat.conjugate(self.orientation)
        return Transform(-quat.rotate(q_inv, self.position), q_inv)

    def to_array(self) -> np.ndarray:
        """Flat [px, py, pz, qw, qx, qy, qz]."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_array(a) -> "Transform":
        a = np.asarray(a, dtype=np.float64).reshape(7)
        return Transform(a[:3], a[3:])

    def almost_equal(self, other: "Transform", tol: float = 1e-9) -> bool:
        if np.linalg.norm(self.position - other.position) > tol:
            return False
        d = quat.multiply(quat.conjugate(self.orientation), other.orientation)
        return quat.angle(d) <= tol


def compose(a: Transform, b: Transform) -> Transform:
    return a.compose(b)


def inverse(t: Transform) -> Transform:
    return t.inverse()


def orientation_error(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Rotation vector taking ``current`` onto ``target``, in the common
    base frame (left difference)."""
    return quat.rotation_vector(quat.multiply(target, quat.conjugate(current)))
