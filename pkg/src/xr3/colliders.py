"""Collision primitives used for gaze-target and contact detection.

Shapes are analytic (spheres and one capsule) so ray and overlap tests
stay exact. Local coordinates are relative to an attachment frame; use
:func:`posed` to express a primitive in another frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import Transform


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64).reshape(3))
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")

    def contains(self, point: np.ndarray) -> bool:
        return float(np.linalg.norm(point - self.center)) <= self.radius

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float | None:
        """Smallest t >= 0 with |origin + t*direction - center| = radius."""
        m = origin - self.center
        b = float(np.dot(m, direction))
        c = float(np.dot(m, m)) - self.radius * self.radius
        disc = b * b - c
        if disc < 0.0:
            return None
        root = float(np.sqrt(disc))
        t0 = -b - root
        if t0 >= 0.0:
            return t0
        t1 = -b + root
        return t1 if t1 >= 0.0 else None


@dataclass(frozen=True)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64).reshape(3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64).reshape(3))
        if self.radius <= 0:
            raise ValueError("capsule radius must be > 0")

    def _axis(self) -> tuple[np.ndarray, float]:
        seg = self.b - self.a
        length = float(np.linalg.norm(seg))
        return (seg / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])), length

    def distance_to_axis(self, point: np.ndarray) -> float:
        u, length = self._axis()
        s = float(np.clip(np.dot(point - self.a, u), 0.0, length))
        return float(np.linalg.norm(point - (self.a + s * u)))

    def contains(self, point: np.ndarray) -> bool:
        return self.distance_to_axis(point) <= self.radius

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float | None:
        """Smallest t >= 0 hitting the capsule surface (cylinder body or
        either spherical cap)."""
        u, length = self._axis()
        if length < 1e-12:
            return Sphere(self.a, self.radius).ray_hit(origin, direction)

        candidates = []
        w = origin - self.a
        w_par = float(np.dot(w, u))
        d_par = float(np.dot(direction, u))
        w_perp = w - w_par * u
        d_perp = direction - d_par * u

        a2 = float(np.dot(d_perp, d_perp))
        if a2 > 1e-14:
            b2 = 2.0 * float(np.dot(d_perp, w_perp))
            c2 = float(np.dot(w_perp, w_perp)) - self.radius * self.radius
            disc = b2 * b2 - 4.0 * a2 * c2
            if disc >= 0.0:
                root = float(np.sqrt(disc))
                for t in ((-b2 - root) / (2.0 * a2), (-b2 + root) / (2.0 * a2)):
                    if t >= 0.0 and 0.0 <= w_par + t * d_par <= length:
                        candidates.append(t)

        for cap in (self.a, self.b):
            t = Sphere(cap, self.radius).ray_hit(origin, direction)
            if t is not None:
                candidates.append(t)

        return min(candidates) if candidates else None


Primitive = Sphere | Capsule


def posed(prim: Primitive, frame: Transform) -> Primitive:
    """Primitive re-expressed through ``frame`` (local -> world)."""
    if isinstance(prim, Sphere):
        return Sphere(frame.apply(prim.center), prim.radius)
    return Capsule(frame.apply(prim.a), frame.apply(prim.b), prim.radius)


@dataclass(frozen=True)
class ColliderSet:
    """Named robot colliders with their attachment frames.

    ``attach`` is ``base`` for trunk/head or ``left_palm``/``right_palm``
    for the hand spheres.
    """
    entries: tuple[tuple[str, str, Primitive], ...]  # (name, attach, shape)

    def __post_init__(self):
        names = [name for name, _, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("collider names must be unique")

    def pose_all(self, frames: dict[str, Transform]) -> list[tuple[str, Primitive]]:
        out = []
        for name, attach, prim in self.entries:
            out.append((name, posed(prim, frames[attach])))
        return out
