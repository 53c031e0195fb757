"""Shared-coordinate-frame math.

Both devices observe one physical anchor; expressing every tracked pose
relative to that anchor puts them in a single shared frame without any
marker calibration. On top of that, a runtime placement offset (small
translation plus yaw about the shared frame's vertical axis, +Y here)
positions the robot base in the room. The offset applies to the robot
base only; tracked participant/operator poses are never offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .transforms import Transform

UP_AXIS = np.array([0.0, 1.0, 0.0])  # yaw axis of the shared frame


@dataclass(frozen=True)
class AnchorObservation:
    """Pose of the shared spatial anchor as seen in one device's local frame."""
    anchor_in_local: Transform = field(default_factory=Transform.identity)


@dataclass(frozen=True)
class PlacementOffset:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(t)) and np.isfinite(self.yaw)):
            raise ValueError("placement offset must be finite")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "yaw", float(self.yaw))

    def as_transform(self) -> Transform:
        return Transform(self.translation, quat.from_axis_angle(UP_AXIS, self.yaw))


def to_shared_frame(pose_local: Transform, obs: AnchorObservation) -> Transform:
    """Device-local pose re-expressed in the anchor-centered shared frame."""
    return obs.anchor_in_local.inverse().compose(pose_local)


def to_local_frame(pose_shared: Transform, obs: AnchorObservation) -> Transform:
    """Inverse of :func:`to_shared_frame`."""
    return obs.anchor_in_local.compose(pose_shared)


def apply_placement(pose_base: Transform, offset: PlacementOffset) -> Transform:
    """Robot-base pose into the shared frame: yaw about the vertical axis
    through the robot base origin, then translate. Zero offset is identity."""
    return offset.as_transform().compose(pose_base)


def invert_placement(pose_shared: Transform, offset: PlacementOffset) -> Transform:
    """Shared-frame pose into robot-base coordinates (for IK targets)."""
    return offset.as_transform().inverse().compose(pose_shared)


def compose_placements(first: PlacementOffset, second: PlacementOffset) -> PlacementOffset:
    """Single offset equivalent to applying ``first`` then ``second``."""
    t = second.translation + quat.rotate(
        quat.from_axis_angle(UP_AXIS, second.yaw), first.translation)
    return PlacementOffset(t, first.yaw + second.yaw)
