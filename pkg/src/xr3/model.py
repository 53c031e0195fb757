"""Robot avatar model: two 7-joint arms, four-finger hands, colliders and
screen-face rest parameters, loaded from a YAML file.

The model is configuration, never hard-coded: everything the retargeting
pipeline and the analysis tools need about the robot's shape lives in the
model file. A documented default ships as package data
(``xr3/data/robot_default.yaml``).

Frame conventions: the robot base frame is y-up; arm chains run base to
palm; thumb and index chains are rooted in the palm frame (their base
pose in the robot base frame follows the arm). Middle and ring fingers
are not chains, only joint-limit arrays for direct angle mapping.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .colliders import Capsule, ColliderSet, Sphere
from .errors import ConfigError
from .face_mapping import ScreenFaceParams
from .kinematics import KinematicChain, RevoluteJoint
from .transforms import Transform

SIDES = ("left", "right")
IK_FINGERS = ("thumb", "index")
MAPPED_FINGERS = ("middle", "ring")


@dataclass(frozen=True)
class FingerLimits:
    lo: np.ndarray  # 4 joint lower bounds
    hi: np.ndarray

    def clamp(self, angles: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(angles, dtype=np.float64), self.lo, self.hi)


@dataclass(frozen=True)
class HandModel:
    thumb_chain: KinematicChain   # rooted in the palm frame
    index_chain: KinematicChain   # rooted in the palm frame
    middle: FingerLimits
    ring: FingerLimits
    thumb_rest: np.ndarray
    index_rest: np.ndarray
    middle_rest: np.ndarray
    ring_rest: np.ndarray


@dataclass(frozen=True)
class RobotModel:
    name: str
    left_arm: KinematicChain
    right_arm: KinematicChain
    left_arm_rest: np.ndarray
    right_arm_rest: np.ndarray
    left_hand: HandModel
    right_hand: HandModel
    collider_set: ColliderSet
    face_rest: ScreenFaceParams
    participant_hand_radius: float
    contact_hysteresis: float

    def arm(self, side: str) -> KinematicChain:
        return self.left_arm if side == "left" else self.right_arm

    def arm_rest(self, side: str) -> np.ndarray:
        return self.left_arm_rest if side == "left" else self.right_arm_rest

    def hand(self, side: str) -> HandModel:
        return self.left_hand if side == "left" else self.right_hand


def _transform(node, where: str) -> Transform:
    try:
        xyz = node.get("xyz", [0.0, 0.0, 0.0])
        rpy = node.get("rpy", [0.0, 0.0, 0.0])
        return Transform.from_xyz_rpy(xyz, rpy)
    except Exception as exc:
        raise ConfigError(f"{where}: bad transform: {exc}") from exc


def _chain(node, name: str, root: Transform | None = None) -> KinematicChain:
    joints = []
    prev_extra = root if root is not None else Transform.identity()
    for i, jnode in enumerate(node.get("joints", [])):
        offset = prev_extra.compose(_transform(jnode.get("origin", {}),
                                               f"{name}.joints[{i}]"))
        prev_extra = Transform.identity()
        lo, hi = jnode["limits"]
        joints.append(RevoluteJoint(
            parent_offset=offset,
            axis=np.asarray(jnode.get("axis", [0.0, 0.0, 1.0]), dtype=np.float64),
            limit_lo=float(lo), limit_hi=float(hi),
            name=jnode.get("name", f"{name}_j{i}"),
        ))
    if not joints:
        raise ConfigError(f"{name}: chain has no joints")
    tip = _transform(node.get("tip", {}), f"{name}.tip")
    return KinematicChain(tuple(joints), tip, name=name)


def _rest(node, chain: KinematicChain, name: str) -> np.ndarray:
    rest = np.asarray(node.get("rest", [0.0] * len(chain)), dtype=np.float64)
    if rest.shape != (len(chain),):
        raise ConfigError(f"{name}: rest length != joint count")
    if np.any(rest < chain.limits_lo) or np.any(rest > chain.limits_hi):
        raise ConfigError(f"{name}: rest config outside joint limits")
    return rest


def _finger_limits(node, name: str) -> tuple[FingerLimits, np.ndarray]:
    lim = node.get("limits")
    if lim is None or len(lim) != 4:
        raise ConfigError(f"{name}: need 4 limit pairs")
    lo = np.array([float(p[0]) for p in lim])
    hi = np.array([float(p[1]) for p in lim])
    if np.any(lo > hi):
        raise ConfigError(f"{name}: limit_lo > limit_hi")
    rest = np.asarray(node.get("rest", [0.0] * 4), dtype=np.float64)
    return FingerLimits(lo, hi), np.clip(rest, lo, hi)


def _hand(node, side: str) -> HandModel:
    thumb = _chain(node["thumb"], f"{side}_thumb",
                   root=_transform(node["thumb"].get("origin_palm", {}),
                                   f"{side}_thumb.origin_palm"))
    index = _chain(node["index"], f"{side}_index",
                   root=_transform(node["index"].get("origin_palm", {}),
                                   f"{side}_index.origin_palm"))
    if len(thumb) != 4 or len(index) != 4:
        raise ConfigError(f"{side} hand: thumb/index chains must have 4 joints")
    middle, middle_rest = _finger_limits(node["middle"], f"{side}_middle")
    ring, ring_rest = _finger_limits(node["ring"], f"{side}_ring")
    return HandModel(
        thumb_chain=thumb, index_chain=index, middle=middle, ring=ring,
        thumb_rest=_rest(node["thumb"], thumb, f"{side}_thumb"),
        index_rest=_rest(node["index"], index, f"{side}_index"),
        middle_rest=middle_rest, ring_rest=ring_rest,
    )


def _collider(name: str, node) -> tuple[str, str, Sphere | Capsule]:
    attach = node.get("attach", "base")
    kind = node.get("type")
    if kind == "sphere":
        return name, attach, Sphere(np.asarray(node["center"], dtype=np.float64),
                                    float(node["radius"]))
    if kind == "capsule":
        return name, attach, Capsule(np.asarray(node["a"], dtype=np.float64),
                                     np.asarray(node["b"], dtype=np.float64),
                                     float(node["radius"]))
    raise ConfigError(f"collider {name!r}: unknown type {kind!r}")


def model_from_dict(doc: dict) -> RobotModel:
    try:
        arms = doc["arms"]
        hands = doc["hands"]
        colliders = doc["colliders"]
        face = doc["face_rest"]
    except KeyError as exc:
        raise ConfigError(f"model: missing section {exc}") from exc

    chains = {}
    rests = {}
    for side in SIDES:
        node = arms[side]
        chain = _chain(node, f"{side}_arm",
                       root=_transform(node.get("origin", {}), f"{side}_arm.origin"))
        if len(chain) != 7:
            raise ConfigError(f"{side} arm must have 7 joints, got {len(chain)}")
        chains[side] = chain
        rests[side] = _rest(node, chain, f"{side}_arm")

    entries = tuple(_collider(name, node) for name, node in colliders.items())
    required = {"head", "trunk", "left_hand", "right_hand"}
    if not required.issubset({e[0] for e in entries}):
        raise ConfigError(f"colliders must include {sorted(required)}")

    contact = doc.get("contact", {})
    return RobotModel(
        name=doc.get("name", "robot"),
        left_arm=chains["left"], right_arm=chains["right"],
        left_arm_rest=rests["left"], right_arm_rest=rests["right"],
        left_hand=_hand(hands["left"], "left"),
        right_hand=_hand(hands["right"], "right"),
        collider_set=ColliderSet(entries),
        face_rest=ScreenFaceParams(**face),
        participant_hand_radius=float(contact.get("participant_hand_radius", 0.05)),
        contact_hysteresis=float(contact.get("hysteresis", 0.005)),
    )


def model_to_dict(path_or_doc) -> dict:
    """Raw model document (for session snapshots). Accepts a path or an
    already-loaded dict."""
    if isinstance(path_or_doc, dict):
        return path_or_doc
    with open(path_or_doc, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def load_robot_model(path: str | Path | None = None) -> RobotModel:
    """Load a robot model file; ``None`` loads the bundled default."""
    return model_from_dict(load_model_doc(path))


def load_model_doc(path: str | Path | None = None) -> dict:
    if path is None:
        ref = importlib.resources.files("xr3.data").joinpath("robot_default.yaml")
        return yaml.safe_load(ref.read_text(encoding="utf-8"))
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)
