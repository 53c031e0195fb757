"""Per-frame operator-to-robot mapping.

One pipeline instance per session. Every operator frame flows through:
device-local poses -> shared frame (anchor) -> robot base frame
(placement inverse), then head orientation pass-through, palm IK per arm,
thumb/index fingertip IK (rooted in the achieved palm frame), direct
joint-angle copy for middle/ring (little finger input is discarded: the
robot hand has four fingers), face mapping, and finally the expressivity
gate. The gate only ever touches face channels; arm, finger, and head
outputs are bit-identical across gate levels.

Determinism: (frame sequence, config, initial state) fully determines the
output sequence; all state lives in RetargetState.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .colocation import (AnchorObservation, PlacementOffset, apply_placement,
                         invert_placement, to_shared_frame)
from .face_mapping import (BlendshapeFrame, FaceMappingConfig, ScreenFaceParams,
                           map_face, select_face_inputs)
from .kinematics import IkSolverConfig, forward_kinematics, solve_ik_pose, \
    solve_ik_position
from .model import RobotModel
from .transforms import Transform

SIDES = ("left", "right")

# interactive solver profile: warm starts make deep basin-hopping
# pointless inside a frame budget
PIPELINE_IK = IkSolverConfig(restarts=2)


class ExpressivityLevel(enum.IntEnum):
    HEAD_ONLY = 0
    HEAD_EYES = 1
    FULL = 2


@dataclass(frozen=True)
class HandSkeletonFrame:
    palm_pose: Transform
    thumb_tip_pose: Transform
    index_tip_pose: Transform
    finger_angles: np.ndarray  # (5, 4): thumb, index, middle, ring, little

    def __post_init__(self):
        a = np.asarray(self.finger_angles, dtype=np.float64).reshape(5, 4)
        object.__setattr__(self, "finger_angles", a)


@dataclass(frozen=True)
class OperatorFrame:
    timestamp_us: int
    head_pose: Transform
    left_hand: HandSkeletonFrame | None
    right_hand: HandSkeletonFrame | None
    blendshapes: BlendshapeFrame
    gaze: tuple[float, float]


@dataclass(frozen=True)
class HandOutput:
    arm_q: np.ndarray            # 7
    thumb_q: np.ndarray          # 4
    index_q: np.ndarray          # 4
    middle_q: np.ndarray         # 4
    ring_q: np.ndarray           # 4
    arm_converged: bool
    thumb_converged: bool
    index_converged: bool
    stale: bool = False

    def angles_flat(self) -> np.ndarray:
        return np.concatenate([self.thumb_q, self.index_q, self.middle_q,
                               self.ring_q])


@dataclass(frozen=True)
class RobotControlFrame:
    timestamp_us: int
    head_orientation: np.ndarray  # unit quaternion, scalar-first
    left: HandOutput
    right: HandOutput
    face: ScreenFaceParams

    def converged_flags(self) -> dict[str, bool]:
        return {
            "left_arm": self.left.arm_converged,
            "left_thumb": self.left.thumb_converged,
            "left_index": self.left.index_converged,
            "right_arm": self.right.arm_converged,
            "right_thumb": self.right.thumb_converged,
            "right_index": self.right.index_converged,
        }


@dataclass
class RetargetState:
    """Mutable per-session solver state: warm starts and freeze values."""
    warm_arm: dict[str, np.ndarray]
    warm_thumb: dict[str, np.ndarray]
    warm_index: dict[str, np.ndarray]
    last_hand: dict[str, HandOutput]
    last_timestamp_us: int = -1
    dropped_stale: int = 0

    @staticmethod
    def initial(model: RobotModel) -> "RetargetState":
        warm_arm = {}
        warm_thumb = {}
        warm_index = {}
        last_hand = {}
        for side in SIDES:
            hand = model.hand(side)
            warm_arm[side] = model.arm_rest(side).copy()
            warm_thumb[side] = hand.thumb_rest.copy()
            warm_index[side] = hand.index_rest.copy()
            last_hand[side] = HandOutput(
                arm_q=model.arm_rest(side).copy(),
                thumb_q=hand.thumb_rest.copy(),
                index_q=hand.index_rest.copy(),
                middle_q=hand.middle_rest.copy(),
                ring_q=hand.ring_rest.copy(),
                arm_converged=True, thumb_converged=True,
                index_converged=True, stale=True)
        return RetargetState(warm_arm, warm_thumb, warm_index, last_hand)


def retarget_head(head_pose: Transform) -> np.ndarray:
    """Head orientation only; translation is discarded so the robot stays
    rooted in the scene."""
    return head_pose.orientation.copy()


def retarget_hand(hand: HandSkeletonFrame, side: str, model: RobotModel,
                  state: RetargetState,
                  ik_cfg: IkSolverConfig = PIPELINE_IK) -> HandOutput:
    """One hand in robot-base coordinates -> arm + finger joints.

    Palm drives a full-pose arm solve; thumb/index tips drive
    position-only solves expressed in the *achieved* palm frame; middle
    and ring copy human joint angles clamped to robot limits. Warm starts
    in ``state`` are updated in place.
    """
    arm = model.arm(side)
    hmodel = model.hand(side)

    arm_res = solve_ik_pose(arm, hand.palm_pose, state.warm_arm[side], ik_cfg)
    state.warm_arm[side] = arm_res.q
    palm_fk = forward_kinematics(arm, arm_res.q)
    palm_inv = palm_fk.inverse()

    thumb_target = palm_inv.compose(hand.thumb_tip_pose).position
    thumb_res = solve_ik_position(hmodel.thumb_chain, thumb_target,
                                  state.warm_thumb[side], ik_cfg)
    state.warm_thumb[side] = thumb_res.q

    index_target = palm_inv.compose(hand.index_tip_pose).position
    index_res = solve_ik_position(hmodel.index_chain, index_target,
                                  state.warm_index[side], ik_cfg)
    state.warm_index[side] = index_res.q

    out = HandOutput(
        arm_q=arm_res.q,
        thumb_q=thumb_res.q,
        index_q=index_res.q,
        middle_q=hmodel.middle.clamp(hand.finger_angles[2]),
        ring_q=hmodel.ring.clamp(hand.finger_angles[3]),
        arm_converged=arm_res.converged,
        thumb_converged=thumb_res.converged,
        index_converged=index_res.converged,
    )
    state.last_hand[side] = out
    return out


def apply_expressivity_gate(frame: RobotControlFrame, level: ExpressivityLevel,
                            rest_face: ScreenFaceParams) -> RobotControlFrame:
    """Mask face channels down to the active expressivity level.

    HEAD_ONLY shows the neutral face with centered eyes; HEAD_EYES passes
    the on-screen eye position through and rests everything else; FULL is
    the identity. Arm, finger, and head channels are never modified.
    """
    if level == ExpressivityLevel.FULL:
        return frame
    if level == ExpressivityLevel.HEAD_ONLY:
        face = replace(rest_face, p_eye_x=0.0, p_eye_y=0.0)
    else:
        face = replace(rest_face, p_eye_x=frame.face.p_eye_x,
                       p_eye_y=frame.face.p_eye_y)
    return replace(frame, face=face)


@dataclass
class PipelineConfig:
    model: RobotModel
    face_cfg: FaceMappingConfig
    anchor: AnchorObservation = field(default_factory=AnchorObservation)
    placement: PlacementOffset = field(default_factory=PlacementOffset)
    level: ExpressivityLevel = ExpressivityLevel.FULL
    ik_cfg: IkSolverConfig = PIPELINE_IK


class RetargetPipeline:
    """Stateful frame-by-frame retargeting for one session.

    Single-writer: process frames from one lane, strictly in timestamp
    order. ``set_placement`` / ``set_level`` / ``set_anchor`` take effect
    from the next frame.
    """

    def __init__(self, cfg: PipelineConfig, state: RetargetState | None = None):
        self.model = cfg.model
        self.face_cfg = cfg.face_cfg
        self.anchor = cfg.anchor
        self.placement = cfg.placement
        self.level = ExpressivityLevel(cfg.level)
        self.ik_cfg = cfg.ik_cfg
        self.state = state if state is not None else RetargetState.initial(cfg.model)

    def set_placement(self, offset: PlacementOffset) -> None:
        self.placement = offset

    def set_level(self, level: ExpressivityLevel) -> None:
        self.level = ExpressivityLevel(level)

    def set_anchor(self, anchor: AnchorObservation) -> None:
        self.anchor = anchor

    def _to_base(self, pose_local: Transform) -> Transform:
        return invert_placement(to_shared_frame(pose_local, self.anchor),
                                self.placement)

    def robot_frames(self) -> dict[str, Transform]:
        """Current shared-frame pose of every collider attachment frame."""
        base = apply_placement(Transform.identity(), self.placement)
        frames = {"base": base}
        for side in SIDES:
            palm = forward_kinematics(self.model.arm(side),
                                      self.state.last_hand[side].arm_q)
            frames[f"{side}_palm"] = base.compose(palm)
        return frames

    def retarget_frame(self, op_frame: OperatorFrame) -> RobotControlFrame | None:
        """Full per-frame mapping; returns None for stale/out-of-order
        frames (counted in state.dropped_stale)."""
        if op_frame.timestamp_us <= self.state.last_timestamp_us:
            self.state.dropped_stale += 1
            return None
        self.state.last_timestamp_us = op_frame.timestamp_us

        head_base = self._to_base(op_frame.head_pose)
        head_orientation = retarget_head(head_base)

        outputs = {}
        for side, hand in (("left", op_frame.left_hand),
                           ("right", op_frame.right_hand)):
            if hand is None:
                # hold the previous output rather than snapping to rest;
                # mark stale so consumers can tell
                outputs[side] = replace(self.state.last_hand[side], stale=True)
                continue
            hand_base = HandSkeletonFrame(
                palm_pose=self._to_base(hand.palm_pose),
                thumb_tip_pose=self._to_base(hand.thumb_tip_pose),
                index_tip_pose=self._to_base(hand.index_tip_pose),
                finger_angles=hand.finger_angles,
            )
            outputs[side] = retarget_hand(hand_base, side, self.model,
                                          self.state, self.ik_cfg)

        inputs = select_face_inputs(op_frame.blendshapes, op_frame.gaze,
                                    self.face_cfg)
        face = map_face(inputs, self.face_cfg)

        frame = RobotControlFrame(
            timestamp_us=op_frame.timestamp_us,
            head_orientation=head_orientation,
            left=outputs["left"],
            right=outputs["right"],
            face=face,
        )
        return apply_expressivity_gate(frame, self.level, self.model.face_rest)
