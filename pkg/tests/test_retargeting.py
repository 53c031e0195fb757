import time
from dataclasses import replace

import numpy as np
import pytest

from xr3 import quat
from xr3.colocation import AnchorObservation, PlacementOffset
from xr3.face_mapping import BlendshapeFrame, ScreenFaceParams
from xr3.kinematics import forward_kinematics
from xr3.retargeting import (ExpressivityLevel, HandSkeletonFrame,
                             OperatorFrame, PipelineConfig, RetargetPipeline,
                             RetargetState, apply_expressivity_gate,
                             retarget_hand, retarget_head)
from xr3.transforms import Transform


def neutral_hand(model, side):
    hand = model.hand(side)
    palm = forward_kinematics(model.arm(side), model.arm_rest(side))
    thumb = palm.compose(forward_kinematics(hand.thumb_chain, hand.thumb_rest))
    index = palm.compose(forward_kinematics(hand.index_chain, hand.index_rest))
    angles = np.vstack([hand.thumb_rest, hand.index_rest, hand.middle_rest,
                        hand.ring_rest, np.zeros(4)])
    return HandSkeletonFrame(palm, thumb, index, angles)


def neutral_frame(model, ts=1000):
    return OperatorFrame(ts, Transform(np.array([0.0, 1.6, 1.0])),
                         neutral_hand(model, "left"),
                         neutral_hand(model, "right"),
                         BlendshapeFrame.zeros(), (0.0, 0.0))


def make_pipeline(model, face_cfg, **kw):
    return RetargetPipeline(PipelineConfig(model=model, face_cfg=face_cfg, **kw))


class TestRetargetHead:
    def test_translation_discarded(self):
        pose = Transform(np.array([0.3, 1.5, 0.2]))
        assert np.allclose(retarget_head(pose), [1, 0, 0, 0])

    def test_yaw_passes_through(self):
        q = quat.from_axis_angle(np.array([0, 1, 0]), np.radians(30))
        pose = Transform(np.array([9.0, 9.0, 9.0]), q)
        assert np.allclose(retarget_head(pose), q)

    def test_position_independence(self):
        q = quat.from_axis_angle(np.array([1, 0, 0]), 0.7)
        a = retarget_head(Transform(np.zeros(3), q))
        b = retarget_head(Transform(np.array([5.0, -2.0, 1.0]), q))
        assert np.array_equal(a, b)


class TestRetargetHand:
    def test_rest_fixed_point(self, model):
        state = RetargetState.initial(model)
        out = retarget_hand(neutral_hand(model, "left"), "left", model, state)
        assert out.arm_converged and out.thumb_converged and out.index_converged
        assert np.allclose(out.arm_q, model.arm_rest("left"), atol=1e-6)
        assert not out.stale

    def test_middle_ring_direct_copy_with_clamp(self, model):
        hand = neutral_hand(model, "left")
        angles = hand.finger_angles.copy()
        angles[2] = [0.1, 0.2, 0.3, 0.4]     # middle, within limits
        angles[3] = [9.0, 9.0, 9.0, 9.0]     # ring, beyond limits
        hand = replace(hand, finger_angles=angles)
        state = RetargetState.initial(model)
        out = retarget_hand(hand, "left", model, state)
        assert np.allclose(out.middle_q, [0.1, 0.2, 0.3, 0.4])
        assert np.allclose(out.ring_q, model.left_hand.ring.hi)

    def test_little_finger_ignored(self, model):
        hand = neutral_hand(model, "left")
        angles = hand.finger_angles.copy()
        angles[4] = [1.0, 1.0, 1.0, 1.0]
        state = RetargetState.initial(model)
        a = retarget_hand(replace(hand, finger_angles=angles), "left", model,
                          state)
        b = retarget_hand(hand, "left", model, RetargetState.initial(model))
        assert np.array_equal(a.angles_flat(), b.angles_flat())

    def test_fk_generated_reach_path_tracks_targets(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg)
        rest = model.arm_rest("right")
        delta = np.array([0.3, 0.4, 0.2, 0.5, 0.1, -0.3, 0.2])
        arm = model.arm("right")
        for k in range(40):
            q_t = rest + delta * (k / 39)
            palm_target = forward_kinematics(arm, q_t)
            hand = neutral_hand(model, "right")
            thumb = palm_target.compose(forward_kinematics(
                model.right_hand.thumb_chain, model.right_hand.thumb_rest))
            index = palm_target.compose(forward_kinematics(
                model.right_hand.index_chain, model.right_hand.index_rest))
            frame = OperatorFrame(
                1000 + k, Transform(), neutral_hand(model, "left"),
                HandSkeletonFrame(palm_target, thumb, index,
                                  hand.finger_angles),
                BlendshapeFrame.zeros(), (0.0, 0.0))
            out = pipeline.retarget_frame(frame)
            achieved = forward_kinematics(arm, out.right.arm_q)
            assert out.right.arm_converged
            assert np.linalg.norm(achieved.position - palm_target.position) \
                < 1e-3
            assert out.right.thumb_converged and out.right.index_converged

    def test_missing_hand_freezes_output(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg)
        first = pipeline.retarget_frame(neutral_frame(model, ts=1))
        gone = replace(neutral_frame(model, ts=2), left_hand=None)
        second = pipeline.retarget_frame(gone)
        assert second.left.stale
        assert np.array_equal(second.left.arm_q, first.left.arm_q)
        assert np.array_equal(second.left.angles_flat(),
                              first.left.angles_flat())
        assert not second.right.stale


class TestExpressivityGate:
    def make_frame(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg,
                                 level=ExpressivityLevel.FULL)
        values = np.zeros(70)
        values[face_cfg.input_indices["c_eye"]] = 1.0
        frame = replace(neutral_frame(model),
                        blendshapes=BlendshapeFrame(values), gaze=(0.3, -0.3))
        return pipeline.retarget_frame(frame)

    def test_full_is_identity(self, model, face_cfg):
        frame = self.make_frame(model, face_cfg)
        assert apply_expressivity_gate(frame, ExpressivityLevel.FULL,
                                       model.face_rest) is frame

    def test_head_only_rests_face_and_centers_eyes(self, model, face_cfg):
        frame = self.make_frame(model, face_cfg)
        assert frame.face.s_eye_z == pytest.approx(0.1, abs=1e-12)
        out = apply_expressivity_gate(frame, ExpressivityLevel.HEAD_ONLY,
                                      model.face_rest)
        assert out.face == replace(model.face_rest, p_eye_x=0.0, p_eye_y=0.0)
        assert np.array_equal(out.left.arm_q, frame.left.arm_q)
        assert np.array_equal(out.head_orientation, frame.head_orientation)

    def test_head_eyes_passes_gaze_only(self, model, face_cfg):
        frame = self.make_frame(model, face_cfg)
        out = apply_expressivity_gate(frame, ExpressivityLevel.HEAD_EYES,
                                      model.face_rest)
        assert out.face.p_eye_x == frame.face.p_eye_x
        assert out.face.p_eye_y == frame.face.p_eye_y
        assert out.face.s_eye_z == model.face_rest.s_eye_z
        assert out.face.r_ear_x_left == model.face_rest.r_ear_x_left


class TestRetargetFrame:
    def test_neutral_frame_gives_rest_output(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg)
        out = pipeline.retarget_frame(neutral_frame(model))
        assert np.allclose(out.left.arm_q, model.arm_rest("left"), atol=1e-6)
        assert np.allclose(out.right.arm_q, model.arm_rest("right"), atol=1e-6)
        assert np.allclose(out.head_orientation, [1, 0, 0, 0])
        assert out.face == model.face_rest
        assert out.timestamp_us == 1000

    def test_stale_frames_dropped_and_counted(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg)
        assert pipeline.retarget_frame(neutral_frame(model, ts=10)) is not None
        assert pipeline.retarget_frame(neutral_frame(model, ts=10)) is None
        assert pipeline.retarget_frame(neutral_frame(model, ts=5)) is None
        assert pipeline.state.dropped_stale == 2

    def test_deterministic_replay(self, model, face_cfg):
        rng = np.random.default_rng(77)
        frames = []
        rest = model.arm_rest("right")
        arm = model.arm("right")
        for k in range(30):
            q_t = rest + np.array([0.3, 0.4, 0.2, 0.5, 0.1, -0.3, 0.2]) \
                * rng.random()
            palm = forward_kinematics(arm, q_t)
            base = neutral_frame(model, ts=100 + k)
            hand = replace(neutral_hand(model, "right"), palm_pose=palm)
            frames.append(replace(base, right_hand=hand))

        def run():
            pipeline = make_pipeline(model, face_cfg)
            out = []
            for f in frames:
                r = pipeline.retarget_frame(f)
                out.append((r.left.arm_q.tobytes(), r.right.arm_q.tobytes(),
                            r.right.angles_flat().tobytes(), r.face))
            return out

        assert run() == run()

    def test_placement_offset_moves_targets(self, model, face_cfg):
        # identical device input, placed robot: IK target shifts by the
        # inverse placement, so the arm solution changes
        neutral = neutral_frame(model)
        plain = make_pipeline(model, face_cfg).retarget_frame(neutral)
        offset = PlacementOffset(np.array([0.05, 0.0, 0.0]), 0.0)
        placed = make_pipeline(model, face_cfg,
                               placement=offset).retarget_frame(neutral)
        assert not np.allclose(plain.right.arm_q, placed.right.arm_q)
        achieved = forward_kinematics(model.arm("right"), placed.right.arm_q)
        want = neutral.right_hand.palm_pose.position - np.array([0.05, 0, 0])
        assert np.linalg.norm(achieved.position - want) < 2e-3

    def test_anchor_applies_to_all_poses(self, model, face_cfg):
        # device-local frames shifted by the anchor come out identical in
        # the shared frame
        anchor = AnchorObservation(Transform(np.array([0.5, 0.0, -0.2])))
        shift = anchor.anchor_in_local
        base = neutral_frame(model)
        shifted = OperatorFrame(
            base.timestamp_us, shift.compose(base.head_pose),
            HandSkeletonFrame(
                shift.compose(base.left_hand.palm_pose),
                shift.compose(base.left_hand.thumb_tip_pose),
                shift.compose(base.left_hand.index_tip_pose),
                base.left_hand.finger_angles),
            HandSkeletonFrame(
                shift.compose(base.right_hand.palm_pose),
                shift.compose(base.right_hand.thumb_tip_pose),
                shift.compose(base.right_hand.index_tip_pose),
                base.right_hand.finger_angles),
            base.blendshapes, base.gaze)
        plain = make_pipeline(model, face_cfg).retarget_frame(base)
        anchored = make_pipeline(model, face_cfg,
                                 anchor=anchor).retarget_frame(shifted)
        assert np.allclose(plain.right.arm_q, anchored.right.arm_q, atol=1e-9)
        assert np.allclose(plain.left.arm_q, anchored.left.arm_q, atol=1e-9)

    def test_frame_budget_for_72hz(self, model, face_cfg):
        pipeline = make_pipeline(model, face_cfg)
        rest = model.arm_rest("right")
        arm = model.arm("right")
        times = []
        for k in range(60):
            q_t = rest + np.array([0.3, 0.4, 0.2, 0.5, 0.1, -0.3, 0.2]) \
                * (k / 59)
            palm = forward_kinematics(arm, q_t)
            hand = replace(neutral_hand(model, "right"), palm_pose=palm)
            frame = replace(neutral_frame(model, ts=1000 + k), right_hand=hand)
            t0 = time.perf_counter()
            pipeline.retarget_frame(frame)
            times.append(time.perf_counter() - t0)
        median = sorted(times)[len(times) // 2]
        assert median < 13.9e-3, f"median frame cost {median * 1e3:.1f} ms"
