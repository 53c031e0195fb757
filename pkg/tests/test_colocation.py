import numpy as np
import pytest

from xr3 import quat
from xr3.colocation import (AnchorObservation, PlacementOffset, UP_AXIS,
                            apply_placement, compose_placements,
                            invert_placement, to_local_frame, to_shared_frame)
from xr3.transforms import Transform


def random_transform(rng):
    return Transform(rng.uniform(-2, 2, 3), quat.normalize(rng.normal(size=4)))


class TestSharedFrame:
    def test_identity_anchor_is_noop(self):
        pose = Transform(np.array([0.3, 1.2, -0.4]))
        out = to_shared_frame(pose, AnchorObservation())
        assert out.almost_equal(pose, tol=1e-12)

    def test_translated_anchor(self):
        obs = AnchorObservation(Transform(np.array([1.0, 0, 0])))
        pose = Transform(np.array([1.0, 0, 0]))
        out = to_shared_frame(pose, obs)
        assert np.linalg.norm(out.position) < 1e-12

    def test_two_devices_agree_on_a_physical_point(self):
        # ground-truth scene: world-frame anchor and device poses; each
        # device observes the anchor and a shared physical point in its
        # own local frame
        rng = np.random.default_rng(42)
        for _ in range(50):
            anchor_world = random_transform(rng)
            device_a = random_transform(rng)
            device_b = random_transform(rng)
            point_world = Transform(rng.uniform(-2, 2, 3),
                                    quat.normalize(rng.normal(size=4)))

            obs_a = AnchorObservation(device_a.inverse().compose(anchor_world))
            obs_b = AnchorObservation(device_b.inverse().compose(anchor_world))
            point_a = device_a.inverse().compose(point_world)
            point_b = device_b.inverse().compose(point_world)

            shared_a = to_shared_frame(point_a, obs_a)
            shared_b = to_shared_frame(point_b, obs_b)
            assert np.linalg.norm(shared_a.position - shared_b.position) < 1e-9
            assert shared_a.almost_equal(shared_b, tol=1e-9)

    def test_round_trip_local_shared_local(self):
        rng = np.random.default_rng(43)
        obs = AnchorObservation(random_transform(rng))
        pose = random_transform(rng)
        back = to_local_frame(to_shared_frame(pose, obs), obs)
        assert back.almost_equal(pose, tol=1e-9)


class TestPlacement:
    def test_zero_offset_identity(self):
        pose = Transform(np.array([0.5, 0.1, -0.3]))
        assert apply_placement(pose, PlacementOffset()).almost_equal(pose,
                                                                     tol=1e-12)

    def test_half_turn_yaw(self):
        offset = PlacementOffset(np.array([0.0, 0.0, 0.0]), np.pi)
        out = apply_placement(Transform(np.array([1.0, 0, 0])), offset)
        assert np.allclose(out.position, [-1, 0, 0], atol=1e-12)

    def test_yaw_preserves_height(self):
        offset = PlacementOffset(np.array([0.1, 0.0, -0.2]), 1.1)
        out = apply_placement(Transform(np.array([0.3, 0.7, 0.2])), offset)
        assert out.position[1] == pytest.approx(0.7, abs=1e-12)

    def test_composition_matches_sequential_application(self):
        rng = np.random.default_rng(44)
        for _ in range(50):
            first = PlacementOffset(rng.uniform(-1, 1, 3), rng.uniform(-3, 3))
            second = PlacementOffset(rng.uniform(-1, 1, 3), rng.uniform(-3, 3))
            combined = compose_placements(first, second)
            pose = random_transform(rng)
            sequential = apply_placement(apply_placement(pose, first), second)
            at_once = apply_placement(pose, combined)
            assert sequential.almost_equal(at_once, tol=1e-9)

    def test_invert_placement_round_trip(self):
        rng = np.random.default_rng(45)
        offset = PlacementOffset(rng.uniform(-1, 1, 3), 0.7)
        pose = random_transform(rng)
        back = invert_placement(apply_placement(pose, offset), offset)
        assert back.almost_equal(pose, tol=1e-9)

    def test_yaw_axis_is_vertical(self):
        assert np.allclose(UP_AXIS, [0, 1, 0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PlacementOffset(np.array([np.inf, 0, 0]), 0.0)
