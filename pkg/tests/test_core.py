"""Unit tests for the shared domain types."""

from __future__ import annotations

import numpy as np
import pytest

from vranim.core import (
    EmptyRoleError,
    FrameRecord,
    Keypoint,
    KeypointSet,
    PartitionError,
    Role,
    Transform2D,
    TransformError,
    default_roles,
    validate_sequence,
)


def _lower_set(points) -> KeypointSet:
    pts = np.asarray(points, dtype=float)
    return KeypointSet(pts, (Role.LOWER_FACE,) * pts.shape[0])


class TestKeypoint:
    def test_bounds_predicate(self) -> None:
        assert Keypoint(0.5, -0.5).in_bounds
        assert Keypoint(1.0, -1.0).in_bounds
        assert not Keypoint(1.2, 0.0).in_bounds

    def test_out_of_bounds_permitted(self) -> None:
        """Post-projection coordinates may leave the unit square transiently."""
        kp = Keypoint(1.4, -1.3)
        assert not kp.in_bounds

    def test_non_finite_rejected(self) -> None:
        with pytest.raises(ValueError):
            Keypoint(float("nan"), 0.0)
        with pytest.raises(ValueError):
            Keypoint(0.0, float("inf"))


class TestTransform2D:
    def test_identity_is_exact(self) -> None:
        t = Transform2D.identity()
        p = Keypoint(0.5, -0.2)
        out = t.apply(p)
        assert (out.x, out.y) == (0.5, -0.2)

    def test_translation(self) -> None:
        out = Transform2D.translation(0.1, 0.2).apply(Keypoint(0.0, 0.0))
        assert (out.x, out.y) == (0.1, 0.2)

    def test_scaling_about_origin(self) -> None:
        out = Transform2D.scaling(2.0).apply(Keypoint(0.3, 0.3))
        assert (out.x, out.y) == (0.6, 0.6)

    def test_bad_bottom_row_rejected(self) -> None:
        m = np.eye(3)
        m[2, 0] = 1e-9
        with pytest.raises(TransformError):
            Transform2D(m)

    def test_singular_linear_block_rejected(self) -> None:
        m = np.eye(3)
        m[1, 1] = 0.0
        with pytest.raises(TransformError):
            Transform2D(m)

    def test_composition_matches_sequential_application(self) -> None:
        rng = np.random.default_rng(42)
        for _ in range(50):
            a = Transform2D.from_linear(rng.normal(size=(2, 2)) + np.eye(2), rng.normal(size=2))
            b = Transform2D.from_linear(rng.normal(size=(2, 2)) + np.eye(2), rng.normal(size=2))
            p = Keypoint(*rng.uniform(-1, 1, size=2))
            composed = a.compose(b).apply(p)
            chained = a.apply(b.apply(p))
            assert composed.x == pytest.approx(chained.x, abs=1e-12)
            assert composed.y == pytest.approx(chained.y, abs=1e-12)

    def test_inverse_round_trip(self) -> None:
        t = Transform2D.from_linear([[1.2, 0.3], [-0.1, 0.9]], [0.05, -0.02])
        p = Keypoint(0.4, -0.6)
        back = t.inverse().apply(t.apply(p))
        assert back.x == pytest.approx(p.x, abs=1e-12)
        assert back.y == pytest.approx(p.y, abs=1e-12)

    def test_matrix_is_read_only(self) -> None:
        t = Transform2D.identity()
        with pytest.raises(ValueError):
            t.matrix[0, 0] = 2.0


class TestKeypointSet:
    def test_centroid_of_two_points(self) -> None:
        kps = _lower_set([(0.0, 0.0), (2.0, 2.0)])
        c = kps.centroid(Role.LOWER_FACE)
        assert (c.x, c.y) == (1.0, 1.0)

    def test_centroid_singleton_is_identity(self) -> None:
        kps = _lower_set([(0.3, -0.4)])
        c = kps.centroid(Role.LOWER_FACE)
        assert (c.x, c.y) == (0.3, -0.4)

    def test_centroid_matches_naive_summation_oracle(self) -> None:
        rng = np.random.default_rng(7)
        points = rng.uniform(-0.5, 0.5, size=(20, 2))
        kps = _lower_set(points)
        # Independent oracle: plain python accumulation, no numpy mean.
        sx = sy = 0.0
        for x, y in points:
            sx += float(x)
            sy += float(y)
        c = kps.centroid(Role.LOWER_FACE)
        assert c.x == pytest.approx(sx / 20.0, abs=1e-12)
        assert c.y == pytest.approx(sy / 20.0, abs=1e-12)

    def test_centroid_is_translation_equivariant(self) -> None:
        rng = np.random.default_rng(11)
        points = rng.uniform(-0.5, 0.5, size=(12, 2))
        kps = _lower_set(points)
        moved = kps.shifted(0.17, -0.23)
        base = kps.centroid(Role.LOWER_FACE)
        shifted = moved.centroid(Role.LOWER_FACE)
        assert shifted.x == pytest.approx(base.x + 0.17, abs=1e-12)
        assert shifted.y == pytest.approx(base.y - 0.23, abs=1e-12)

    def test_centroid_empty_role_raises(self) -> None:
        kps = _lower_set([(0.0, 0.0)])
        with pytest.raises(EmptyRoleError):
            kps.centroid(Role.EYE)

    def test_role_count_mismatch_rejected(self) -> None:
        with pytest.raises(PartitionError):
            KeypointSet(np.zeros((3, 2)), (Role.LOWER_FACE, Role.EYE))

    def test_lower_face_must_come_first(self) -> None:
        with pytest.raises(PartitionError):
            KeypointSet(np.zeros((2, 2)), (Role.EYE, Role.LOWER_FACE))

    def test_eye_and_pose_may_interleave(self) -> None:
        kps = KeypointSet(np.zeros((4, 2)), (Role.LOWER_FACE, Role.POSE, Role.EYE, Role.POSE))
        assert kps.lower_count == 1
        assert kps.count(Role.POSE) == 2

    def test_non_finite_points_rejected(self) -> None:
        pts = np.zeros((2, 2))
        pts[1, 0] = float("nan")
        with pytest.raises(PartitionError):
            KeypointSet(pts, (Role.LOWER_FACE,) * 2)

    def test_subset_and_lower_prefix_agree(self) -> None:
        roles = default_roles(3, 2, 2)
        pts = np.arange(14, dtype=float).reshape(7, 2)
        kps = KeypointSet(pts, roles)
        np.testing.assert_array_equal(kps.subset(Role.LOWER_FACE).points, kps.lower_points)
        assert kps.subset(Role.EYE).points.shape == (2, 2)

    def test_points_are_read_only(self) -> None:
        kps = _lower_set([(0.0, 0.0)])
        with pytest.raises(ValueError):
            kps.points[0, 0] = 5.0


class TestFrameRecord:
    def test_sequence_validation(self) -> None:
        kps = _lower_set([(0.0, 0.0)])
        good = [
            FrameRecord(0, 0.0, kps, "a"),
            FrameRecord(1, 0.5, kps, "b"),
        ]
        validate_sequence(good)
        with pytest.raises(ValueError):
            validate_sequence([good[0], FrameRecord(0, 1.0, kps, "c")])
        with pytest.raises(ValueError):
            validate_sequence([good[1], FrameRecord(2, 0.5, kps, "c")])

    def test_default_roles_layout(self) -> None:
        roles = default_roles()
        assert len(roles) == 68
        assert roles[:20] == (Role.LOWER_FACE,) * 20
        assert roles[20] is Role.EYE
        assert roles.count(Role.POSE) == 36
