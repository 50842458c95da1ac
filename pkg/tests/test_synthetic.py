"""Tests for the synthetic scenario generators and their ground truth."""

from __future__ import annotations

import numpy as np
import pytest

from vranim.alignment import calibrate, find_correspondences
from vranim.core import Role, validate_sequence
from vranim.streams import record_to_line
from vranim.synthetic import (
    ReplayScenario,
    SyntheticScenario,
    generate_alignment_pair,
    generate_replay,
)


class TestAlignmentPair:
    def test_identity_scenario_streams_match_up_to_centroids(self) -> None:
        pair = generate_alignment_pair(
            SyntheticScenario(frames=30, seed=5, noise_sigma=0.0, scale=1.0)
        )
        for mouth, source in zip(pair.mouth_frames, pair.source_frames):
            m = mouth.keypoints.points
            s = source.keypoints.lower_points
            np.testing.assert_allclose(
                m - m.mean(axis=0), s - s.mean(axis=0), atol=1e-12
            )

    def test_fixed_seed_is_byte_identical(self) -> None:
        scenario = SyntheticScenario(frames=40, seed=9, noise_sigma=0.02, shuffle=True)
        a = generate_alignment_pair(scenario)
        b = generate_alignment_pair(scenario)
        lines_a = [record_to_line(r) for r in a.source_frames + a.mouth_frames]
        lines_b = [record_to_line(r) for r in b.source_frames + b.mouth_frames]
        assert lines_a == lines_b
        assert a.truth.permutation == b.truth.permutation

    def test_sequences_are_valid(self) -> None:
        pair = generate_alignment_pair(SyntheticScenario(frames=25, seed=1))
        validate_sequence(pair.source_frames)
        validate_sequence(pair.mouth_frames)
        assert pair.source_frames[0].keypoints.count(Role.POSE) == 36

    def test_mouth_stream_is_inverse_transformed_source(self) -> None:
        """Centroid-relative mouth points equal the inverse true transforms
        applied to the paired source frame's relative points."""
        pair = generate_alignment_pair(
            SyntheticScenario(
                frames=20, seed=13, noise_sigma=0.0, scale=1.5, rotation_deg=8.0,
                offset_scale=0.03, shuffle=True,
            )
        )
        inverses = [t.inverse() for t in pair.truth.transforms]
        for j, mouth in enumerate(pair.mouth_frames):
            source = pair.source_frames[pair.truth.permutation[j]]
            s_rel = source.keypoints.lower_points - source.keypoints.lower_points.mean(axis=0)
            m_rel = mouth.keypoints.points - mouth.keypoints.points.mean(axis=0)
            recovered = np.stack([inverses[l].apply_array(s_rel[l][None])[0] for l in range(20)])
            np.testing.assert_allclose(m_rel, recovered, atol=1e-12)

    def test_calibration_recovers_per_keypoint_scale(self) -> None:
        pair = generate_alignment_pair(
            SyntheticScenario(frames=250, seed=21, noise_sigma=0.01, scale=1.7, offset_scale=0.02)
        )
        model = calibrate(pair.source_frames, pair.mouth_frames)
        for fitted in model.transforms:
            scale = float(np.sqrt(np.abs(np.linalg.det(fitted.linear))))
            assert scale == pytest.approx(1.7, rel=0.05)

    def test_shuffled_permutation_is_recorded(self) -> None:
        pair = generate_alignment_pair(SyntheticScenario(frames=50, seed=3, shuffle=True))
        assert sorted(pair.truth.permutation) == list(range(50))
        assert pair.truth.permutation != tuple(range(50))


class TestReplay:
    def test_sensor_frames_carry_mouth_plus_two_eyes(self) -> None:
        data = generate_replay(ReplayScenario(steps=20, store_size=10, seed=4))
        for rec in data.sensor_records:
            assert rec.keypoints.lower_count == 20
            assert rec.keypoints.count(Role.EYE) == 2
        validate_sequence(data.sensor_records)

    def test_expression_truth_indices_walk_the_store(self) -> None:
        data = generate_replay(ReplayScenario(steps=25, store_size=10, seed=4))
        assert data.truth.expression_indices[:12] == (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1)

    def test_strided_store_subsamples_recording(self) -> None:
        data = generate_replay(ReplayScenario(steps=10, store_size=5, store_stride=3, seed=4))
        assert len(data.store_records) == 5
        assert [r.frame_id for r in data.store_records] == [0, 3, 6, 9, 12]
        assert data.truth.expression_indices[:7] == (0, 0, 1, 1, 1, 2, 2)

    def test_blink_windows_collapse_confidence(self) -> None:
        from vranim.eyetrack import fit_calibration, fuse
        from vranim.pipeline import split_sensor_frame

        data = generate_replay(ReplayScenario(steps=300, store_size=50, seed=6, blink_every=100, blink_length=4))
        cal = fit_calibration(list(data.eye_samples))
        confidences = []
        for rec in data.sensor_records:
            _, left, right = split_sensor_frame(rec, 20)
            _, c = fuse(cal, left, right)
            confidences.append(c)
        for t in data.truth.blink_steps:
            assert confidences[t] < 0.5
        clear = [c for i, c in enumerate(confidences) if i not in set(data.truth.blink_steps)]
        assert min(clear) > 0.9

    def test_deterministic(self) -> None:
        scenario = ReplayScenario(steps=30, store_size=10, seed=8, noise_sigma=0.01)
        a = generate_replay(scenario)
        b = generate_replay(scenario)
        assert [record_to_line(r) for r in a.sensor_records] == [
            record_to_line(r) for r in b.sensor_records
        ]

    def test_alignment_truth_matches_store(self) -> None:
        data = generate_replay(ReplayScenario(steps=10, store_size=30, seed=2))
        model = calibrate(data.store_records, data.mouth_records)
        pairs = find_correspondences(model, data.mouth_records, data.store_records)
        hits = sum(1 for j, p in enumerate(pairs) if p.source_frame_id == j)
        assert hits == len(pairs)
