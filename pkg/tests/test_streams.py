"""Round-trip and validation tests for the file formats."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from vranim.alignment import AlignmentModel
from vranim.core import FrameRecord, Keypoint, KeypointSet, Role, Transform2D
from vranim.driving import EyeBoundary
from vranim.eyetrack import CalibrationSample, EyeCalibration, GazeState
from vranim.pipeline import PipelineState
from vranim.retrieval import RetrievalState
from vranim.blend import FeatureGrid
from vranim import streams
from vranim.synthetic import GroundTruth, SyntheticScenario, generate_alignment_pair


def _gnarly_floats(rng: np.random.Generator, shape) -> np.ndarray:
    """Floats that expose any lossy serialization: full-precision randoms."""
    mantissa = rng.uniform(-1.0, 1.0, size=shape)
    scale = np.exp(rng.uniform(-8, 2, size=shape))
    return mantissa * scale


class TestRecordRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path) -> None:
        rng = np.random.default_rng(23)
        roles = (Role.LOWER_FACE,) * 4 + (Role.EYE, Role.POSE)
        records = [
            FrameRecord(
                i,
                i / 3.0 + 1e-9,
                KeypointSet(np.clip(_gnarly_floats(rng, (6, 2)), -1, 1), roles),
                f"asset/{i}",
            )
            for i in range(20)
        ]
        path = tmp_path / "stream.jsonl"
        streams.write_records(path, records)
        loaded = streams.read_records(path)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert a.frame_id == b.frame_id
            assert a.timestamp == b.timestamp  # bit-exact
            assert a.payload_ref == b.payload_ref
            assert a.keypoints.roles == b.keypoints.roles
            np.testing.assert_array_equal(a.keypoints.points, b.keypoints.points)

    def test_write_is_deterministic(self, tmp_path) -> None:
        pair = generate_alignment_pair(SyntheticScenario(frames=10, seed=3, noise_sigma=0.01))
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        streams.write_records(a, pair.source_frames)
        streams.write_records(b, pair.source_frames)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_version_rejected(self, tmp_path) -> None:
        path = tmp_path / "bad.jsonl"
        path.write_text('{"frame_id": 0, "timestamp": 0.0, "points": [], "roles": [], "payload_ref": "x"}\n')
        with pytest.raises(streams.StreamFormatError):
            streams.read_records(path)

    def test_garbage_line_rejected_with_context(self, tmp_path) -> None:
        path = tmp_path / "bad.jsonl"
        path.write_text("not json at all\n")
        with pytest.raises(streams.StreamFormatError, match="line 1"):
            streams.read_records(path)

    def test_lenient_reader_yields_invalid_frames(self, tmp_path) -> None:
        good = FrameRecord(0, 0.0, KeypointSet(np.zeros((2, 2)), (Role.LOWER_FACE,) * 2), "a")
        line = streams.record_to_line(good)
        bad = json.loads(line)
        bad["points"] = [[0.0, 0.0], [None, 0.0]]
        path = tmp_path / "mixed.jsonl"
        path.write_text(line + "\n" + json.dumps(bad) + "\n" + line.replace('"frame_id":0', '"frame_id":1') + "\n")
        items = list(streams.iter_records_lenient(path))
        assert isinstance(items[0], FrameRecord)
        assert isinstance(items[1], streams.InvalidFrame)
        assert items[1].line_number == 2
        assert isinstance(items[2], FrameRecord)

    def test_empty_file_is_empty_stream(self, tmp_path) -> None:
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert streams.read_records(path) == []


class TestArtifacts:
    def test_alignment_model_round_trip(self, tmp_path) -> None:
        rng = np.random.default_rng(29)
        transforms = tuple(
            Transform2D.from_linear(np.eye(2) + 0.2 * _gnarly_floats(rng, (2, 2)), _gnarly_floats(rng, 2))
            for _ in range(5)
        )
        model = AlignmentModel(transforms, iteration_count=7, final_residual=0.0123, degenerate_indices=(2,))
        path = tmp_path / "model.json"
        streams.write_alignment_model(path, model)
        loaded = streams.read_alignment_model(path)
        assert loaded.iteration_count == 7
        assert loaded.final_residual == 0.0123
        assert loaded.degenerate_indices == (2,)
        for a, b in zip(model.transforms, loaded.transforms):
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_eye_calibration_round_trip(self, tmp_path) -> None:
        cal = EyeCalibration(
            Transform2D.from_linear([[1.5, 0.1], [-0.2, 1.3]], [0.05, -0.1]),
            Transform2D.from_linear([[1.2, -0.05], [0.15, 1.4]], [-0.08, 0.02]),
            fit_residual=1.25e-10,
        )
        path = tmp_path / "eyes.json"
        streams.write_eye_calibration(path, cal)
        loaded = streams.read_eye_calibration(path)
        np.testing.assert_array_equal(loaded.left_transform.matrix, cal.left_transform.matrix)
        np.testing.assert_array_equal(loaded.right_transform.matrix, cal.right_transform.matrix)
        assert loaded.fit_residual == cal.fit_residual

    def test_eye_boundary_round_trip(self, tmp_path) -> None:
        boundary = EyeBoundary(
            origin=Keypoint(0.25, 0.38),
            right=Keypoint(0.06, 0.01),
            left=Keypoint(-0.05, 0.005),
            up=Keypoint(0.0, 0.04),
            down=Keypoint(-0.01, -0.07),
        )
        path = tmp_path / "boundary.json"
        streams.write_eye_boundary(path, boundary)
        loaded = streams.read_eye_boundary(path)
        assert loaded == boundary

    def test_boundary_annotation_converts_absolute_points(self, tmp_path) -> None:
        path = tmp_path / "annotation.json"
        path.write_text(
            json.dumps(
                {
                    "origin": [0.25, 0.38],
                    "gaze_right": [0.31, 0.39],
                    "gaze_left": [0.20, 0.385],
                    "gaze_up": [0.25, 0.42],
                    "gaze_down": [0.24, 0.31],
                }
            )
        )
        boundary = streams.parse_boundary_annotation(path)
        assert boundary.origin == Keypoint(0.25, 0.38)
        assert boundary.right.x == pytest.approx(0.06)
        assert boundary.down.y == pytest.approx(-0.07)

    def test_boundary_annotation_rejects_out_of_range(self, tmp_path) -> None:
        path = tmp_path / "annotation.json"
        path.write_text(
            json.dumps(
                {
                    "origin": [0.25, 0.38],
                    "gaze_right": [1.31, 0.39],
                    "gaze_left": [0.20, 0.385],
                    "gaze_up": [0.25, 0.42],
                    "gaze_down": [0.24, 0.31],
                }
            )
        )
        with pytest.raises(streams.StreamFormatError):
            streams.parse_boundary_annotation(path)

    def test_boundary_annotation_rejects_degenerate_extent(self, tmp_path) -> None:
        path = tmp_path / "annotation.json"
        path.write_text(
            json.dumps(
                {
                    "origin": [0.25, 0.38],
                    "gaze_right": [0.25, 0.38],
                    "gaze_left": [0.20, 0.385],
                    "gaze_up": [0.25, 0.42],
                    "gaze_down": [0.24, 0.31],
                }
            )
        )
        with pytest.raises(streams.StreamFormatError):
            streams.parse_boundary_annotation(path)

    def test_eye_samples_round_trip(self, tmp_path) -> None:
        samples = [
            CalibrationSample(Keypoint(0.1, 0.2), Keypoint(-0.1, 0.15), (0.5, -0.5)),
            CalibrationSample(Keypoint(0.3, -0.2), Keypoint(0.25, -0.22), (0.0, 0.9)),
        ]
        path = tmp_path / "samples.jsonl"
        streams.write_eye_samples(path, samples)
        loaded = streams.read_eye_samples(path)
        assert loaded == samples

    def test_ground_truth_round_trip(self, tmp_path) -> None:
        truth = GroundTruth(
            transforms=(Transform2D.scaling(1.7), Transform2D.translation(0.1, -0.2)),
            permutation=(2, 0, 1),
        )
        path = tmp_path / "truth.json"
        streams.write_ground_truth(path, truth)
        loaded = streams.read_ground_truth(path)
        assert loaded.permutation == truth.permutation
        for a, b in zip(truth.transforms, loaded.transforms):
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_wrong_kind_rejected(self, tmp_path) -> None:
        boundary_path = tmp_path / "boundary.json"
        streams.write_eye_boundary(
            boundary_path,
            EyeBoundary(
                origin=Keypoint(0.0, 0.0),
                right=Keypoint(0.1, 0.0),
                left=Keypoint(-0.1, 0.0),
                up=Keypoint(0.0, 0.1),
                down=Keypoint(0.0, -0.1),
            ),
        )
        with pytest.raises(streams.StreamFormatError):
            streams.read_alignment_model(boundary_path)


class TestPipelineStateCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path) -> None:
        rng = np.random.default_rng(31)
        state = PipelineState(
            retrieval=RetrievalState(current_index=17, current_distance=0.1234567891234567),
            gaze=GazeState(position=(0.123456789, -0.987654321), confidence=0.87, blink=False),
            expression_memory=FeatureGrid(_gnarly_floats(rng, (6, 2, 1))),
            output_memory=FeatureGrid(_gnarly_floats(rng, (6, 2, 1))),
            frame_count=42,
            last_timestamp=1.4000000000000001,
        )
        path = tmp_path / "state.json"
        streams.write_pipeline_state(path, state)
        loaded = streams.read_pipeline_state(path)
        assert loaded.retrieval == state.retrieval
        assert loaded.gaze == state.gaze
        assert loaded.frame_count == 42
        assert loaded.last_timestamp == state.last_timestamp
        np.testing.assert_array_equal(loaded.expression_memory.data, state.expression_memory.data)
        np.testing.assert_array_equal(loaded.output_memory.data, state.output_memory.data)

    def test_fresh_state_round_trip(self, tmp_path) -> None:
        state = PipelineState()
        path = tmp_path / "state.json"
        streams.write_pipeline_state(path, state)
        loaded = streams.read_pipeline_state(path)
        assert loaded == state

    def test_atomic_write_leaves_no_temp_file(self, tmp_path) -> None:
        path = tmp_path / "state.json"
        streams.write_pipeline_state(path, PipelineState())
        assert path.exists()
        assert not list(tmp_path.glob("*.tmp"))
