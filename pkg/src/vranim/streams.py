"""File formats: JSON-lines keypoint streams and JSON calibration artifacts.

Floats are serialized with Python's shortest-round-trip representation, so a
write/read cycle reproduces every value bit-exactly and identical inputs
always produce byte-identical files. All writers go through a
write-temp-then-rename step, so readers never observe partial files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .alignment import AlignmentModel
from .blend import BlendConfig, FeatureGrid
from .core import FrameRecord, Keypoint, KeypointSet, Role, Transform2D
from .driving import EyeBoundary
from .eyetrack import CalibrationSample, EyeCalibration, GazeState
from .retrieval import RetrievalState
from .synthetic import GroundTruth

SCHEMA_VERSION = 1


class StreamFormatError(ValueError):
    """A file or line could not be parsed as the documented format."""


@dataclass(frozen=True)
class InvalidFrame:
    """A line that parsed as JSON but does not form a valid frame record."""

    line_number: int
    reason: str


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Keypoint stream files (JSON lines)
# ---------------------------------------------------------------------------


def record_to_line(record: FrameRecord) -> str:
    return _dumps(
        {
            "v": SCHEMA_VERSION,
            "frame_id": record.frame_id,
            "timestamp": record.timestamp,
            "points": [[float(x), float(y)] for x, y in record.keypoints.points],
            "roles": [role.value for role in record.keypoints.roles],
            "payload_ref": record.payload_ref,
        }
    )


def _record_from_payload(payload: dict) -> FrameRecord:
    try:
        points = np.array(payload["points"], dtype=float)
        roles = tuple(Role(r) for r in payload["roles"])
        return FrameRecord(
            frame_id=int(payload["frame_id"]),
            timestamp=float(payload["timestamp"]),
            keypoints=KeypointSet(points, roles),
            payload_ref=str(payload["payload_ref"]),
        )
    except KeyError as exc:
        raise StreamFormatError(f"missing field {exc}") from exc


def _parse_line(line_number: int, line: str) -> dict:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"line {line_number}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise StreamFormatError(f"line {line_number}: expected a JSON object")
    if payload.get("v") != SCHEMA_VERSION:
        raise StreamFormatError(
            f"line {line_number}: missing or unsupported schema version {payload.get('v')!r}"
        )
    return payload


def write_records(path: str | Path, records: Sequence[FrameRecord]) -> None:
    text = "".join(record_to_line(rec) + "\n" for rec in records)
    _atomic_write(path, text)


def read_records(path: str | Path) -> list[FrameRecord]:
    """Strict reader: every line must form a valid record."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            payload = _parse_line(line_number, line)
            try:
                records.append(_record_from_payload(payload))
            except StreamFormatError:
                raise
            except ValueError as exc:
                raise StreamFormatError(f"line {line_number}: {exc}") from exc
    return records


def iter_records_lenient(path: str | Path) -> Iterator[FrameRecord | InvalidFrame]:
    """Replay reader: undecodable lines abort, invalid frames are reported.

    JSON decode failures and schema violations raise StreamFormatError with
    line context; lines that decode but hold unusable values (non-finite
    coordinates, arity mismatches) yield an InvalidFrame marker so the
    caller can drop the frame and keep going.
    """
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            payload = _parse_line(line_number, line)
            try:
                yield _record_from_payload(payload)
            except StreamFormatError:
                raise
            except (ValueError, TypeError) as exc:
                yield InvalidFrame(line_number=line_number, reason=str(exc))


# ---------------------------------------------------------------------------
# Calibration artifacts (single JSON documents)
# ---------------------------------------------------------------------------


def _matrix_list(transform: Transform2D) -> list[list[float]]:
    return [[float(v) for v in row] for row in transform.matrix]


def _check_kind(payload: dict, kind: str) -> None:
    if not isinstance(payload, dict) or payload.get("kind") != kind or payload.get("v") != SCHEMA_VERSION:
        raise StreamFormatError(f"expected a {kind!r} document with schema version {SCHEMA_VERSION}")


def _load_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"{path}: not valid JSON ({exc})") from exc


def write_alignment_model(path: str | Path, model: AlignmentModel) -> None:
    _atomic_write(
        path,
        _dumps(
            {
                "v": SCHEMA_VERSION,
                "kind": "alignment_model",
                "transforms": [_matrix_list(t) for t in model.transforms],
                "iteration_count": model.iteration_count,
                "final_residual": model.final_residual,
                "degenerate_indices": list(model.degenerate_indices),
            }
        )
        + "\n",
    )


def read_alignment_model(path: str | Path) -> AlignmentModel:
    payload = _load_json(path)
    _check_kind(payload, "alignment_model")
    try:
        return AlignmentModel(
            transforms=tuple(Transform2D(np.array(m)) for m in payload["transforms"]),
            iteration_count=int(payload["iteration_count"]),
            final_residual=float(payload["final_residual"]),
            degenerate_indices=tuple(int(i) for i in payload["degenerate_indices"]),
        )
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


def write_eye_calibration(path: str | Path, calibration: EyeCalibration) -> None:
    _atomic_write(
        path,
        _dumps(
            {
                "v": SCHEMA_VERSION,
                "kind": "eye_calibration",
                "left": _matrix_list(calibration.left_transform),
                "right": _matrix_list(calibration.right_transform),
                "fit_residual": calibration.fit_residual,
            }
        )
        + "\n",
    )


def read_eye_calibration(path: str | Path) -> EyeCalibration:
    payload = _load_json(path)
    _check_kind(payload, "eye_calibration")
    try:
        return EyeCalibration(
            left_transform=Transform2D(np.array(payload["left"])),
            right_transform=Transform2D(np.array(payload["right"])),
            fit_residual=float(payload["fit_residual"]),
        )
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


def _point_pair(payload: Any, name: str) -> Keypoint:
    try:
        x, y = payload
        return Keypoint(float(x), float(y))
    except (TypeError, ValueError) as exc:
        raise StreamFormatError(f"field {name!r} must be a finite [x, y] pair") from exc


def write_eye_boundary(path: str | Path, boundary: EyeBoundary) -> None:
    _atomic_write(
        path,
        _dumps(
            {
                "v": SCHEMA_VERSION,
                "kind": "eye_boundary",
                "origin": [boundary.origin.x, boundary.origin.y],
                "right": [boundary.right.x, boundary.right.y],
                "left": [boundary.left.x, boundary.left.y],
                "up": [boundary.up.x, boundary.up.y],
                "down": [boundary.down.x, boundary.down.y],
            }
        )
        + "\n",
    )


def read_eye_boundary(path: str | Path) -> EyeBoundary:
    payload = _load_json(path)
    _check_kind(payload, "eye_boundary")
    try:
        return EyeBoundary(
            origin=_point_pair(payload["origin"], "origin"),
            right=_point_pair(payload["right"], "right"),
            left=_point_pair(payload["left"], "left"),
            up=_point_pair(payload["up"], "up"),
            down=_point_pair(payload["down"], "down"),
        )
    except KeyError as exc:
        raise StreamFormatError(f"{path}: missing field {exc}") from exc
    except ValueError as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


def parse_boundary_annotation(path: str | Path) -> EyeBoundary:
    """Read a five-point annotation file of absolute positions.

    The file holds the frontal-gaze eyelid position plus the four extreme
    eyelid positions in source-image coordinates:
    ``{"origin": [x,y], "gaze_right": ..., "gaze_left": ..., "gaze_up": ...,
    "gaze_down": ...}``. Extents are converted to offsets from the origin.
    """
    payload = _load_json(path)
    if not isinstance(payload, dict):
        raise StreamFormatError(f"{path}: expected a JSON object")
    try:
        origin = _point_pair(payload["origin"], "origin")
        extents = {
            name: _point_pair(payload[f"gaze_{name}"], f"gaze_{name}")
            for name in ("right", "left", "up", "down")
        }
    except KeyError as exc:
        raise StreamFormatError(f"{path}: missing field {exc}") from exc
    for name, point in extents.items():
        if not point.in_bounds or not origin.in_bounds:
            raise StreamFormatError(f"{path}: annotation points must lie in [-1,1]^2")
    try:
        return EyeBoundary(
            origin=origin,
            right=Keypoint(extents["right"].x - origin.x, extents["right"].y - origin.y),
            left=Keypoint(extents["left"].x - origin.x, extents["left"].y - origin.y),
            up=Keypoint(extents["up"].x - origin.x, extents["up"].y - origin.y),
            down=Keypoint(extents["down"].x - origin.x, extents["down"].y - origin.y),
        )
    except ValueError as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


def write_eye_samples(path: str | Path, samples: Sequence[CalibrationSample]) -> None:
    lines = []
    for sample in samples:
        lines.append(
            _dumps(
                {
                    "v": SCHEMA_VERSION,
                    "left": [sample.left_raw.x, sample.left_raw.y],
                    "right": [sample.right_raw.x, sample.right_raw.y],
                    "gaze": list(sample.gaze_gt),
                }
            )
        )
    _atomic_write(path, "".join(line + "\n" for line in lines))


def read_eye_samples(path: str | Path) -> list[CalibrationSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            payload = _parse_line(line_number, line)
            try:
                samples.append(
                    CalibrationSample(
                        left_raw=_point_pair(payload["left"], "left"),
                        right_raw=_point_pair(payload["right"], "right"),
                        gaze_gt=(float(payload["gaze"][0]), float(payload["gaze"][1])),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise StreamFormatError(f"line {line_number}: {exc}") from exc
    return samples


def write_ground_truth(path: str | Path, truth: GroundTruth) -> None:
    _atomic_write(
        path,
        _dumps(
            {
                "v": SCHEMA_VERSION,
                "kind": "ground_truth",
                "transforms": [_matrix_list(t) for t in truth.transforms],
                "permutation": list(truth.permutation),
            }
        )
        + "\n",
    )


def read_ground_truth(path: str | Path) -> GroundTruth:
    payload = _load_json(path)
    _check_kind(payload, "ground_truth")
    try:
        return GroundTruth(
            transforms=tuple(Transform2D(np.array(m)) for m in payload["transforms"]),
            permutation=tuple(int(i) for i in payload["permutation"]),
        )
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Pipeline state checkpoints
# ---------------------------------------------------------------------------


def _grid_to_payload(grid: FeatureGrid | None) -> dict | None:
    if grid is None:
        return None
    return {
        "shape": list(grid.data.shape),
        "data": [float(v) for v in grid.data.ravel()],
    }


def _grid_from_payload(payload: dict | None) -> FeatureGrid | None:
    if payload is None:
        return None
    shape = tuple(int(s) for s in payload["shape"])
    return FeatureGrid(np.array(payload["data"], dtype=float).reshape(shape))


def pipeline_state_to_payload(state: "PipelineState") -> dict:  # noqa: F821
    return {
        "v": SCHEMA_VERSION,
        "kind": "pipeline_state",
        "retrieval": {
            "current_index": state.retrieval.current_index,
            "current_distance": state.retrieval.current_distance,
        },
        "gaze": {
            "position": list(state.gaze.position),
            "confidence": state.gaze.confidence,
            "blink": state.gaze.blink,
        },
        "expression_memory": _grid_to_payload(state.expression_memory),
        "output_memory": _grid_to_payload(state.output_memory),
        "frame_count": state.frame_count,
        "last_timestamp": state.last_timestamp,
    }


def pipeline_state_from_payload(payload: dict) -> "PipelineState":  # noqa: F821
    from .pipeline import PipelineState

    _check_kind(payload, "pipeline_state")
    retrieval = payload["retrieval"]
    gaze = payload["gaze"]
    index = retrieval["current_index"]
    distance = retrieval["current_distance"]
    return PipelineState(
        retrieval=RetrievalState(
            current_index=None if index is None else int(index),
            current_distance=None if distance is None else float(distance),
        ),
        gaze=GazeState(
            position=(float(gaze["position"][0]), float(gaze["position"][1])),
            confidence=float(gaze["confidence"]),
            blink=bool(gaze["blink"]),
        ),
        expression_memory=_grid_from_payload(payload["expression_memory"]),
        output_memory=_grid_from_payload(payload["output_memory"]),
        frame_count=int(payload["frame_count"]),
        last_timestamp=None if payload["last_timestamp"] is None else float(payload["last_timestamp"]),
    )


def write_pipeline_state(path: str | Path, state: "PipelineState") -> None:  # noqa: F821
    _atomic_write(path, _dumps(pipeline_state_to_payload(state)) + "\n")


def read_pipeline_state(path: str | Path) -> "PipelineState":  # noqa: F821
    payload = _load_json(path)
    try:
        return pipeline_state_from_payload(payload)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, StreamFormatError):
            raise
        raise StreamFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Render request lines
# ---------------------------------------------------------------------------


def render_request_to_line(request: "RenderRequest") -> str:  # noqa: F821
    driving = request.driving
    return _dumps(
        {
            "v": SCHEMA_VERSION,
            "timestamp": request.timestamp,
            "expression_index": driving.expression_index,
            "source_payload_ref": request.source_payload_ref,
            "expression_payload_ref": request.expression_payload_ref,
            "eye": list(driving.eye_coordinate),
            "blink": driving.blink,
            "blend": {
                "lambda_e": request.blend_weights.lambda_e,
                "lambda_e_tilde": request.blend_weights.lambda_e_tilde,
                "lambda_o": request.blend_weights.lambda_o,
            },
            "keypoints": [[float(x), float(y)] for x, y in driving.keypoints.points],
            "roles": [role.value for role in driving.keypoints.roles],
        }
    )
