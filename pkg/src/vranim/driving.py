"""Construction of the driving frame: the keypoint set handed to the (out of
scope) motion network each step.

The driving keypoints combine three sources: lower-face keypoints projected
from the mouth camera, pose keypoints copied verbatim from the source frame
(the avatar display physically follows the operator's head, so the source
pose is the right pose), and a single eyelid keypoint placed from the
current gaze coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import AlignmentModel, project
from .core import FrameRecord, Keypoint, KeypointSet, Role
from .eyetrack import GazeState

# Projected lower-face keypoints beyond this box indicate a broken model or
# malformed input rather than a plausible expression.
_LOWER_FACE_BOUND = 1.5


class DrivingFrameError(ValueError):
    """Constructed driving keypoints violate the sanity bounds."""


@dataclass(frozen=True)
class EyeBoundary:
    """Normalized eye coordinate system anchored in the source image.

    ``origin`` is the eyelid keypoint position at frontal gaze; the four
    extents are offsets from the origin reached at gaze (+1,0), (-1,0),
    (0,+1) and (0,-1). Annotated once per operator from a five-point
    boundary file.
    """

    origin: Keypoint
    right: Keypoint
    left: Keypoint
    up: Keypoint
    down: Keypoint

    def __post_init__(self) -> None:
        for name in ("right", "left", "up", "down"):
            extent: Keypoint = getattr(self, name)
            if extent.x == 0.0 and extent.y == 0.0:
                raise ValueError(f"{name} extent must be distinct from the origin")


@dataclass(frozen=True)
class DrivingFrame:
    """Keypoints of the constructed driving frame plus the step's eye state."""

    keypoints: KeypointSet
    expression_index: int
    eye_coordinate: tuple[float, float]
    blink: bool


def map_eye_coordinate(boundary: EyeBoundary, gaze: tuple[float, float]) -> Keypoint:
    """Map a normalized gaze coordinate onto the source-image eyelid position.

    Piecewise-bilinear blend of the extents: each axis contributes its
    matching extent offset scaled by the coordinate magnitude. Gaze (0, 0)
    maps exactly to the origin; coordinates are clamped to [-1, 1].
    """
    u = min(1.0, max(-1.0, gaze[0]))
    v = min(1.0, max(-1.0, gaze[1]))
    off_u = boundary.right if u >= 0.0 else boundary.left
    off_v = boundary.up if v >= 0.0 else boundary.down
    return Keypoint(
        boundary.origin.x + abs(u) * off_u.x + abs(v) * off_v.x,
        boundary.origin.y + abs(u) * off_u.y + abs(v) * off_v.y,
    )


def construct_driving(
    source: FrameRecord,
    mouth_set: KeypointSet,
    model: AlignmentModel,
    gaze_state: GazeState,
    boundary: EyeBoundary,
    *,
    eye_index: int,
    expression_index: int = 0,
) -> DrivingFrame:
    """Build the driving keypoints for one step.

    Lower-face keypoints come from projecting ``mouth_set`` into the source
    frame; pose keypoints are copied bit-for-bit from the source; the eyelid
    keypoint at ``eye_index`` is replaced with the mapped gaze coordinate.
    The output role partition equals the source partition.
    """
    source_set = source.keypoints
    roles = source_set.roles
    if not 0 <= eye_index < len(roles) or roles[eye_index] is not Role.EYE:
        raise ValueError(f"eye_index {eye_index} does not name an eye-role keypoint")

    projected = project(model, mouth_set, source_set)
    if np.any(np.abs(projected.points) > _LOWER_FACE_BOUND):
        raise DrivingFrameError(
            "projected lower-face keypoints fall outside the sanity bound "
            f"[-{_LOWER_FACE_BOUND}, {_LOWER_FACE_BOUND}]^2"
        )

    points = source_set.points.copy()
    points[: projected.points.shape[0]] = projected.points
    eye_point = map_eye_coordinate(boundary, gaze_state.position)
    points[eye_index] = (eye_point.x, eye_point.y)

    return DrivingFrame(
        keypoints=KeypointSet(points, roles),
        expression_index=expression_index,
        eye_coordinate=gaze_state.position,
        blink=gaze_state.blink,
    )
