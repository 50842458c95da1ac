"""Gaze fusion, blink detection, and the supervised eye-camera-to-display
calibration, plus the confidence-gated recursive gaze filter.

Raw per-eye keypoints arrive from file replay or a synthetic generator (the
upstream per-eye keypoint predictor is out of scope); this module covers the
supervised transform fit and everything downstream of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Keypoint, Transform2D

DEFAULT_BLINK_THRESHOLD = 0.75  # must sit below the 0.8 filter knee

# Filter gain ramps linearly from 0 at the knee to 1 at full confidence.
_FILTER_KNEE = 0.8

# Two predictions can disagree by at most the [-1,1]^2 diagonal, 2*sqrt(2).
_CONFIDENCE_SCALE = 1.0 / (2.0 * math.sqrt(2.0))


class CollinearSamplesError(ValueError):
    """Calibration samples are rank-deficient (too few or collinear)."""


@dataclass(frozen=True)
class EyeCalibration:
    """Fitted per-eye transforms from camera keypoint space to gaze space."""

    left_transform: Transform2D
    right_transform: Transform2D
    fit_residual: float


@dataclass(frozen=True)
class GazeState:
    """Filtered gaze position with the confidence and blink flag of the last update."""

    position: tuple[float, float] = (0.0, 0.0)
    confidence: float = 1.0
    blink: bool = False

    def __post_init__(self) -> None:
        u, v = self.position
        if not (-1.0 <= u <= 1.0 and -1.0 <= v <= 1.0):
            raise ValueError(f"filtered position must lie in [-1,1]^2, got {self.position}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class CalibrationSample:
    """One supervision triplet: raw keypoints of both eyes plus the known dot position."""

    left_raw: Keypoint
    right_raw: Keypoint
    gaze_gt: tuple[float, float]

    def __post_init__(self) -> None:
        u, v = self.gaze_gt
        if not (-1.0 <= u <= 1.0 and -1.0 <= v <= 1.0):
            raise ValueError(f"gaze ground truth must lie in [-1,1]^2, got {self.gaze_gt}")


def _fit_eye(raw: np.ndarray, target: np.ndarray) -> Transform2D:
    n = raw.shape[0]
    design = np.hstack([raw, np.ones((n, 1))])
    solution, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < 3:
        raise CollinearSamplesError("raw eye keypoints are collinear; fit is rank-deficient")
    return Transform2D.from_linear(solution[:2, :].T, solution[2, :])


def fit_calibration(samples: Sequence[CalibrationSample]) -> EyeCalibration:
    """Least-squares affine fit from raw keypoints to gaze targets, per eye.

    Requires at least 3 non-collinear samples per eye; the residual is the
    mean post-fit Euclidean error pooled over both eyes.
    """
    if len(samples) < 3:
        raise CollinearSamplesError(f"need at least 3 samples, got {len(samples)}")
    left = np.array([[s.left_raw.x, s.left_raw.y] for s in samples])
    right = np.array([[s.right_raw.x, s.right_raw.y] for s in samples])
    target = np.array([s.gaze_gt for s in samples])
    left_t = _fit_eye(left, target)
    right_t = _fit_eye(right, target)
    errs = np.concatenate(
        [
            np.linalg.norm(left_t.apply_array(left) - target, axis=1),
            np.linalg.norm(right_t.apply_array(right) - target, axis=1),
        ]
    )
    return EyeCalibration(left_t, right_t, float(errs.mean()))


def fuse(
    calibration: EyeCalibration, left_raw: Keypoint, right_raw: Keypoint
) -> tuple[tuple[float, float], float]:
    """Mean of both transformed predictions, plus the agreement confidence.

    Confidence is 1 minus the normalized distance between the two transformed
    predictions: 1 for perfect agreement, 0 when they disagree by the full
    domain diagonal; clamped to [0, 1].
    """
    p_left = calibration.left_transform.apply(left_raw)
    p_right = calibration.right_transform.apply(right_raw)
    position = ((p_left.x + p_right.x) / 2.0, (p_left.y + p_right.y) / 2.0)
    separation = math.hypot(p_left.x - p_right.x, p_left.y - p_right.y)
    confidence = 1.0 - _CONFIDENCE_SCALE * separation
    return position, min(1.0, max(0.0, confidence))


def detect_blink(confidence: float, lambda_c: float = DEFAULT_BLINK_THRESHOLD) -> bool:
    """Eyes are treated as closed when confidence falls strictly below the threshold."""
    return confidence < lambda_c


def filter_gain(confidence: float) -> float:
    """Contribution of the current gaze estimate: 5c - 4 above the 0.8 knee, else 0."""
    if confidence >= _FILTER_KNEE:
        return 5.0 * confidence - 4.0
    return 0.0


def filter_eye(
    state: GazeState,
    position: tuple[float, float],
    confidence: float,
    *,
    lambda_c: float = DEFAULT_BLINK_THRESHOLD,
) -> GazeState:
    """Recursive low-pass update of the gaze position, gated by confidence.

    Below the knee the gain is zero and the stored position is frozen
    bit-for-bit; at full confidence the new estimate is adopted outright.
    """
    c = min(1.0, max(0.0, confidence))
    gain = filter_gain(c)
    if gain == 0.0:
        filtered = state.position
    else:
        keep = 1.0 - gain
        u = gain * position[0] + keep * state.position[0]
        v = gain * position[1] + keep * state.position[1]
        filtered = (min(1.0, max(-1.0, u)), min(1.0, max(-1.0, v)))
    return GazeState(position=filtered, confidence=c, blink=detect_blink(c, lambda_c))
