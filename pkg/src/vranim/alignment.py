"""Per-keypoint transform calibration between the mouth-camera and
source-camera keypoint spaces.

Two enrollment videos (one with the headset, one without) are never
synchronized, so the mapping is learned by alternating a correspondence
search with a closed-form per-keypoint affine refit, starting from a uniform
scale estimate. All mappings operate on centroid-relative coordinates, which
makes the projection invariant to head translation in either camera.

The heavy operations are vectorized with numpy; per-keypoint fits and
per-frame searches are independent, and results are identical to sequential
evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import FrameRecord, KeypointSet, Role, Transform2D

DEFAULT_MAX_ITERATIONS = 1000

# Spread below this is treated as "all keypoints coincident".
_DEGENERATE_SPREAD = 1e-9

# Correspondence distance matrices are computed in row blocks of this many
# mouth frames to bound peak memory on large sequences.
_SEARCH_BLOCK = 64


class DegenerateInputError(ValueError):
    """Input keypoints carry no usable geometry (e.g. all coincident)."""


class DimensionMismatchError(ValueError):
    """Lower-face keypoint count differs from the model layout."""


@dataclass(frozen=True)
class CorrespondencePair:
    """Best-matching (mouth frame, source frame) pair from one search pass."""

    mouth_frame_id: int
    source_frame_id: int
    distance: float


@dataclass(frozen=True)
class AlignmentModel:
    """One affine transform per lower-face keypoint index.

    ``final_residual`` is the mean per-keypoint Euclidean distance between
    projected mouth keypoints and their matched source keypoints, in
    normalized units; it is ``inf`` until the first refinement. Mouth and
    source centroids are not stored: they are recomputed from the inputs of
    every projection call. ``degenerate_indices`` lists keypoints whose last
    refit was rank-deficient and kept their previous transform.
    """

    transforms: tuple[Transform2D, ...]
    iteration_count: int = 0
    final_residual: float = math.inf
    degenerate_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.transforms:
            raise ValueError("model needs at least one transform")
        if self.final_residual < 0.0:
            raise ValueError("residual must be non-negative")

    def __len__(self) -> int:
        return len(self.transforms)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Transforms as a pair of arrays: linear parts (L, 2, 2), offsets (L, 2)."""
        linear = np.stack([t.linear for t in self.transforms])
        offset = np.stack([t.offset for t in self.transforms])
        return linear, offset

    @classmethod
    def identity(cls, count: int) -> "AlignmentModel":
        return cls(tuple(Transform2D.identity() for _ in range(count)))


def lower_face_matrix(frames: Sequence[FrameRecord]) -> np.ndarray:
    """Stack the lower-face keypoints of a frame sequence into (N, L, 2)."""
    if not frames:
        raise DegenerateInputError("empty frame sequence")
    counts = {rec.keypoints.lower_count for rec in frames}
    if len(counts) != 1:
        raise DimensionMismatchError(f"inconsistent lower-face counts: {sorted(counts)}")
    (count,) = counts
    if count == 0:
        raise DegenerateInputError("frames carry no lower-face keypoints")
    return np.stack([rec.keypoints.lower_points for rec in frames])


def _centered(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split (..., L, 2) absolute points into centroid-relative points and centroids."""
    centroids = points.mean(axis=-2)
    return points - centroids[..., None, :], centroids


def _project_relative(linear: np.ndarray, offset: np.ndarray, rel: np.ndarray) -> np.ndarray:
    """Map centroid-relative mouth points through the per-keypoint transforms.

    ``rel`` has shape (..., L, 2).
    """
    return np.einsum("lij,...lj->...li", linear, rel) + offset


def project(model: AlignmentModel, mouth_set: KeypointSet, source_set: KeypointSet) -> KeypointSet:
    """Project mouth-camera lower-face keypoints into the source frame.

    Each keypoint is mapped relative to the mouth-set centroid and anchored
    at the source-set lower-face centroid, so translating the whole mouth
    set (head motion under the headset) leaves the output unchanged. When
    the transformed relative points have zero mean, as fitted transforms do
    up to their residual, the output centroid coincides with the source
    centroid.
    """
    mouth = mouth_set.lower_points
    if mouth.shape[0] != len(model):
        raise DimensionMismatchError(
            f"mouth set has {mouth.shape[0]} lower-face keypoints, model expects {len(model)}"
        )
    source_centroid = source_set.centroid(Role.LOWER_FACE).as_array()
    linear, offset = model.stacked()
    rel, _ = _centered(mouth)
    out = _project_relative(linear, offset, rel) + source_centroid
    return KeypointSet(out, (Role.LOWER_FACE,) * out.shape[0])


def _mean_spread(points: np.ndarray) -> float:
    """Mean distance of lower-face keypoints to their per-frame centroid."""
    rel, _ = _centered(points)
    return float(np.sqrt((rel**2).sum(axis=-1)).mean())


def init_from_scale(
    source_frames: Sequence[FrameRecord], mouth_frames: Sequence[FrameRecord]
) -> AlignmentModel:
    """Initialize every transform to the uniform mouth-to-source scale ratio."""
    source = lower_face_matrix(source_frames)
    mouth = lower_face_matrix(mouth_frames)
    if source.shape[1] != mouth.shape[1]:
        raise DimensionMismatchError(
            f"source frames have {source.shape[1]} lower-face keypoints, mouth frames {mouth.shape[1]}"
        )
    source_spread = _mean_spread(source)
    mouth_spread = _mean_spread(mouth)
    if source_spread < _DEGENERATE_SPREAD or mouth_spread < _DEGENERATE_SPREAD:
        raise DegenerateInputError("keypoint spread is degenerate (all points coincident)")
    scale = source_spread / mouth_spread
    count = mouth.shape[1]
    return AlignmentModel(tuple(Transform2D.scaling(scale) for _ in range(count)))


def find_correspondences(
    model: AlignmentModel,
    mouth_frames: Sequence[FrameRecord],
    source_frames: Sequence[FrameRecord],
) -> list[CorrespondencePair]:
    """For each mouth frame, find the source frame minimizing the summed
    per-keypoint distance between the projected mouth keypoints and the
    source keypoints. Ties resolve to the lower source frame id; several
    mouth frames may map to the same source frame.
    """
    mouth = lower_face_matrix(mouth_frames)
    source = lower_face_matrix(source_frames)
    if mouth.shape[1] != len(model) or source.shape[1] != len(model):
        raise DimensionMismatchError("frame keypoint counts do not match the model")

    # Order candidates by frame id so argmin's first-hit tie-break is the
    # lowest id.
    order = sorted(range(len(source_frames)), key=lambda i: source_frames[i].frame_id)
    source_ids = [source_frames[i].frame_id for i in order]
    source_rel, _ = _centered(source[order])

    linear, offset = model.stacked()
    mouth_rel, _ = _centered(mouth)
    projected = _project_relative(linear, offset, mouth_rel)

    # The source centroid cancels: both the projected point and the key live
    # in the candidate frame, anchored at the same centroid.
    pairs: list[CorrespondencePair] = []
    for start in range(0, projected.shape[0], _SEARCH_BLOCK):
        block = projected[start : start + _SEARCH_BLOCK]
        diff = block[:, None, :, :] - source_rel[None, :, :, :]
        dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2).sum(axis=-1)
        best = np.argmin(dist, axis=1)
        for row, col in enumerate(best):
            pairs.append(
                CorrespondencePair(
                    mouth_frame_id=mouth_frames[start + row].frame_id,
                    source_frame_id=source_ids[col],
                    distance=float(dist[row, col]),
                )
            )
    return pairs


def _residual(
    linear: np.ndarray, offset: np.ndarray, mouth_rel: np.ndarray, source_rel: np.ndarray
) -> float:
    projected = _project_relative(linear, offset, mouth_rel)
    err = projected - source_rel
    return float(np.sqrt(err[..., 0] ** 2 + err[..., 1] ** 2).mean())


def refine(
    model: AlignmentModel,
    pairs: Sequence[CorrespondencePair],
    mouth_frames: Sequence[FrameRecord],
    source_frames: Sequence[FrameRecord],
) -> AlignmentModel:
    """Refit each per-keypoint transform by least squares on the current pairs.

    Fits run on centroid-relative coordinates, matching the coordinate frame
    the projection is defined in; fitting absolute coordinates would
    re-absorb the centroids that frame explicitly removes. A keypoint whose
    design matrix is rank-deficient (it barely moves across frames) keeps its
    previous transform and is flagged in ``degenerate_indices``.
    """
    if not pairs:
        raise ValueError("refine requires at least one correspondence pair")
    mouth_by_id = {rec.frame_id: rec for rec in mouth_frames}
    source_by_id = {rec.frame_id: rec for rec in source_frames}
    mouth = np.stack([mouth_by_id[p.mouth_frame_id].keypoints.lower_points for p in pairs])
    source = np.stack([source_by_id[p.source_frame_id].keypoints.lower_points for p in pairs])
    if mouth.shape[1] != len(model):
        raise DimensionMismatchError("pair keypoint count does not match the model")

    mouth_rel, _ = _centered(mouth)
    source_rel, _ = _centered(source)

    n = mouth_rel.shape[0]
    ones = np.ones((n, 1))
    transforms: list[Transform2D] = []
    degenerate: list[int] = []
    for l in range(len(model)):
        design = np.hstack([mouth_rel[:, l, :], ones])
        solution, _, rank, _ = np.linalg.lstsq(design, source_rel[:, l, :], rcond=None)
        a = solution[:2, :].T
        if rank < 3 or a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] == 0.0:
            transforms.append(model.transforms[l])
            degenerate.append(l)
        else:
            transforms.append(Transform2D.from_linear(a, solution[2, :]))

    new_model = AlignmentModel(
        transforms=tuple(transforms),
        iteration_count=model.iteration_count,
        degenerate_indices=tuple(degenerate),
    )
    linear, offset = new_model.stacked()
    return replace(new_model, final_residual=_residual(linear, offset, mouth_rel, source_rel))


def calibrate(
    source_frames: Sequence[FrameRecord],
    mouth_frames: Sequence[FrameRecord],
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> AlignmentModel:
    """Run the full alternating calibration.

    Starting from the uniform scale estimate, alternate the correspondence
    search with the per-keypoint refit until the assignment is a fixed point
    (the closed-form refit cannot improve once assignments stabilize) or the
    iteration cap is reached. Never fails on non-convergence: the iterate
    with the lowest residual is returned. Deterministic: fixed tie-breaking
    and no randomness, so identical inputs give bit-identical models.
    """
    if len(source_frames) < 2 or len(mouth_frames) < 2:
        raise DegenerateInputError("calibration requires at least 2 frames per sequence")
    model = init_from_scale(source_frames, mouth_frames)
    best: AlignmentModel | None = None
    previous: tuple[int, ...] | None = None
    iterations = 0
    for _ in range(max_iterations):
        iterations += 1
        pairs = find_correspondences(model, mouth_frames, source_frames)
        assignment = tuple(p.source_frame_id for p in pairs)
        if assignment == previous:
            break
        previous = assignment
        model = refine(model, pairs, mouth_frames, source_frames)
        if best is None or model.final_residual < best.final_residual:
            best = model
    assert best is not None
    return replace(best, iteration_count=iterations)


def reprojection_error(
    model: AlignmentModel,
    mouth_frames: Sequence[FrameRecord],
    source_frames: Sequence[FrameRecord],
    pairing: Sequence[int],
) -> float:
    """Mean distance between projected mouth keypoints and their known
    source-frame targets; ``pairing[j]`` is the source index of mouth frame j.
    """
    errors = []
    for j, rec in enumerate(mouth_frames):
        target = source_frames[pairing[j]]
        projected = project(model, rec.keypoints, target.keypoints)
        diff = projected.points - target.keypoints.lower_points
        errors.append(np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2).mean())
    return float(np.mean(errors))
