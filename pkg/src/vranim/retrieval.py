"""Key-value expression store and nearest-expression retrieval.

Keys are the lower-face keypoint sets of the enrollment frames; values are
the full frame records. A query (the current mouth keypoints) is projected
into each candidate frame and scored by the summed per-keypoint distance to
that frame's keys. Retrieval is a plain linear scan: a few hundred
enrollment frames with tens of summed terms per candidate cost microseconds
per query, so a spatial index would add complexity without need.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .alignment import AlignmentModel, DimensionMismatchError, _centered, _project_relative
from .core import FrameRecord, KeypointSet, Role

DEFAULT_LAMBDA_SWAP = 0.25


@dataclass(frozen=True)
class ExpressionStore:
    """Immutable store of (lower-face keys, frame record values)."""

    keys: tuple[KeypointSet, ...]
    values: tuple[FrameRecord, ...]

    def __post_init__(self) -> None:
        if len(self.keys) == 0:
            raise ValueError("expression store must hold at least one frame")
        if len(self.keys) != len(self.values):
            raise ValueError("keys and values must have equal length")
        for key, value in zip(self.keys, self.values):
            if key.count(Role.LOWER_FACE) != len(key):
                raise ValueError("store keys must be lower-face-only keypoint sets")
            if not np.array_equal(key.points, value.keypoints.lower_points):
                raise ValueError(
                    f"key for frame {value.frame_id} does not match its record's lower-face keypoints"
                )

    @classmethod
    def from_records(cls, records: Sequence[FrameRecord]) -> "ExpressionStore":
        keys = tuple(rec.keypoints.subset(Role.LOWER_FACE) for rec in records)
        return cls(keys=keys, values=tuple(records))

    def __len__(self) -> int:
        return len(self.keys)

    @cached_property
    def key_points(self) -> np.ndarray:
        """(n, L, 2) stacked key coordinates."""
        return np.stack([key.points for key in self.keys])

    @cached_property
    def key_centroids(self) -> np.ndarray:
        """(n, 2) per-key lower-face centroids."""
        return self.key_points.mean(axis=1)


@dataclass(frozen=True)
class RetrievalState:
    """Currently selected expression frame, if any."""

    current_index: int | None = None
    current_distance: float | None = None

    def __post_init__(self) -> None:
        if self.current_index is not None and self.current_index < 0:
            raise ValueError("current_index must be non-negative")


def _projected_core(query: KeypointSet, model: AlignmentModel) -> np.ndarray:
    """Candidate-independent part of the projection: the mapped, re-anchored
    centroid-relative query points (L, 2). Projecting into candidate i adds
    that frame's lower-face centroid."""
    points = query.lower_points
    if points.shape[0] != len(model):
        raise DimensionMismatchError(
            f"query has {points.shape[0]} lower-face keypoints, model expects {len(model)}"
        )
    linear, offset = model.stacked()
    rel, _ = _centered(points)
    return _project_relative(linear, offset, rel)


def _all_scores(query: KeypointSet, model: AlignmentModel, store: ExpressionStore) -> np.ndarray:
    """Score of the query against every store entry, as an (n,) array."""
    core = _projected_core(query, model)
    diff = (core[None, :, :] + store.key_centroids[:, None, :]) - store.key_points
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2).sum(axis=-1)


def score(query: KeypointSet, model: AlignmentModel, store: ExpressionStore, index: int) -> float:
    """Summed per-keypoint distance between the query projected into frame
    ``index`` (anchored at that frame's own lower-face centroid) and the
    frame's keys."""
    if not 0 <= index < len(store):
        raise IndexError(f"index {index} out of range for store of size {len(store)}")
    core = _projected_core(query, model)
    diff = (core + store.key_centroids[index]) - store.key_points[index]
    return float(np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2).sum())


def retrieve(query: KeypointSet, model: AlignmentModel, store: ExpressionStore) -> tuple[int, float]:
    """Index and score of the best-matching store entry (ties to lower index)."""
    scores = _all_scores(query, model, store)
    index = int(np.argmin(scores))
    return index, float(scores[index])


def retrieve_with_hysteresis(
    query: KeypointSet,
    model: AlignmentModel,
    store: ExpressionStore,
    state: RetrievalState,
    lambda_swap: float = DEFAULT_LAMBDA_SWAP,
) -> tuple[RetrievalState, bool]:
    """Retrieval with a switching margin to suppress frame flicker.

    The current frame is kept unless another frame is ``1 + lambda_swap``
    times closer; with no current frame the plain retrieval result is
    adopted. The stored distance is refreshed to the current frame's score
    under the new query on every call, so the margin never compares against
    a stale score.
    """
    if lambda_swap < 0.0:
        raise ValueError("lambda_swap must be non-negative")
    scores = _all_scores(query, model, store)
    best = int(np.argmin(scores))
    if state.current_index is None:
        return RetrievalState(best, float(scores[best])), True
    if state.current_index >= len(store):
        raise IndexError(f"state index {state.current_index} out of range")
    current_score = float(scores[state.current_index])
    if current_score > (1.0 + lambda_swap) * float(scores[best]):
        return RetrievalState(best, float(scores[best])), True
    return RetrievalState(state.current_index, current_score), False
