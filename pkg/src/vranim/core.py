"""Shared domain types: keypoints, role-tagged keypoint sets, 2D affine
transforms, and timestamped frame records.

All types are immutable value objects; arrays are copied on construction and
marked read-only, so instances are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class Role(Enum):
    """Role tag of a keypoint within a set."""

    LOWER_FACE = "lower_face"
    EYE = "eye"
    POSE = "pose"


class EmptyRoleError(ValueError):
    """No keypoint in the set carries the requested role."""


class PartitionError(ValueError):
    """Keypoint/role layout violates the set invariants."""


class TransformError(ValueError):
    """Matrix is not a valid 2D affine transform."""


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Keypoint:
    """A single 2D keypoint in normalized image coordinates.

    Coordinates use the [-1, 1] x [-1, 1] convention with the image center at
    the origin. Values outside that square are permitted transiently (e.g.
    after projection) and flagged by :attr:`in_bounds`.
    """

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"keypoint coordinates must be finite, got ({self.x}, {self.y})")

    @property
    def in_bounds(self) -> bool:
        return -1.0 <= self.x <= 1.0 and -1.0 <= self.y <= 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Transform2D:
    """Homogeneous 2D affine transform (3x3, bottom row fixed to (0, 0, 1)).

    Restricted to affine (6 DOF): one transform is fit per keypoint across
    frames, and the affine least-squares fit is closed-form; a full 8-DOF
    homography would be under-constrained in that setting.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise TransformError(f"expected 3x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise TransformError("transform entries must be finite")
        if not (m[2, 0] == 0.0 and m[2, 1] == 0.0 and m[2, 2] == 1.0):
            raise TransformError(f"bottom row must be (0, 0, 1), got {m[2].tolist()}")
        if m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0] == 0.0:
            raise TransformError("upper-left 2x2 block is singular")
        object.__setattr__(self, "matrix", _freeze(m))

    @classmethod
    def identity(cls) -> "Transform2D":
        return cls(np.eye(3))

    @classmethod
    def scaling(cls, s: float, sy: float | None = None) -> "Transform2D":
        m = np.eye(3)
        m[0, 0] = s
        m[1, 1] = s if sy is None else sy
        return cls(m)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Transform2D":
        m = np.eye(3)
        m[0, 2] = dx
        m[1, 2] = dy
        return cls(m)

    @classmethod
    def rotation(cls, radians: float) -> "Transform2D":
        c, s = math.cos(radians), math.sin(radians)
        m = np.eye(3)
        m[:2, :2] = [[c, -s], [s, c]]
        return cls(m)

    @classmethod
    def from_linear(cls, linear: np.ndarray, offset: Sequence[float] = (0.0, 0.0)) -> "Transform2D":
        m = np.eye(3)
        m[:2, :2] = np.asarray(linear, dtype=float)
        m[:2, 2] = np.asarray(offset, dtype=float)
        return cls(m)

    @property
    def linear(self) -> np.ndarray:
        """Upper-left 2x2 block."""
        return self.matrix[:2, :2]

    @property
    def offset(self) -> np.ndarray:
        """Translation column."""
        return self.matrix[:2, 2]

    def apply(self, point: Keypoint) -> Keypoint:
        x, y = point.x, point.y
        m = self.matrix
        return Keypoint(
            m[0, 0] * x + m[0, 1] * y + m[0, 2],
            m[1, 0] * x + m[1, 1] * y + m[1, 2],
        )

    def apply_array(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (n, 2) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.linear.T + self.offset

    def compose(self, other: "Transform2D") -> "Transform2D":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return Transform2D(self.matrix @ other.matrix)

    def inverse(self) -> "Transform2D":
        a = self.linear
        inv = np.linalg.inv(a)
        return Transform2D.from_linear(inv, -inv @ self.offset)


@dataclass(frozen=True)
class KeypointSet:
    """An ordered keypoint list with a parallel list of role tags.

    All lower-face keypoints come first, followed by the eye/pose keypoints;
    this mirrors the concatenation of the mouth-camera detector output with
    the full-face detector output and makes the lower-face block a plain
    array prefix.
    """

    points: np.ndarray
    roles: tuple[Role, ...]

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PartitionError(f"points must have shape (k, 2), got {pts.shape}")
        if len(self.roles) != pts.shape[0]:
            raise PartitionError(
                f"{pts.shape[0]} points but {len(self.roles)} roles"
            )
        if not np.all(np.isfinite(pts)):
            raise PartitionError("keypoint coordinates must be finite")
        seen_other = False
        for role in self.roles:
            if role is Role.LOWER_FACE:
                if seen_other:
                    raise PartitionError("lower-face keypoints must precede eye/pose keypoints")
            else:
                seen_other = True
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "roles", tuple(self.roles))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]], roles: Sequence[Role]) -> "KeypointSet":
        return cls(np.array(list(pairs), dtype=float), tuple(roles))

    def __len__(self) -> int:
        return self.points.shape[0]

    def count(self, role: Role) -> int:
        return sum(1 for r in self.roles if r is role)

    @property
    def lower_count(self) -> int:
        return self.count(Role.LOWER_FACE)

    @property
    def lower_points(self) -> np.ndarray:
        """(L, 2) view of the lower-face prefix."""
        return self.points[: self.lower_count]

    def role_indices(self, role: Role) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r is role], dtype=int)

    def subset(self, role: Role) -> "KeypointSet":
        idx = self.role_indices(role)
        if idx.size == 0:
            raise EmptyRoleError(f"no keypoints with role {role.value}")
        return KeypointSet(self.points[idx], (role,) * idx.size)

    def centroid(self, role: Role) -> Keypoint:
        """Arithmetic mean of all keypoints carrying ``role``."""
        idx = self.role_indices(role)
        if idx.size == 0:
            raise EmptyRoleError(f"no keypoints with role {role.value}")
        mean = self.points[idx].mean(axis=0)
        return Keypoint(float(mean[0]), float(mean[1]))

    def keypoint(self, index: int) -> Keypoint:
        return Keypoint(float(self.points[index, 0]), float(self.points[index, 1]))

    def with_points(self, points: np.ndarray) -> "KeypointSet":
        return KeypointSet(points, self.roles)

    def shifted(self, dx: float, dy: float) -> "KeypointSet":
        return self.with_points(self.points + np.array([dx, dy]))

    def all_in_bounds(self) -> bool:
        return bool(np.all(np.abs(self.points) <= 1.0))


def default_roles(lower: int = 20, eye: int = 12, pose: int = 36) -> tuple[Role, ...]:
    """Standard role layout: the mouth-camera block first, then eyes and pose.

    The default counts mirror the common 68-landmark convention (20 mouth
    landmarks, 12 eye landmarks, 36 remaining), with the mouth block moved to
    the front of the ordering.
    """
    return (Role.LOWER_FACE,) * lower + (Role.EYE,) * eye + (Role.POSE,) * pose


@dataclass(frozen=True)
class FrameRecord:
    """A timestamped keypoint set plus an opaque payload reference.

    ``payload_ref`` names an external image or feature asset; the engine
    never touches pixels directly.
    """

    frame_id: int
    timestamp: float
    keypoints: KeypointSet
    payload_ref: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")


def validate_sequence(frames: Sequence[FrameRecord]) -> None:
    """Check per-sequence invariants: unique ids, strictly increasing timestamps."""
    seen: set[int] = set()
    last_t = -math.inf
    for rec in frames:
        if rec.frame_id in seen:
            raise ValueError(f"duplicate frame_id {rec.frame_id}")
        seen.add(rec.frame_id)
        if rec.timestamp <= last_t:
            raise ValueError(
                f"timestamps must be strictly increasing (frame {rec.frame_id})"
            )
        last_t = rec.timestamp
