"""Feature-grid fusion and temporal expression blending.

These are the arithmetic parts of the two-encoder generator and its
recursive expression filter; the neural warp that would align grids across
frames is a pluggable operator (identity by default), since the filter
formulas are well-defined for any warp.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand grid or mask shapes are incompatible."""


@dataclass(frozen=True)
class FeatureGrid:
    """A dense (height, width, channels) grid of finite real values."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=float)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"feature grid must be (h, w, c), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature grid entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "FeatureGrid":
        return cls(np.full((height, width, channels), value, dtype=float))


@dataclass(frozen=True)
class Mask:
    """A binary (height, width) mask; entries are exactly 0 or 1."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=float)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask must be (h, w), got shape {arr.shape}")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError("mask entries must be exactly 0 or 1")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


WarpOperator = Callable[[FeatureGrid], FeatureGrid]


@dataclass(frozen=True)
class BlendConfig:
    """Recursive expression-filter weights; must sum to one."""

    lambda_e: float = 0.7
    lambda_e_tilde: float = 0.1
    lambda_o: float = 0.2

    def __post_init__(self) -> None:
        for name in ("lambda_e", "lambda_e_tilde", "lambda_o"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        total = self.lambda_e + self.lambda_e_tilde + self.lambda_o
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"blend weights must sum to 1, got {total}")


def fuse_features(f_s: FeatureGrid, f_e: FeatureGrid, mask_down: Mask) -> FeatureGrid:
    """Merge source and expression features under the lower-face mask.

    Masked cells hold the mean of both feature grids; unmasked cells are
    bit-equal to the source features.
    """
    if f_s.data.shape != f_e.data.shape:
        raise ShapeMismatchError(
            f"feature shapes differ: {f_s.data.shape} vs {f_e.data.shape}"
        )
    if mask_down.data.shape != f_s.data.shape[:2]:
        raise ShapeMismatchError(
            f"mask shape {mask_down.data.shape} does not match spatial dims {f_s.data.shape[:2]}"
        )
    inside = mask_down.data[:, :, None] > 0.5
    return FeatureGrid(np.where(inside, 0.5 * (f_s.data + f_e.data), f_s.data))


def downsample_mask(mask: Mask, target_height: int, target_width: int) -> Mask:
    """Block-max downsampling: any 1 in a block marks the output cell.

    Keeps the mask binary so the fusion branch structure stays exact;
    target dims must divide the source dims.
    """
    h, w = mask.height, mask.width
    if target_height <= 0 or target_width <= 0:
        raise ShapeMismatchError("target dims must be positive")
    if h % target_height != 0 or w % target_width != 0:
        raise ShapeMismatchError(
            f"target dims ({target_height}, {target_width}) must divide source dims ({h}, {w})"
        )
    bh, bw = h // target_height, w // target_width
    blocks = mask.data.reshape(target_height, bh, target_width, bw)
    return Mask(blocks.max(axis=(1, 3)))


def blend_expression(
    config: BlendConfig,
    raw_e: FeatureGrid,
    prev_e_tilde: FeatureGrid,
    prev_output: FeatureGrid,
    warp: WarpOperator | None = None,
) -> FeatureGrid:
    """Recursive low-pass blend of the current expression grid with the two
    warped memories (the previous blended expression and the previous
    output). ``warp`` maps a memory grid into the current frame's geometry;
    identity when omitted.
    """
    if warp is not None:
        prev_e_tilde = warp(prev_e_tilde)
        prev_output = warp(prev_output)
    shape = raw_e.data.shape
    if prev_e_tilde.data.shape != shape or prev_output.data.shape != shape:
        raise ShapeMismatchError("blend operands must share one shape (after warping)")
    return FeatureGrid(
        config.lambda_e * raw_e.data
        + config.lambda_e_tilde * prev_e_tilde.data
        + config.lambda_o * prev_output.data
    )
