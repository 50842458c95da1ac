"""Per-frame orchestration: ingest mouth/eye keypoints, run gaze fusion and
filtering, retrieve the expression frame with hysteresis, construct the
driving frame, update the blend memories, and emit a render request.

One pipeline instance serves one stream and is driven by a single logical
thread; the calibration artifacts it holds are immutable and may be shared
across instances. State is an explicit value object: a step consumes a
state and returns a new one, so identical inputs replay to bit-identical
outputs and a state checkpoint can resume mid-stream.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .alignment import AlignmentModel, DimensionMismatchError
from .blend import BlendConfig, FeatureGrid, WarpOperator, blend_expression
from .core import FrameRecord, Keypoint, KeypointSet, Role
from .driving import DrivingFrame, EyeBoundary, construct_driving
from .eyetrack import EyeCalibration, GazeState, filter_eye, fuse
from .retrieval import (
    DEFAULT_LAMBDA_SWAP,
    ExpressionStore,
    RetrievalState,
    retrieve_with_hysteresis,
)
from .streams import InvalidFrame

STAGES = ("gaze", "retrieval", "driving", "blend")


class FrameOrderError(ValueError):
    """Input timestamp does not advance past the previous frame."""


@dataclass(frozen=True)
class PipelineConfig:
    """Aggregated per-stream parameters and the eye coordinate system."""

    eye_boundary: EyeBoundary
    lambda_swap: float = DEFAULT_LAMBDA_SWAP
    lambda_c: float = 0.75
    blend: BlendConfig = field(default_factory=BlendConfig)
    lower_count: int = 20
    eye_index: int = 20
    source_frame_id: int = 0

    def __post_init__(self) -> None:
        if self.lambda_swap < 0.0:
            raise ValueError("lambda_swap must be non-negative")
        if not 0.0 <= self.lambda_c <= 1.0:
            raise ValueError("lambda_c must lie in [0, 1]")
        if self.lower_count < 1:
            raise ValueError("lower_count must be positive")


@dataclass(frozen=True)
class RenderRequest:
    """The packaged inputs for the downstream renderer."""

    driving: DrivingFrame
    source_payload_ref: str
    expression_payload_ref: str
    blend_weights: BlendConfig
    timestamp: float


@dataclass(frozen=True)
class PipelineState:
    """Everything a stream carries between steps."""

    retrieval: RetrievalState = field(default_factory=RetrievalState)
    gaze: GazeState = field(default_factory=GazeState)
    expression_memory: FeatureGrid | None = None
    output_memory: FeatureGrid | None = None
    frame_count: int = 0
    last_timestamp: float | None = None


def split_sensor_frame(
    record: FrameRecord, lower_count: int
) -> tuple[KeypointSet, Keypoint, Keypoint]:
    """Split a sensor frame into (mouth set, left eye raw, right eye raw).

    Sensor frames carry the lower-face keypoints followed by exactly two
    eye-role keypoints holding the raw per-eye-camera predictions.
    """
    kps = record.keypoints
    if kps.lower_count != lower_count or len(kps) != lower_count + 2:
        raise DimensionMismatchError(
            f"sensor frame {record.frame_id} must carry {lower_count} lower-face "
            f"keypoints plus 2 eye keypoints, got {kps.lower_count}+{len(kps) - kps.lower_count}"
        )
    mouth = KeypointSet(kps.points[:lower_count], (Role.LOWER_FACE,) * lower_count)
    return mouth, kps.keypoint(lower_count), kps.keypoint(lower_count + 1)


class Pipeline:
    """Single-stream inference over calibrated artifacts."""

    def __init__(
        self,
        config: PipelineConfig,
        alignment: AlignmentModel,
        eye_calibration: EyeCalibration,
        store: ExpressionStore,
        warp: WarpOperator | None = None,
    ) -> None:
        self.config = config
        self.alignment = alignment
        self.eye_calibration = eye_calibration
        self.store = store
        self.warp = warp
        sources = [rec for rec in store.values if rec.frame_id == config.source_frame_id]
        if not sources:
            raise ValueError(
                f"source_frame_id {config.source_frame_id} is not in the expression store"
            )
        self.source = sources[0]
        if self.source.keypoints.lower_count != len(alignment):
            raise DimensionMismatchError(
                "source frame lower-face count does not match the alignment model"
            )
        roles = self.source.keypoints.roles
        if not 0 <= config.eye_index < len(roles) or roles[config.eye_index] is not Role.EYE:
            raise ValueError(f"eye_index {config.eye_index} is not an eye keypoint of the source")
        self._grids: dict[int, FeatureGrid] = {}

    def initial_state(self) -> PipelineState:
        return PipelineState()

    def _expression_grid(self, index: int) -> FeatureGrid:
        """Keypoint-coordinate grid standing in for the expression frame.

        No pixels exist at this layer, so the retrieved frame's keypoint
        array serves as the blendable content proxy.
        """
        grid = self._grids.get(index)
        if grid is None:
            points = self.store.values[index].keypoints.points
            grid = FeatureGrid(points.reshape(points.shape[0], 2, 1))
            self._grids[index] = grid
        return grid

    def step(
        self,
        state: PipelineState,
        mouth_set: KeypointSet,
        left_raw: Keypoint,
        right_raw: Keypoint,
        timestamp: float,
    ) -> tuple[PipelineState, RenderRequest]:
        new_state, request, _, _ = self.step_timed(state, mouth_set, left_raw, right_raw, timestamp)
        return new_state, request

    def step_timed(
        self,
        state: PipelineState,
        mouth_set: KeypointSet,
        left_raw: Keypoint,
        right_raw: Keypoint,
        timestamp: float,
    ) -> tuple[PipelineState, RenderRequest, dict[str, float], bool]:
        """One frame; also returns per-stage seconds and the switch flag.

        Gaze runs before retrieval; the two are independent, so the order is
        fixed purely to keep latency accounting deterministic. Raises on
        malformed input without touching ``state``.
        """
        if state.last_timestamp is not None and timestamp <= state.last_timestamp:
            raise FrameOrderError(
                f"timestamp {timestamp} does not advance past {state.last_timestamp}"
            )
        config = self.config

        t0 = time.perf_counter()
        position, confidence = fuse(self.eye_calibration, left_raw, right_raw)
        gaze = filter_eye(state.gaze, position, confidence, lambda_c=config.lambda_c)

        t1 = time.perf_counter()
        retrieval, switched = retrieve_with_hysteresis(
            mouth_set, self.alignment, self.store, state.retrieval, config.lambda_swap
        )
        index = retrieval.current_index
        assert index is not None

        t2 = time.perf_counter()
        driving = construct_driving(
            self.source,
            mouth_set,
            self.alignment,
            gaze,
            config.eye_boundary,
            eye_index=config.eye_index,
            expression_index=index,
        )

        t3 = time.perf_counter()
        raw = self._expression_grid(index)
        blended = blend_expression(
            config.blend,
            raw,
            state.expression_memory if state.expression_memory is not None else raw,
            state.output_memory if state.output_memory is not None else raw,
            self.warp,
        )
        t4 = time.perf_counter()

        request = RenderRequest(
            driving=driving,
            source_payload_ref=self.source.payload_ref,
            expression_payload_ref=self.store.values[index].payload_ref,
            blend_weights=config.blend,
            timestamp=timestamp,
        )
        new_state = PipelineState(
            retrieval=retrieval,
            gaze=gaze,
            expression_memory=blended,
            output_memory=blended,
            frame_count=state.frame_count + 1,
            last_timestamp=timestamp,
        )
        timings = {
            "gaze": t1 - t0,
            "retrieval": t2 - t1,
            "driving": t3 - t2,
            "blend": t4 - t3,
            "total": t4 - t0,
        }
        return new_state, request, timings, switched


# ---------------------------------------------------------------------------
# Replay driver
# ---------------------------------------------------------------------------

Sink = Callable[[RenderRequest], None]


class NullSink:
    """Discards render requests."""

    def __call__(self, request: RenderRequest) -> None:  # noqa: ARG002
        return None


class JsonlSink:
    """Appends one JSON line per render request to an open text handle."""

    def __init__(self, handle) -> None:
        self._handle = handle

    def __call__(self, request: RenderRequest) -> None:
        from .streams import render_request_to_line

        self._handle.write(render_request_to_line(request) + "\n")


@dataclass(frozen=True)
class ReplayReport:
    """Accounting and latency summary of one replay run."""

    frames_in: int
    processed: int
    dropped: tuple[tuple[int, str], ...]
    switches: int
    blinks: int
    latency_ms: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "frames_in": self.frames_in,
            "processed": self.processed,
            "dropped": [{"frame": idx, "reason": reason} for idx, reason in self.dropped],
            "switches": self.switches,
            "blinks": self.blinks,
            "latency_ms": self.latency_ms,
        }


def _percentiles(samples: Sequence[float]) -> dict[str, float]:
    if not samples:
        return {"mean": 0.0, "p50": 0.0, "p90": 0.0, "p99": 0.0}
    arr = np.array(samples) * 1e3
    return {
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p90": float(np.percentile(arr, 90)),
        "p99": float(np.percentile(arr, 99)),
    }


def run_replay(
    pipeline: Pipeline,
    frames: Iterable[FrameRecord | InvalidFrame],
    sink: Sink | None = None,
    state: PipelineState | None = None,
) -> tuple[ReplayReport, PipelineState]:
    """Feed every frame to the pipeline and forward render requests.

    Frames that fail validation (including InvalidFrame markers from a
    lenient reader) are dropped: the drop is recorded with its index, the
    state is left untouched except for the frame counter, and the replay
    continues. Returns the report and the final state so callers can
    checkpoint and resume.
    """
    if sink is None:
        sink = NullSink()
    if state is None:
        state = pipeline.initial_state()

    lower = len(pipeline.alignment)
    dropped: list[tuple[int, str]] = []
    switches = 0
    blinks = 0
    processed = 0
    frames_in = 0
    stage_samples: dict[str, list[float]] = {name: [] for name in (*STAGES, "total")}

    for item in frames:
        frames_in += 1
        index = state.frame_count
        if isinstance(item, InvalidFrame):
            dropped.append((index, f"line {item.line_number}: {item.reason}"))
            state = replace(state, frame_count=state.frame_count + 1)
            continue
        try:
            mouth, left_raw, right_raw = split_sensor_frame(item, lower)
            state_next, request, timings, switched = pipeline.step_timed(
                state, mouth, left_raw, right_raw, item.timestamp
            )
        except ValueError as exc:
            dropped.append((index, f"frame {item.frame_id}: {exc}"))
            state = replace(state, frame_count=state.frame_count + 1)
            continue
        state = state_next
        processed += 1
        if switched:
            switches += 1
        if request.driving.blink:
            blinks += 1
        for name, value in timings.items():
            stage_samples[name].append(value)
        sink(request)

    report = ReplayReport(
        frames_in=frames_in,
        processed=processed,
        dropped=tuple(dropped),
        switches=switches,
        blinks=blinks,
        latency_ms={name: _percentiles(samples) for name, samples in stage_samples.items()},
    )
    return report, state
