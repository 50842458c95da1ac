"""Deterministic synthetic keypoint streams with recorded ground truth.

Every scenario is fully determined by its seed. The generators emit
enrollment (source-camera) sequences, mouth-camera sequences related to them
by known per-keypoint transforms, and sensor streams for full pipeline
replay; the accompanying ground-truth records make the true transforms,
frame pairings, gaze trajectory and blink windows available as test oracles.

The ground-truth mouth-to-source transforms share one linear part and differ
by per-keypoint offsets. With centroid-anchored per-keypoint mappings a
frame-varying mean would otherwise leak into the relative coordinates, and
no per-keypoint transform set could reproduce the data exactly even at zero
noise; sharing the linear part keeps the scenario exactly recoverable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import FrameRecord, Keypoint, KeypointSet, Role, Transform2D, default_roles
from .driving import EyeBoundary
from .eyetrack import CalibrationSample


@dataclass(frozen=True)
class SyntheticScenario:
    """Parameters of one synthetic enrollment/mouth recording pair."""

    frames: int = 250
    seed: int = 0
    lower_count: int = 20
    eye_count: int = 12
    pose_count: int = 36
    noise_sigma: float = 0.0
    scale: float = 1.0
    rotation_deg: float = 0.0
    offset_scale: float = 0.0
    # Per-keypoint motion large enough that measurement noise at the default
    # sigma=0.01 barely attenuates the fitted linear parts (noisy regression
    # inputs shrink least-squares coefficients by s^2 / (s^2 + sigma^2)).
    amplitude_range: tuple[float, float] = (0.08, 0.15)
    frequency_range: tuple[float, float] = (0.4, 2.4)
    fps: float = 30.0
    shuffle: bool = False
    source_drift: float = 0.05
    mouth_drift: float = 0.08

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError("scenario needs at least one frame")
        if self.lower_count < 1:
            raise ValueError("scenario needs at least one lower-face keypoint")
        if self.noise_sigma < 0.0:
            raise ValueError("noise sigma must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """Oracle record: true transforms and the frame pairing."""

    transforms: tuple[Transform2D, ...]
    permutation: tuple[int, ...]


@dataclass(frozen=True)
class SyntheticPair:
    source_frames: tuple[FrameRecord, ...]
    mouth_frames: tuple[FrameRecord, ...]
    truth: GroundTruth


def _waveform(
    rng: np.random.Generator, scenario: SyntheticScenario, times: np.ndarray
) -> np.ndarray:
    """Centroid-free lower-face motion, shape (frames, L, 2).

    A mouth-shaped ellipse of base positions plus per-keypoint sinusoids;
    per-keypoint frequencies keep the expression trajectory from revisiting
    the same configuration, so frames stay distinguishable.
    """
    count = scenario.lower_count
    angles = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    base = np.stack([0.18 * np.cos(angles), 0.10 * np.sin(angles)], axis=1)
    base += rng.normal(scale=0.01, size=base.shape)

    lo, hi = scenario.amplitude_range
    amplitude = rng.uniform(lo, hi, size=(count, 2))
    f_lo, f_hi = scenario.frequency_range
    frequency = rng.uniform(f_lo, f_hi, size=(count, 2))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(count, 2))

    # Slow open/close of the whole mouth on top of the per-keypoint motion.
    opening = 0.04 * np.sin(2.0 * math.pi * 0.23 * times + rng.uniform(0.0, 2.0 * math.pi))

    arg = 2.0 * math.pi * frequency[None, :, :] * times[:, None, None] + phase[None, :, :]
    wave = base[None, :, :] + amplitude[None, :, :] * np.sin(arg)
    wave = wave.copy()
    wave[:, :, 1] += opening[:, None] * np.sign(base[:, 1])[None, :]
    return wave - wave.mean(axis=1, keepdims=True)


def _drift(rng: np.random.Generator, amplitude: float, times: np.ndarray) -> np.ndarray:
    """Slow 2D centroid wander, shape (frames, 2)."""
    fx, fy = rng.uniform(0.05, 0.15, size=2)
    px, py = rng.uniform(0.0, 2.0 * math.pi, size=2)
    return amplitude * np.stack(
        [np.sin(2.0 * math.pi * fx * times + px), np.cos(2.0 * math.pi * fy * times + py)],
        axis=1,
    )


def _ground_truth_transforms(
    rng: np.random.Generator, scenario: SyntheticScenario
) -> tuple[np.ndarray, np.ndarray, tuple[Transform2D, ...]]:
    theta = math.radians(scenario.rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    linear = scenario.scale * np.array([[c, -s], [s, c]])
    offsets = rng.normal(scale=scenario.offset_scale, size=(scenario.lower_count, 2))
    offsets -= offsets.mean(axis=0)
    transforms = tuple(
        Transform2D.from_linear(linear, offsets[i]) for i in range(scenario.lower_count)
    )
    return linear, offsets, transforms


def _face_extras(rng: np.random.Generator, scenario: SyntheticScenario) -> np.ndarray:
    """Static eye/pose keypoint layout of the enrolled face, shape (E+P, 2)."""
    extras = []
    eye_centers = [(-0.25, 0.35), (0.25, 0.35)]
    for i in range(scenario.eye_count):
        cx, cy = eye_centers[i % 2]
        angle = 2.0 * math.pi * (i // 2) / max(1, scenario.eye_count // 2)
        extras.append((cx + 0.06 * math.cos(angle), cy + 0.03 * math.sin(angle)))
    for i in range(scenario.pose_count):
        angle = math.pi * (i + 0.5) / scenario.pose_count
        extras.append((0.7 * math.cos(angle), 0.55 * math.sin(angle) - 0.1))
    layout = np.array(extras, dtype=float)
    layout += rng.normal(scale=0.005, size=layout.shape)
    return layout


def generate_alignment_pair(scenario: SyntheticScenario) -> SyntheticPair:
    """Generate a (source sequence, mouth sequence, ground truth) triple.

    The source stream follows the waveform through the true transforms; the
    mouth stream carries the same expressions (inverse transforms applied,
    i.e. the raw waveform), an independent centroid drift, and Gaussian
    noise. With the identity scenario the two streams match up to the
    centroid convention.
    """
    rng = np.random.default_rng(scenario.seed)
    times = np.arange(scenario.frames) / scenario.fps

    wave = _waveform(rng, scenario, times)
    linear, offsets, transforms = _ground_truth_transforms(rng, scenario)
    extras = _face_extras(rng, scenario)
    source_drift = _drift(rng, scenario.source_drift, times)
    mouth_drift = _drift(rng, scenario.mouth_drift, times)
    permutation = (
        rng.permutation(scenario.frames) if scenario.shuffle else np.arange(scenario.frames)
    )
    noise = rng.normal(scale=scenario.noise_sigma, size=(scenario.frames, scenario.lower_count, 2))

    roles = default_roles(scenario.lower_count, scenario.eye_count, scenario.pose_count)
    mouth_roles = (Role.LOWER_FACE,) * scenario.lower_count

    source_lower = wave @ linear.T + offsets[None, :, :] + source_drift[:, None, :]
    source_frames = []
    for k in range(scenario.frames):
        points = np.vstack([source_lower[k], extras + source_drift[k]])
        source_frames.append(
            FrameRecord(
                frame_id=k,
                timestamp=float(times[k]),
                keypoints=KeypointSet(points, roles),
                payload_ref=f"synthetic://source/{scenario.seed}/{k}",
            )
        )

    mouth_frames = []
    for j in range(scenario.frames):
        k = int(permutation[j])
        points = wave[k] + mouth_drift[j] + noise[j]
        mouth_frames.append(
            FrameRecord(
                frame_id=j,
                timestamp=float(times[j]),
                keypoints=KeypointSet(points, mouth_roles),
                payload_ref=f"synthetic://mouth/{scenario.seed}/{j}",
            )
        )

    return SyntheticPair(
        source_frames=tuple(source_frames),
        mouth_frames=tuple(mouth_frames),
        truth=GroundTruth(transforms=transforms, permutation=tuple(int(p) for p in permutation)),
    )


# ---------------------------------------------------------------------------
# Pipeline replay scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayScenario:
    """Parameters for a full sensor-stream replay against an enrollment store.

    With ``store_stride`` > 1 the store keeps only every stride-th enrollment
    frame while the sensor stream still walks the full recording, so most
    queries land between stored expressions; useful for exercising the
    switching hysteresis.
    """

    steps: int = 1000
    store_size: int = 350
    store_stride: int = 1
    walk_jitter: float = 0.0
    seed: int = 0
    noise_sigma: float = 0.0
    eye_noise_sigma: float = 0.0
    blink_every: int = 120
    blink_length: int = 6
    recording: SyntheticScenario = field(default_factory=SyntheticScenario)

    def __post_init__(self) -> None:
        if self.steps < 1 or self.store_size < 1:
            raise ValueError("replay needs at least one step and one store frame")
        if self.store_stride < 1:
            raise ValueError("store_stride must be positive")
        if self.walk_jitter < 0.0:
            raise ValueError("walk_jitter must be non-negative")


@dataclass(frozen=True)
class ReplayTruth:
    """Oracle record for a replay: generating indices, gaze, blink windows."""

    expression_indices: tuple[int, ...]
    gaze: tuple[tuple[float, float], ...]
    blink_steps: tuple[int, ...]
    eye_left: Transform2D
    eye_right: Transform2D


@dataclass(frozen=True)
class ReplayData:
    store_records: tuple[FrameRecord, ...]
    mouth_records: tuple[FrameRecord, ...]
    sensor_records: tuple[FrameRecord, ...]
    eye_samples: tuple[CalibrationSample, ...]
    boundary: EyeBoundary
    alignment_truth: GroundTruth
    truth: ReplayTruth


def _eye_ground_truth(rng: np.random.Generator) -> tuple[Transform2D, Transform2D]:
    def sample() -> Transform2D:
        scale = rng.uniform(1.2, 2.0)
        theta = rng.uniform(-0.2, 0.2)
        c, s = math.cos(theta), math.sin(theta)
        linear = scale * np.array([[c, -s], [s, c]])
        return Transform2D.from_linear(linear, rng.uniform(-0.2, 0.2, size=2))

    return sample(), sample()


def generate_eye_samples(
    rng: np.random.Generator,
    left: Transform2D,
    right: Transform2D,
    count: int = 25,
    sigma: float = 0.0,
) -> tuple[CalibrationSample, ...]:
    """Supervision triplets from a dot grid seen through the inverse transforms."""
    side = max(2, int(round(math.sqrt(count))))
    grid = np.linspace(-0.8, 0.8, side)
    targets = np.array([(u, v) for u in grid for v in grid])[:count]
    inv_left, inv_right = left.inverse(), right.inverse()
    samples = []
    for u, v in targets:
        raw_l = inv_left.apply(Keypoint(float(u), float(v)))
        raw_r = inv_right.apply(Keypoint(float(u), float(v)))
        nl = rng.normal(scale=sigma, size=2)
        nr = rng.normal(scale=sigma, size=2)
        samples.append(
            CalibrationSample(
                left_raw=Keypoint(raw_l.x + nl[0], raw_l.y + nl[1]),
                right_raw=Keypoint(raw_r.x + nr[0], raw_r.y + nr[1]),
                gaze_gt=(float(u), float(v)),
            )
        )
    return tuple(samples)


def default_boundary() -> EyeBoundary:
    """Plausible eyelid coordinate system for synthetic faces."""
    return EyeBoundary(
        origin=Keypoint(0.25, 0.38),
        right=Keypoint(0.05, 0.0),
        left=Keypoint(-0.05, 0.0),
        up=Keypoint(0.0, 0.04),
        down=Keypoint(0.0, -0.06),
    )


def generate_replay(scenario: ReplayScenario) -> ReplayData:
    """Build an enrollment store plus a sensor stream that replays it.

    The sensor stream walks the enrollment expressions in order (wrapping
    when longer than the store), so the generating index of every step is
    known. Sensor frames carry the lower-face keypoints followed by the two
    raw eye keypoints; during blink windows the raw eye keypoints are pushed
    apart so the fused confidence collapses.
    """
    pool_size = scenario.store_size * scenario.store_stride
    recording = replace(
        scenario.recording,
        frames=pool_size,
        seed=scenario.seed,
        noise_sigma=0.0,
        shuffle=False,
    )
    pair = generate_alignment_pair(recording)
    store_records = pair.source_frames[:: scenario.store_stride]

    rng = np.random.default_rng(scenario.seed + 0x5EED)
    left_t, right_t = _eye_ground_truth(rng)
    inv_left, inv_right = left_t.inverse(), right_t.inverse()
    eye_samples = generate_eye_samples(rng, left_t, right_t, sigma=scenario.eye_noise_sigma)

    steps = scenario.steps
    times = np.arange(steps) / recording.fps
    # The sensor stream walks the recorded expressions in order; a nonzero
    # walk_jitter makes the walk backtrack around key boundaries, which is
    # what switching hysteresis exists to calm down.
    walk = np.arange(steps, dtype=float)
    if scenario.walk_jitter > 0.0:
        walk = walk + scenario.walk_jitter * np.sin(2.0 * math.pi * 0.21 * np.arange(steps))
    pool_indices = np.rint(walk).astype(int) % pool_size
    # Reference answer for retrieval checks: the store entry closest in
    # recording time to the expression each sensor frame was generated from.
    indices = np.minimum(
        np.rint(pool_indices / scenario.store_stride).astype(int), scenario.store_size - 1
    )
    gaze_u = 0.7 * np.sin(2.0 * math.pi * 0.13 * times)
    gaze_v = 0.5 * np.sin(2.0 * math.pi * 0.07 * times + 1.0)

    blink_steps = []
    if scenario.blink_every > 0:
        for start in range(scenario.blink_every, steps, scenario.blink_every):
            blink_steps.extend(range(start, min(start + scenario.blink_length, steps)))
    blink_set = set(blink_steps)

    mouth_drift = _drift(rng, recording.mouth_drift, times)
    noise = rng.normal(scale=scenario.noise_sigma, size=(steps, recording.lower_count, 2))
    eye_noise = rng.normal(scale=scenario.eye_noise_sigma, size=(steps, 2, 2))

    lower = recording.lower_count
    sensor_roles = (Role.LOWER_FACE,) * lower + (Role.EYE, Role.EYE)
    sensor_records = []
    gaze_list = []
    for t in range(steps):
        k = int(pool_indices[t])
        mouth_points = pair.mouth_frames[k].keypoints.points + (
            mouth_drift[t] - pair.mouth_frames[k].keypoints.points.mean(axis=0)
        )
        mouth_points = mouth_points + noise[t]
        u, v = float(gaze_u[t]), float(gaze_v[t])
        gaze_list.append((u, v))
        raw_l = inv_left.apply(Keypoint(u, v))
        raw_r = inv_right.apply(Keypoint(u, v))
        raw = np.array([[raw_l.x, raw_l.y], [raw_r.x, raw_r.y]]) + eye_noise[t]
        if t in blink_set:
            # Closed eyes: the two predictions disagree wildly.
            raw[0] += inv_left.linear @ np.array([0.9, 0.9])
            raw[1] -= inv_right.linear @ np.array([0.9, 0.9])
        points = np.vstack([mouth_points, raw])
        sensor_records.append(
            FrameRecord(
                frame_id=t,
                timestamp=float(times[t]),
                keypoints=KeypointSet(points, sensor_roles),
                payload_ref=f"synthetic://sensor/{scenario.seed}/{t}",
            )
        )

    return ReplayData(
        store_records=store_records,
        mouth_records=pair.mouth_frames,
        sensor_records=tuple(sensor_records),
        eye_samples=eye_samples,
        boundary=default_boundary(),
        alignment_truth=pair.truth,
        truth=ReplayTruth(
            expression_indices=tuple(int(i) for i in indices),
            gaze=tuple(gaze_list),
            blink_steps=tuple(sorted(blink_set)),
            eye_left=left_t,
            eye_right=right_t,
        ),
    )
