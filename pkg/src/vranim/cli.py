"""Command-line harness: synthetic data generation, the two calibrations,
boundary annotation, stream replay, and benchmarking.

Exit codes: 0 success, 1 usage error, 2 data error. Pipeline parameters come
from defaults, then an optional ``--config`` JSON file, then ``VRANIM_*``
environment variables, in that order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Mapping, Sequence

from . import alignment, streams, synthetic
from .blend import BlendConfig
from .eyetrack import fit_calibration
from .pipeline import JsonlSink, Pipeline, PipelineConfig, run_replay
from .retrieval import ExpressionStore

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

ENV_PREFIX = "VRANIM_"

_CONFIG_FIELDS = {
    "lambda_swap": float,
    "lambda_c": float,
    "lambda_e": float,
    "lambda_e_tilde": float,
    "lambda_o": float,
    "lower_count": int,
    "eye_index": int,
    "source_frame_id": int,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with the documented usage exit code (1, not argparse's 2)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def load_settings(
    config_path: str | None, environ: Mapping[str, str] | None = None
) -> dict[str, float | int]:
    """Merge pipeline settings: defaults <- config file <- environment."""
    environ = os.environ if environ is None else environ
    settings: dict[str, float | int] = {}
    if config_path:
        payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise streams.StreamFormatError(f"{config_path}: expected a JSON object")
        for key, value in payload.items():
            if key not in _CONFIG_FIELDS:
                raise streams.StreamFormatError(f"{config_path}: unknown config key {key!r}")
            settings[key] = _CONFIG_FIELDS[key](value)
    for key, cast in _CONFIG_FIELDS.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            settings[key] = cast(environ[env_key])
    return settings


def build_pipeline_config(settings: Mapping[str, float | int], boundary) -> PipelineConfig:
    blend = BlendConfig(
        lambda_e=float(settings.get("lambda_e", 0.7)),
        lambda_e_tilde=float(settings.get("lambda_e_tilde", 0.1)),
        lambda_o=float(settings.get("lambda_o", 0.2)),
    )
    return PipelineConfig(
        eye_boundary=boundary,
        lambda_swap=float(settings.get("lambda_swap", 0.25)),
        lambda_c=float(settings.get("lambda_c", 0.75)),
        blend=blend,
        lower_count=int(settings.get("lower_count", 20)),
        eye_index=int(settings.get("eye_index", 20)),
        source_frame_id=int(settings.get("source_frame_id", 0)),
    )


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if output:
        streams._atomic_write(output, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    scenario = synthetic.SyntheticScenario(
        frames=args.frames,
        seed=args.seed,
        lower_count=args.lower_count,
        noise_sigma=args.noise,
        scale=args.scale,
        rotation_deg=args.rotation,
        offset_scale=args.offset_scale,
        shuffle=args.shuffle,
    )
    pair = synthetic.generate_alignment_pair(scenario)
    streams.write_records(out / "source.jsonl", pair.source_frames)
    streams.write_records(out / "mouth.jsonl", pair.mouth_frames)
    streams.write_ground_truth(out / "truth.json", pair.truth)

    replay = synthetic.generate_replay(
        synthetic.ReplayScenario(
            steps=args.frames,
            store_size=args.frames,
            seed=args.seed,
            noise_sigma=args.noise,
            recording=scenario,
        )
    )
    streams.write_records(out / "sensor.jsonl", replay.sensor_records)
    streams.write_eye_samples(out / "eye_samples.jsonl", replay.eye_samples)
    streams.write_eye_boundary(out / "boundary.json", replay.boundary)
    print(f"wrote synthetic scenario (frames={args.frames}, seed={args.seed}) to {out}")
    return EXIT_OK


def _cmd_calibrate_alignment(args: argparse.Namespace) -> int:
    source = streams.read_records(args.source)
    mouth = streams.read_records(args.mouth)
    if len(source) < 2 or len(mouth) < 2:
        raise streams.StreamFormatError("calibration requires at least 2 frames per stream")

    # Hold out the last tenth for an unbiased quality metric; the training
    # residual alone would be optimistic.
    holdout = max(1, len(mouth) // 10) if args.truth else 0
    train_mouth = mouth[: len(mouth) - holdout] if holdout else mouth

    started = time.perf_counter()
    model = alignment.calibrate(source, train_mouth)
    elapsed = time.perf_counter() - started
    streams.write_alignment_model(args.model_output, model)

    report = {
        "frames": {"source": len(source), "mouth": len(mouth), "held_out": holdout},
        "iterations": model.iteration_count,
        "residual": model.final_residual,
        "degenerate_keypoints": list(model.degenerate_indices),
        "wall_clock_s": elapsed,
        "model": str(args.model_output),
    }
    if args.truth:
        truth = streams.read_ground_truth(args.truth)
        held_mouth = mouth[len(mouth) - holdout :]
        pairing = truth.permutation[len(mouth) - holdout :]
        report["holdout_reprojection_error"] = alignment.reprojection_error(
            model, held_mouth, source, pairing
        )
        pairs = alignment.find_correspondences(model, mouth, source)
        matches = sum(
            1
            for j, pair in enumerate(pairs)
            if source[truth.permutation[j]].frame_id == pair.source_frame_id
        )
        report["correspondence_agreement"] = matches / len(pairs)
        scales = [float(abs(t.matrix[0, 0])) for t in model.transforms]
        true_scales = [float(abs(t.matrix[0, 0])) for t in truth.transforms]
        report["mean_scale"] = sum(scales) / len(scales)
        report["true_mean_scale"] = sum(true_scales) / len(true_scales)
    _emit(report, args.output)
    return EXIT_OK


def _cmd_calibrate_eyes(args: argparse.Namespace) -> int:
    samples = streams.read_eye_samples(args.samples)
    calibration = fit_calibration(samples)
    streams.write_eye_calibration(args.model_output, calibration)
    _emit(
        {
            "samples": len(samples),
            "fit_residual": calibration.fit_residual,
            "model": str(args.model_output),
        },
        args.output,
    )
    return EXIT_OK


def _cmd_annotate_eye_boundary(args: argparse.Namespace) -> int:
    boundary = streams.parse_boundary_annotation(args.input)
    streams.write_eye_boundary(args.boundary_output, boundary)
    print(f"wrote eye boundary config to {args.boundary_output}")
    return EXIT_OK


def _build_pipeline(args: argparse.Namespace) -> Pipeline:
    settings = load_settings(args.config)
    boundary = streams.read_eye_boundary(args.boundary)
    config = build_pipeline_config(settings, boundary)
    model = streams.read_alignment_model(args.alignment)
    eyes = streams.read_eye_calibration(args.eyes)
    store = ExpressionStore.from_records(streams.read_records(args.store))
    return Pipeline(config, model, eyes, store)


def _cmd_replay(args: argparse.Namespace) -> int:
    pipeline = _build_pipeline(args)
    state = streams.read_pipeline_state(args.state_in) if args.state_in else None
    frames = streams.iter_records_lenient(args.stream)

    if args.output:
        out_path = Path(args.output)
        tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
        with open(tmp_path, "w", encoding="utf-8") as handle:
            report, final_state = run_replay(pipeline, frames, JsonlSink(handle), state)
        os.replace(tmp_path, out_path)
    else:
        report, final_state = run_replay(pipeline, frames, None, state)

    if args.state_out:
        streams.write_pipeline_state(args.state_out, final_state)
    _emit(report.to_dict(), args.report)
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    scenario = synthetic.SyntheticScenario(frames=args.frames, seed=args.seed)
    pair = synthetic.generate_alignment_pair(scenario)
    started = time.perf_counter()
    model = alignment.calibrate(pair.source_frames, pair.mouth_frames)
    calibration_s = time.perf_counter() - started

    replay_data = synthetic.generate_replay(
        synthetic.ReplayScenario(steps=args.steps, store_size=args.store_size, seed=args.seed)
    )
    store = ExpressionStore.from_records(replay_data.store_records)
    step_model = alignment.calibrate(replay_data.store_records, replay_data.mouth_records)
    eyes = fit_calibration(list(replay_data.eye_samples))
    config = build_pipeline_config(load_settings(args.config), replay_data.boundary)
    pipeline = Pipeline(config, step_model, eyes, store)
    report, _ = run_replay(pipeline, replay_data.sensor_records)

    _emit(
        {
            "calibration": {
                "frames": args.frames,
                "lower_keypoints": scenario.lower_count,
                "wall_clock_s": calibration_s,
                "iterations": model.iteration_count,
                "residual": model.final_residual,
            },
            "replay": report.to_dict(),
            "store_size": args.store_size,
            "keypoints_per_frame": scenario.lower_count + scenario.eye_count + scenario.pose_count,
        },
        args.output,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="vranim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic scenario with ground truth")
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lower-count", type=int, default=20, dest="lower_count")
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--scale", type=float, default=1.4)
    p.add_argument("--rotation", type=float, default=4.0)
    p.add_argument("--offset-scale", type=float, default=0.02, dest="offset_scale")
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("calibrate-alignment", help="learn the mouth-to-source transforms")
    p.add_argument("--source", required=True)
    p.add_argument("--mouth", required=True)
    p.add_argument("--truth", default=None, help="ground-truth file for recovery metrics")
    p.add_argument("--model-output", default="alignment.json", dest="model_output")
    p.add_argument("--output", default=None, help="write the report JSON here instead of stdout")
    p.set_defaults(func=_cmd_calibrate_alignment)

    p = sub.add_parser("calibrate-eyes", help="fit the per-eye gaze transforms")
    p.add_argument("--samples", required=True)
    p.add_argument("--model-output", default="eyes.json", dest="model_output")
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_calibrate_eyes)

    p = sub.add_parser("annotate-eye-boundary", help="validate a five-point boundary file")
    p.add_argument("--input", required=True)
    p.add_argument("--boundary-output", default="boundary.json", dest="boundary_output")
    p.set_defaults(func=_cmd_annotate_eye_boundary)

    p = sub.add_parser("replay", help="run the pipeline over a recorded sensor stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--store", required=True, help="enrollment stream backing the expression store")
    p.add_argument("--alignment", required=True)
    p.add_argument("--eyes", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--output", default=None, help="render request JSON-lines file")
    p.add_argument("--report", default=None, help="write the report JSON here instead of stdout")
    p.add_argument("--state-in", default=None, dest="state_in")
    p.add_argument("--state-out", default=None, dest="state_out")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("bench", help="calibration wall-clock and per-step latency percentiles")
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--store-size", type=int, default=350, dest="store_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (streams.StreamFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
