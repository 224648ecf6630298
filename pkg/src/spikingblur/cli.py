"""Command-line front end: ``simulate``, ``fit``, ``render``, ``edi`` and ``eval``.

Exit status is 0 on success, 1 on runtime failure (bad files, invalid
data) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .baseline import edi_reconstruct
from .core import ConfigError, ExposureWindow, FrameSequence
from .fitter import fit_event_only, fit_supervised
from .metrics import sequence_metrics
from .render import RenderRequest, render_superres, render_video
from .simulator import sample_video, simulate_events, synthesize_blur


class UsageError(Exception):
    pass


def _config(args) -> io.PipelineConfig:
    return io.load_config(args.config) if args.config else io.default_config()


def _timestamps(args, window: ExposureWindow) -> np.ndarray:
    if args.timestamps:
        try:
            ts = np.array([float(v) for v in args.timestamps.split(",")])
        except ValueError:
            raise UsageError(f"bad --timestamps {args.timestamps!r}") from None
        if np.any(np.diff(ts) <= 0):
            raise UsageError("--timestamps must be strictly increasing")
        return ts
    if not args.fps > 0:
        raise UsageError("--fps must be positive")
    count = int(round(args.fps * window.T))
    if count < 1:
        raise UsageError(f"--fps {args.fps} gives no frames over T = {window.T}")
    return window.uniform_timestamps(count)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    frames = args.frames if args.frames is not None else cfg.sim.frames
    if frames < 1:
        raise UsageError("--frames must be positive")
    spec, sim = cfg.scene, cfg.sim
    events = simulate_events(
        spec, cfg.thresholds, epsilon_floor=sim.epsilon_floor, time_samples=sim.time_samples,
        drop_rate=sim.drop_rate, jitter=sim.jitter, seed=sim.seed,
    )
    io.write_events(args.out_events, events)
    io.write_frame(args.out_blur, synthesize_blur(spec, sim.quadrature_samples))
    if args.out_truth_dir:
        truth = sample_video(spec, spec.window.uniform_timestamps(frames))
        io.write_frames(args.out_truth_dir, truth, args.format)
    print(f"{len(events)} events, {spec.resolution[1]}x{spec.resolution[0]}, T={spec.window.T}")
    return 0


def cmd_fit(args) -> int:
    if not args.events and not args.targets_dir:
        raise UsageError("fit needs --events, --targets-dir or both")
    cfg = _config(args)
    blurry = io.read_frame(args.blur)
    if args.targets_dir:
        paths = io.frame_paths(args.targets_dir)
        if not paths:
            raise ValueError(f"{args.targets_dir}: no frames found")
        targets = FrameSequence(tuple(io.read_frame(p) for p in paths))
        window = io.read_events(args.events).window if args.events else cfg.window
        field, report = fit_supervised(blurry, targets, cfg.fit, window)
    else:
        events = io.read_events(args.events)
        fcfg = cfg.fit
        if fcfg.mode != "event-only" or fcfg.c_thr is None:
            fcfg = replace(fcfg, mode="event-only", c_thr=cfg.c_thr)
        field, report = fit_event_only(blurry, events, fcfg)
    io.write_field(args.out_field, field)
    report_path = args.report or str(args.out_field) + ".loss.csv"
    Path(report_path).write_text(report.to_csv())
    print(f"final loss {report.final_loss!r} after {report.iterations} iteration(s)")
    return 0


def cmd_render(args) -> int:
    if args.scale < 1:
        raise UsageError("--scale must be a positive integer")
    field = io.read_field(args.field)
    blurry = io.read_frame(args.blur)
    ts = _timestamps(args, field.window)
    h, w = field.resolution
    clamp = not args.no_clamp
    if args.scale > 1:
        req = RenderRequest(tuple(ts), (h * args.scale, w * args.scale), clamp)
        frames = render_superres(field, blurry, req)
    else:
        frames = render_video(field, blurry, RenderRequest(tuple(ts), None, clamp))
    io.write_frames(args.out_dir, frames, args.format)
    print(f"{len(frames)} frame(s) written to {args.out_dir}")
    return 0


def cmd_edi(args) -> int:
    if not args.threshold > 0:
        raise UsageError("--threshold must be positive")
    blurry = io.read_frame(args.blur)
    events = io.read_events(args.events)
    ts = _timestamps(args, events.window)
    frames = edi_reconstruct(blurry, events, args.threshold, ts)
    io.write_frames(args.out_dir, frames, args.format)
    print(f"{len(frames)} frame(s) written to {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    pred = [io.read_frame(p) for p in io.frame_paths(args.pred_dir)]
    truth = [io.read_frame(p) for p in io.frame_paths(args.truth_dir)]
    if len(pred) != len(truth):
        raise ValueError(f"frame count mismatch: {len(pred)} predicted vs {len(truth)} truth")
    a, b = FrameSequence(tuple(pred)), FrameSequence(tuple(truth))
    ts = b.timestamps
    span = max(float(ts.max() - ts.min()), 1.0) if len(ts) else 1.0
    table = sequence_metrics(a, b, span)
    Path(args.out).write_text(table.to_csv())
    m = table.mean
    print(f"mean mse {m['mse']:.6g}  psnr {m['psnr']:.4f} dB  ssim {m['ssim']:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikingblur",
        description="Simulate, fit and render piecewise-linear deblurring fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def frame_fmt(p):
        p.add_argument("--format", choices=("sfrm", "pgm"), default="sfrm",
                       help="frame file format for output directories")

    p = sub.add_parser("simulate", help="synthesize events, blur and ground truth")
    p.add_argument("--config")
    p.add_argument("--out-events", required=True)
    p.add_argument("--out-blur", required=True)
    p.add_argument("--out-truth-dir")
    p.add_argument("--frames", type=int, help="ground-truth frame count (default sim.frames)")
    frame_fmt(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a field to a blurry frame plus events or targets")
    p.add_argument("--blur", required=True)
    p.add_argument("--events")
    p.add_argument("--targets-dir")
    p.add_argument("--config")
    p.add_argument("--out-field", required=True)
    p.add_argument("--report", help="loss log path (default <out-field>.loss.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render frames from a fitted field")
    p.add_argument("--field", required=True)
    p.add_argument("--blur", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fps", type=float, default=30.0)
    g.add_argument("--timestamps", help="comma-separated seconds in [-T/2, T/2]")
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--out-dir", required=True)
    frame_fmt(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("edi", help="event double-integral baseline")
    p.add_argument("--blur", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--threshold", type=float, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fps", type=float, default=30.0)
    g.add_argument("--timestamps")
    p.add_argument("--out-dir", required=True)
    frame_fmt(p)
    p.set_defaults(func=cmd_edi)

    p = sub.add_parser("eval", help="per-frame MSE/PSNR/SSIM table")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
