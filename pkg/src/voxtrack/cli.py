"""Command-line interface.

Subcommands: run (process a configured sequence), simulate (render a scene
script to depth frames + ground truth), eval (Acc/RAcc of label files),
bench (per-stage timing and backend comparison). Exit codes: 0 success,
2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .geometry import load_calibration
from .pipeline import (RunConfig, bench_run, evaluate, load_labels, run,
                       write_depth_frame)
from .simulator import load_scene, render_depth


def _cmd_run(args) -> int:
    config = RunConfig.from_file(args.config)
    frames = 0
    tracks = 0
    for record in run(config):
        frames += 1
        tracks = max(tracks, len(record.tracks))
    print(f"processed {frames} frames ({tracks} peak trajectories)"
          + (f", records in {config.output_dir}" if config.output_dir else ""))
    return 0


def _cmd_simulate(args) -> int:
    script = load_scene(args.scene)
    cameras = load_calibration(args.calib)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = min(args.frames or script.num_frames, script.num_frames)
    rays = [cam.ray_directions() for cam in cameras]
    with open(out / "truth.jsonl", "w") as truth:
        for f in range(frames):
            prims = script.scene_at(f)
            for j, cam in enumerate(cameras):
                rng = np.random.default_rng((args.seed, f, j))
                depth = render_depth(prims, cam, rays=rays[j],
                                     noise_sigma=args.noise_sigma, rng=rng)
                write_depth_frame(out, j, f, depth)
            entry = {"frame": f, "persons": [
                {"id": p.person_id, "pose": list(p.pose_at(f)),
                 "action": p.action_at(f)} for p in script.persons]}
            truth.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"wrote {frames} frames x {len(cameras)} cameras to {out}")
    return 0


def _cmd_eval(args) -> int:
    acc, racc = evaluate(load_labels(args.pred), load_labels(args.truth))
    print(f"Acc  {acc:6.2f}%")
    print(f"RAcc {racc:6.2f}%")
    return 0


def _cmd_bench(args) -> int:
    config = RunConfig.from_file(args.config)
    if args.workers is not None:
        config.workers = args.workers
    report = bench_run(config, args.frames)
    print(f"grid {report['grid_dims']}  frames {report['frames']}  "
          f"workers {report['workers']}  backend {report['active_backend']}")
    print(f"projection tables: {report['table_build_ms']:.0f} ms (one-time)")
    for stage, ms in report["stage_ms_per_frame"].items():
        print(f"  {stage:<12} {ms:8.2f} ms/frame")
    print(f"pipeline: {report['pipeline_ms_per_frame']:.2f} ms/frame "
          f"({report['fps']:.1f} fps)")
    for name, stats in report["carve_backends"].items():
        print(f"carve[{name}]: {stats['carve_ms_per_frame']:.2f} ms/frame")
    print("backends agree" if report["backends_match"] else "BACKEND MISMATCH")
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.json", "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxtrack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a configured sequence")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("simulate", help="render a scene script to depth frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("eval", help="Acc/RAcc of prediction vs truth label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="per-stage timing and backend comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
