"""Command-line entry point: ``simulate``, ``render`` and ``info``.

Exit codes: 0 success, 2 invalid input or config, 3 simulation failure.
Diagnostics go to stderr; progress and timing go to stdout.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, SimulationConfig, load_config
from .continuum import init_particles
from .errors import GsplatMPMError, PlyError, SequenceError, SimulationError, ValidationError
from .four_d import Frame, build_manifest, snapshot, write_frame, write_manifest
from .mpm import Simulator
from .splat_io import load_ply

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SIMULATION = 3


def configure_threads() -> None:
    """Apply ``GSPLATMPM_THREADS`` (0 or unset = numba default)."""
    raw = os.environ.get("GSPLATMPM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        return
    if n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def run_simulation(cfg: SimulationConfig, out=None, frames_out: list | None = None) -> int:
    """Body of ``simulate``; ``frames_out``, if given, also receives the in-memory frames."""
    out = sys.stdout if out is None else out
    t_setup = time.perf_counter()
    cloud = load_ply(cfg.input_ply)
    grid_cfg = cfg.grid.build()
    system = init_particles(cloud, cfg.material.build(), grid_cfg.spacing, cfg.margin)
    sim = Simulator(system, grid_cfg, cfg.gravity, cfg.dt_max, cfg.frame_dt, cfg.schedule(), cfg.deterministic)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    fingerprint = cfg.fingerprint()
    setup_s = time.perf_counter() - t_setup
    print(f"setup: {setup_s:.2f} s ({cloud.count} kernels, grid {grid_cfg.resolution}^3, "
          f"{sim.substeps} substeps/frame, dt={sim.params.dt:.3e} s)", file=out)

    written: list[Frame] = [] if frames_out is None else frames_out
    t_dyn = time.perf_counter()
    last = [t_dyn]

    def on_frame(k, sys_):
        frame = snapshot(sys_, cloud, k)
        write_frame(frame, outdir)
        written.append(frame)
        now = time.perf_counter()
        print(f"frame {k:04d} t={frame.time:.6f} s  {now - last[0]:.2f} s", file=out)
        last[0] = now

    status = EXIT_OK
    try:
        sim.run(cfg.frames, on_frame)
    except SimulationError as exc:
        _err(f"simulation failed: {exc}")
        _err(f"kept {len(written)} completed frame(s) in {outdir}")
        status = EXIT_SIMULATION
    dyn_s = time.perf_counter() - t_dyn
    if written:
        write_manifest(build_manifest(written, cfg.frame_dt, fingerprint), outdir)
    print(f"4D dynamics generation: {dyn_s:.2f} s ({len(written)} frames, {sim.steps_done} substeps); "
          f"total {setup_s + dyn_s:.2f} s", file=out)
    return status


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _err(f"invalid config:\n{exc}")
        return EXIT_INPUT
    try:
        return run_simulation(cfg)
    except (PlyError, ValidationError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT


def _vec3(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers in {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("image size must be positive")
    return w, h


def cmd_render(args) -> int:
    from .four_d import import_sequence
    from .render import Camera, default_camera, render_frames

    try:
        frames = import_sequence(args.directory)
    except (SequenceError, PlyError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    width, height = args.size
    try:
        cam = default_camera(frames[0].kernels, width, height, args.fov)
        if args.camera_pos or args.look_at:
            cam = Camera(position=args.camera_pos or cam.position, look_at=args.look_at or cam.look_at,
                         up=cam.up, vertical_fov=math.radians(args.fov), width=width, height=height)
    except ValidationError as exc:
        _err(f"invalid camera: {exc}")
        return EXIT_INPUT
    paths = render_frames(frames, cam, args.out or args.directory, args.turntable)
    print(f"rendered {len(paths)} frame(s) to {Path(args.out or args.directory)}")
    return EXIT_OK


def cmd_info(args) -> int:
    try:
        cloud = load_ply(args.ply)
    except (PlyError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    print(f"kernels: {cloud.count}")
    if cloud.count:
        fmt = lambda a: "(" + ", ".join(f"{v:.6g}" for v in a) + ")"  # noqa: E731
        print(f"bbox min: {fmt(cloud.positions.min(axis=0))}")
        print(f"bbox max: {fmt(cloud.positions.max(axis=0))}")
        op, sc = cloud.opacities, cloud.scales
        print(f"opacity: min {op.min():.6g} mean {op.mean():.6g} max {op.max():.6g}")
        print(f"scale: min {sc.min():.6g} mean {sc.mean():.6g} max {sc.max():.6g} "
              f"median {np.median(sc):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsplatmpm", description="MPM dynamics for 3D Gaussian splats")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a cloud from a JSON config and export frames")
    p.add_argument("config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render an exported sequence to PNGs")
    p.add_argument("directory")
    p.add_argument("--camera-pos", type=_vec3)
    p.add_argument("--look-at", type=_vec3)
    p.add_argument("--fov", type=float, default=60.0, help="vertical field of view in degrees")
    p.add_argument("--size", type=_size, default=(512, 512), help="WxH")
    p.add_argument("--turntable", type=float, default=None, help="azimuth step in degrees per frame")
    p.add_argument("--out", default=None, help="output directory (default: the sequence directory)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("info", help="summarize a 3DGS PLY file")
    p.add_argument("ply")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    configure_threads()
    try:
        return args.func(args)
    except GsplatMPMError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
