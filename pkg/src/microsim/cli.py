"""``simrun``: load a world, run it, optionally serving the wire protocol,
recording trajectories, and dumping top-down raster frames.

Exit codes: 0 clean completion, 1 world/validation problems, 2 runtime
errors. The random seed is taken from, in order: ``--seed``, an explicit
``randomSeed`` in the world file, the ``MICROSIM_SEED`` environment
variable, and finally 0.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import engine, scene, wire
from .physics2d import Circle, Rect

DEFAULT_SCALE = 100.0  # px per meter
_MARGIN = 0.10


def write_trajectory(trajectories, path) -> None:
    """CSV dump: header ``t_ms,node,x,y,theta``, one row per sample, floats
    with 9 significant digits, LF line endings."""
    if isinstance(trajectories, engine.Trajectory):
        trajectories = [trajectories]
    rows = []
    for order, trajectory in enumerate(trajectories):
        for t_ms, x, y, theta in trajectory.samples:
            rows.append((t_ms, order, trajectory.name, x, y, theta))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        fh.write("t_ms,node,x,y,theta\n")
        for t_ms, _order, name, x, y, theta in rows:
            fh.write(f"{t_ms},{name},{x:.9g},{y:.9g},{theta:.9g}\n")


def world_bounds(sim) -> tuple[float, float, float, float]:
    """Axis-aligned extent of all bodies plus a 10% margin."""
    lo_x = lo_y = math.inf
    hi_x = hi_y = -math.inf
    for body in sim.bodies:
        x, y, _theta = body.pose
        shape = body.shape
        if isinstance(shape, Circle):
            extent = shape.radius
        elif isinstance(shape, Rect):
            extent = math.hypot(shape.width, shape.height) / 2.0
        else:
            extent = max(math.hypot(*shape.a), math.hypot(*shape.b))
        lo_x = min(lo_x, x - extent)
        hi_x = max(hi_x, x + extent)
        lo_y = min(lo_y, y - extent)
        hi_y = max(hi_y, y + extent)
    if not sim.bodies:
        lo_x, lo_y, hi_x, hi_y = -1.0, -1.0, 1.0, 1.0
    margin = _MARGIN * max(hi_x - lo_x, hi_y - lo_y, 0.2)
    return (lo_x - margin, lo_y - margin, hi_x + margin, hi_y + margin)


def render_frame(sim, bounds=None, scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Top-down orthographic raster (uint8 grayscale) of all bodies."""
    if bounds is None:
        bounds = world_bounds(sim)
    lo_x, lo_y, hi_x, hi_y = bounds
    width = max(int(math.ceil((hi_x - lo_x) * scale)), 1)
    height = max(int(math.ceil((hi_y - lo_y) * scale)), 1)
    image = np.full((height, width), 255, dtype=np.uint8)
    xs = lo_x + (np.arange(width) + 0.5) / scale
    ys = hi_y - (np.arange(height) + 0.5) / scale  # row 0 at the top
    gx, gy = np.meshgrid(xs, ys)
    for body in sim.bodies:
        x, y, theta = body.pose
        gray = np.uint8(round(sim.body_color(body) * 255))
        shape = body.shape
        if isinstance(shape, Circle):
            mask = (gx - x) ** 2 + (gy - y) ** 2 <= shape.radius ** 2
        elif isinstance(shape, Rect):
            c, s = math.cos(theta), math.sin(theta)
            lx = c * (gx - x) + s * (gy - y)
            ly = -s * (gx - x) + c * (gy - y)
            mask = (np.abs(lx) <= shape.width / 2) & (np.abs(ly) <= shape.height / 2)
        else:
            c, s = math.cos(theta), math.sin(theta)
            ax = x + c * shape.a[0] - s * shape.a[1]
            ay = y + s * shape.a[0] + c * shape.a[1]
            bx = x + c * shape.b[0] - s * shape.b[1]
            by = y + s * shape.b[0] + c * shape.b[1]
            ex, ey = bx - ax, by - ay
            denom = max(ex * ex + ey * ey, 1e-30)
            t = np.clip(((gx - ax) * ex + (gy - ay) * ey) / denom, 0.0, 1.0)
            dist2 = (gx - (ax + t * ex)) ** 2 + (gy - (ay + t * ey)) ** 2
            mask = dist2 <= (0.75 / scale) ** 2
        image[mask] = gray
    return image


def dump_frame(sim, path, bounds=None, scale: float = DEFAULT_SCALE) -> None:
    """Write one binary PPM (P6); identical worlds produce identical bytes."""
    image = render_frame(sim, bounds, scale)
    height, width = image.shape
    rgb = np.repeat(image[:, :, np.newaxis], 3, axis=2)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode())
        fh.write(rgb.tobytes())


def _resolve_seed(args_seed, tree) -> int:
    if args_seed is not None:
        return args_seed
    info = next((n for n in scene.iter_nodes(tree) if n.node_type == "WorldInfo"), None)
    if info is not None and "randomSeed" in info.fields:
        return info.get("randomSeed")
    env = os.environ.get("MICROSIM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            pass
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simrun",
        description="Run a world file headless, optionally serving remote control.")
    parser.add_argument("world", help="path to a .mwt world file")
    parser.add_argument("--mode", choices=("realtime", "fast", "step"), default="fast")
    parser.add_argument("--duration", type=int, metavar="MS",
                        help="stop after this much virtual time")
    parser.add_argument("--listen", metavar="HOST:PORT",
                        help="serve the wire protocol (NDJSON + WebSocket /ws)")
    parser.add_argument("--seed", type=int, help="override the random seed")
    parser.add_argument("--record", metavar="FILE.csv",
                        help="record all robot trajectories to CSV")
    parser.add_argument("--frames", metavar="DIR",
                        help="dump PPM frames into this directory")
    parser.add_argument("--every", type=int, metavar="MS",
                        help="virtual time between frames (with --frames)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    world_path = Path(args.world)
    try:
        text = world_path.read_text()
    except OSError as err:
        print(f"simrun: cannot read world {world_path}: {err}", file=sys.stderr)
        return 1
    try:
        tree = scene.parse_world(text)
        sim = engine.load(tree, seed=_resolve_seed(args.seed, tree))
    except (scene.ParseError, engine.WorldLoadError) as err:
        print(f"simrun: {world_path}: {err}", file=sys.stderr)
        return 1

    step = sim.clock.basic_step_ms
    if args.duration is not None and (args.duration <= 0 or args.duration % step):
        print(f"simrun: --duration must be a positive multiple of {step} ms",
              file=sys.stderr)
        return 1
    if (args.frames is None) != (args.every is None):
        print("simrun: --frames and --every go together", file=sys.stderr)
        return 1
    if args.every is not None and (args.every <= 0 or args.every % step):
        print(f"simrun: --every must be a positive multiple of {step} ms",
              file=sys.stderr)
        return 1

    trajectories = []
    if args.record:
        for robot in sim.robots:
            trajectories.append(sim.supervisor_track(robot.node))

    if args.frames:
        frames_dir = Path(args.frames)
        frames_dir.mkdir(parents=True, exist_ok=True)
        bounds = world_bounds(sim)
        every_ticks = args.every // step

        def frame_hook(s, _dir=frames_dir, _bounds=bounds, _n=every_ticks):
            if s.tick_index % _n == 0:
                dump_frame(s, _dir / f"frame_{s.tick_index:08d}.ppm", _bounds)

        dump_frame(sim, frames_dir / "frame_00000000.ppm", bounds)
        sim.on_tick.append(frame_hook)

    server = None
    control = engine.RunControl(paused=(args.mode == "step"))
    try:
        if args.listen:
            server = wire.serve(sim, args.listen)
        engine.run(sim, args.mode, until_ms=args.duration, control=control)
    except KeyboardInterrupt:
        pass
    except Exception as err:
        print(f"simrun: runtime error: {err}", file=sys.stderr)
        return 2
    finally:
        if server is not None:
            server.close()
    if args.record:
        try:
            write_trajectory(trajectories, args.record)
        except OSError as err:
            print(f"simrun: cannot write {args.record}: {err}", file=sys.stderr)
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
