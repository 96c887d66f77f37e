"""microsim: a deterministic, headless planar mobile-robot simulator.

Parse a world, load it, and step it in lockstep virtual time::

    from microsim import load_text, run

    sim = load_text(open("worlds/corridor.mwt").read(), seed=7)
    run(sim, "fast", until_ms=1024)

Remote control and the browser viewer speak the NDJSON/WebSocket protocol
served by ``microsim.wire``; the ``simrun`` entry point wraps all of it.
"""

from .devices import DeviceTag, LookupTable, Message
from .engine import (
    ControllerError,
    PermissionDenied,
    RunControl,
    Simulation,
    SimulationError,
    Trajectory,
    UnknownNode,
    WorldLoadError,
    load,
    load_text,
    reset,
    run,
    tick,
)
from .physics2d import (
    Body,
    Circle,
    DriveState,
    RayHit,
    Rect,
    Segment,
    ServoJoint,
    integrate_drive,
    ray_cast,
    resolve_contacts,
    step_servo,
)
from .scene import (
    Diagnostic,
    Node,
    ParseError,
    SceneTree,
    flatten_poses,
    parse_world,
    serialize_world,
    structurally_equal,
    validate,
)

__version__ = "0.1.0"
