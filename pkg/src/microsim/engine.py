"""Lockstep simulation engine: integer-millisecond virtual time, cooperative
controller scheduling, the supervisor surface, and world loading.

One tick runs these phases in order:

1. latch actuator commands staged before this tick (they drive this tick's
   physics; commands issued *during* tick k first act on tick k+1),
2. drain externally queued commands (supervisor moves, spawns, sends),
3. resume every runnable controller in scene order until it blocks in
   ``step``; sensor reads see the world as left by the previous tick,
4. physics: drive integration, servo joints, contact resolution,
5. deliver messages sent during this tick into receiver queues (so a send
   at tick k is pollable at tick k+1, exactly one tick of latency),
6. advance the clock and append trajectory samples,
7. notify per-tick hooks (state broadcasts).

Only the engine thread mutates simulation state; other threads talk to it
through ``Simulation.post`` or the supervisor methods, which queue.
"""

from __future__ import annotations

import hashlib
import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

from . import devices as dev
from . import physics2d as phys
from . import scene

log = logging.getLogger("microsim")

DEFAULT_STEP_BUDGET_S = 5.0
_ENCODER_RESOLUTION_FIELD = "encoderResolution"


class SimulationError(Exception):
    pass


class WorldLoadError(SimulationError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics) or "world load failed")


class ControllerError(SimulationError):
    pass


class PermissionDenied(SimulationError):
    pass


class UnknownNode(SimulationError):
    pass


@dataclass
class SimClock:
    basic_step_ms: int = 32
    now_ms: int = 0
    mode: str = "fast"  # realtime | fast | step


@dataclass
class Trajectory:
    node: scene.Node
    name: str
    samples: list[tuple[int, float, float, float]] = field(default_factory=list)


@dataclass
class DeviceRuntime:
    kind: str
    name: str
    index: int
    node: scene.Node | None
    chain: tuple[scene.Node, ...] = ()
    # per-kind state
    table: dev.LookupTable | None = None
    joint: phys.ServoJoint | None = None
    staged_servo: tuple[str, float] | None = None
    led_state: int = 0
    staged_led: int | None = None
    queue: list[dev.Message] = field(default_factory=list)
    encoder_side: str = ""
    encoder_offset: float = 0.0
    cache_tick: int = -1
    cache_value: object = None


class _ControllerTask:
    """A controller thread driven baton-style: the engine and the controller
    never run at the same time, which keeps scheduling deterministic."""

    def __init__(self, fn, ctx, budget_s: float):
        self.fn = fn
        self.ctx = ctx
        self.budget_s = budget_s
        self.state = "new"  # new | running | yielded | done | failed
        self.error: BaseException | None = None
        self._to_task = threading.Semaphore(0)
        self._to_engine = threading.Semaphore(0)
        self._thread = threading.Thread(
            target=self._run, daemon=True, name=f"controller:{ctx.robot_name}")

    def _run(self):
        self._to_task.acquire()
        try:
            self.fn(self.ctx)
            self.state = "done"
        except BaseException as exc:  # controller bugs must not kill the engine
            self.state = "failed"
            self.error = exc
        self._to_engine.release()

    def resume(self) -> str:
        """Run the controller until it blocks again. Returns the new state
        ("yielded", "done", "failed", or "hung")."""
        if self.state == "new":
            self.state = "running"
            self._thread.start()
        elif self.state == "yielded":
            self.state = "running"
        else:
            return self.state
        self._to_task.release()
        if not self._to_engine.acquire(timeout=self.budget_s):
            return "hung"
        return self.state

    def yield_to_engine(self):
        """Called from the controller thread inside step()."""
        self.state = "yielded"
        self._to_engine.release()
        self._to_task.acquire()


class ControllerContext:
    """Per-robot controller API: device lookup, reads, commands, stepping."""

    def __init__(self, sim: "Simulation", robot: "RobotRuntime"):
        self._sim = sim
        self._robot = robot
        self.blocked_until_ms = 0
        self._live_called = False
        self._reset_cb = None

    @property
    def robot_name(self) -> str:
        return self._robot.name

    # -- lifecycle ---------------------------------------------------------

    def live(self, reset_callback) -> None:
        """Register the reset callback and run it once; required before step."""
        if self._live_called:
            raise ControllerError("robot_live called twice")
        self._live_called = True
        self._reset_cb = reset_callback
        reset_callback()

    def step(self, ms: int) -> None:
        """Block for exactly ms of virtual time (a multiple of the basic step)."""
        step_ms = self._sim.clock.basic_step_ms
        if not isinstance(ms, int) or ms <= 0 or ms % step_ms != 0:
            raise ControllerError(
                f"step({ms!r}) must be a positive multiple of the {step_ms} ms basic step")
        if not self._live_called:
            raise ControllerError("step before live")
        self.blocked_until_ms = self._sim.clock.now_ms + ms
        self._robot.task.yield_to_engine()

    # -- devices -----------------------------------------------------------

    def get_device(self, name: str) -> dev.DeviceTag:
        device = self._robot.devices_by_name.get(name)
        if device is None:
            raise dev.UnknownDevice(f"robot {self._robot.name!r} has no device {name!r}")
        return dev.DeviceTag(self._robot.index, device.index, device.name, device.kind)

    def _resolve(self, tag: dev.DeviceTag, kind: str) -> DeviceRuntime:
        if tag.robot_index != self._robot.index:
            raise dev.UnknownDevice("tag belongs to another robot")
        return self._sim._resolve_device(tag, kind)

    def distance_sensor_value(self, tag) -> float:
        return self._sim._read_distance(self._robot, self._resolve(tag, "DistanceSensor"))

    def light_sensor_value(self, tag) -> float:
        return self._sim._read_light(self._robot, self._resolve(tag, "LightSensor"))

    def touch_sensor_value(self, tag) -> int:
        return self._sim._read_touch(self._robot, self._resolve(tag, "TouchSensor"))

    def gps_position(self, tag) -> tuple[float, float]:
        device = self._resolve(tag, "GPS")
        x, y, _ = self._sim.device_world_pose(self._robot, device)
        return (x, y)

    def compass_north(self, tag) -> tuple[float, float]:
        device = self._resolve(tag, "Compass")
        return dev.compass_north(self._sim.device_world_pose(self._robot, device)[2])

    def camera_image(self, tag) -> list[float]:
        return self._sim._read_camera(self._robot, self._resolve(tag, "Camera1D"))

    def encoder_counts(self, tag) -> float:
        return self._sim._read_encoder(self._robot, self._resolve(tag, "Encoder"))

    def encoder_reset(self, tag) -> None:
        device = self._resolve(tag, "Encoder")
        drive = self._robot.drive
        device.encoder_offset = (drive.accumulated_wheel_angle_left
                                 if device.encoder_side == "left"
                                 else drive.accumulated_wheel_angle_right)

    def emitter_send(self, tag, payload: bytes) -> None:
        self._sim._emitter_send(self._robot, self._resolve(tag, "Emitter"), payload)

    def receiver_poll(self, tag) -> list[dev.Message]:
        device = self._resolve(tag, "Receiver")
        messages, device.queue = device.queue, []
        return messages

    def set_wheel_speeds(self, left: float, right: float) -> None:
        if self._robot.drive is None:
            raise dev.WrongDeviceKind("DifferentialWheels", dev.DeviceTag(
                self._robot.index, -1, self._robot.name, self._robot.node.node_type))
        self._robot.staged_speeds = (float(left), float(right))

    def servo_command(self, tag, mode: str, target: float) -> None:
        device = self._resolve(tag, "Servo")
        if mode not in ("position", "velocity", "torque"):
            raise ControllerError(f"unknown servo mode {mode!r}")
        target = float(target)
        if mode == "position":
            target = min(max(target, device.joint.min_position), device.joint.max_position)
        device.staged_servo = (mode, target)

    def servo_position(self, tag) -> float:
        return self._resolve(tag, "Servo").joint.angle

    def led_set(self, tag, state: int) -> None:
        self._resolve(tag, "LED").staged_led = int(state)

    def led_state(self, tag) -> int:
        return self._resolve(tag, "LED").led_state

    # -- supervisor surface (requires the robot's supervisor flag) ----------

    @property
    def basic_step_ms(self) -> int:
        return self._sim.clock.basic_step_ms

    @property
    def time_ms(self) -> int:
        """Virtual time at which this controller is currently running."""
        return self._sim.clock.now_ms

    def _require_supervisor(self):
        node = self._robot.node
        if not (node.node_type == "Robot" and node.get("supervisor")):
            raise PermissionDenied(f"robot {self._robot.name!r} is not a supervisor")

    def supervisor_set_pose(self, node_name: str, x: float, y: float, theta: float):
        self._require_supervisor()
        self._sim.supervisor_set_pose(node_name, x, y, theta)

    def supervisor_get_pose(self, node_name: str):
        self._require_supervisor()
        return self._sim.supervisor_get_pose(node_name)

    def supervisor_send(self, channel: int, payload: bytes):
        self._require_supervisor()
        self._sim.supervisor_send(channel, payload)

    def supervisor_spawn(self, fragment: str):
        self._require_supervisor()
        return self._sim.supervisor_spawn(fragment)

    def supervisor_remove(self, node_or_name):
        self._require_supervisor()
        self._sim.supervisor_remove(node_or_name)

    def supervisor_track(self, node_or_name):
        self._require_supervisor()
        return self._sim.supervisor_track(node_or_name)


@dataclass
class RobotRuntime:
    node: scene.Node
    name: str
    index: int  # scene order among robots
    body: phys.Body
    controller_name: str
    devices: list[DeviceRuntime] = field(default_factory=list)
    devices_by_name: dict[str, DeviceRuntime] = field(default_factory=dict)
    servo_by_node: dict[scene.Node, DeviceRuntime] = field(default_factory=dict)
    drive: phys.DriveState | None = None
    staged_speeds: tuple[float, float] | None = None
    ctx: ControllerContext | None = None
    task: _ControllerTask | None = None
    remote_session: object | None = None  # wire-attached controller

    @property
    def servos(self):
        return [d for d in self.devices if d.kind == "Servo"]


class RunControl:
    """Pause/resume/single-step gate shared between the run loop and the
    wire server."""

    def __init__(self, paused: bool = False):
        self._cond = threading.Condition()
        self._paused = paused
        self._steps = 0
        self._stopped = False

    @property
    def paused(self) -> bool:
        return self._paused

    @property
    def stopped(self) -> bool:
        return self._stopped

    def pause(self):
        with self._cond:
            self._paused = True
            self._cond.notify_all()

    def resume(self):
        with self._cond:
            self._paused = False
            self._cond.notify_all()

    def step_once(self, count: int = 1):
        with self._cond:
            self._steps += count
            self._cond.notify_all()

    def stop(self):
        with self._cond:
            self._stopped = True
            self._cond.notify_all()

    def next_action(self, timeout: float | None = None) -> str:
        """Block while paused with nothing to do; returns 'tick', 'step',
        'stop', or 'idle' (timeout)."""
        with self._cond:
            if self._stopped:
                return "stop"
            if not self._paused:
                return "tick"
            if self._steps == 0:
                self._cond.wait(timeout)
            if self._stopped:
                return "stop"
            if self._steps > 0:
                self._steps -= 1
                return "step"
            return "tick" if not self._paused else "idle"


class Simulation:
    """A loaded world plus its virtual clock, robots, and command queue."""

    def __init__(self, tree: scene.SceneTree, seed: int = 0, controllers=None,
                 step_budget_s: float = DEFAULT_STEP_BUDGET_S):
        diagnostics = scene.validate(tree)
        if diagnostics:
            raise WorldLoadError(diagnostics)
        self.tree = tree
        self.seed = int(seed)
        self.controllers = dict(controllers or {})
        self.step_budget_s = step_budget_s

        info = next(n for n in scene.iter_nodes(tree) if n.node_type == "WorldInfo")
        self.clock = SimClock(basic_step_ms=info.get("basicTimeStep"))
        self.tick_index = 0

        self.bodies: list[phys.Body] = []
        self.body_nodes: dict[int, scene.Node] = {}  # id(body) -> node
        self.node_bodies: dict[scene.Node, phys.Body] = {}
        self.node_names: dict[scene.Node, str] = {}
        self.nodes_by_name: dict[str, scene.Node] = {}
        self.robots: list[RobotRuntime] = []  # scene order
        self.robot_by_index: dict[int, RobotRuntime] = {}  # index is lifetime-stable
        self._robot_seq = 0
        self.lights: list[tuple[tuple[float, float], float]] = []
        self._name_counters: dict[str, int] = {}

        self._queue: deque = deque()
        self._pending_sends: list[tuple[dev.Message, dict]] = []
        self._send_seq = 0
        self.last_contacts: list[phys.Contact] = []
        self.trajectories: list[Trajectory] = []
        self.errors: list[tuple[str, str]] = []  # (robot name, message)
        self.on_tick: list = []  # callables(sim)
        self.on_pause: list = []  # callables(sim), fired when the run loop parks
        self.on_reset: list = []
        self.on_node_removed: list = []  # callables(sim, node, name)
        self.run_control: RunControl | None = None

        self._build_world()
        self._snapshot = self._capture_state()

    # ------------------------------------------------------------------
    # World construction

    def _assign_name(self, node: scene.Node) -> str:
        if node.def_name:
            name = node.def_name
        else:
            k = self._name_counters.get(node.node_type, 0)
            self._name_counters[node.node_type] = k + 1
            name = f"{node.node_type}#{k}"
        self.node_names[node] = name
        self.nodes_by_name[name] = node
        return name

    def _build_world(self):
        poses = scene.flatten_poses(self.tree)
        for node in self._iter_entity_nodes(self.tree.root_nodes):
            self._attach_node(node, poses[node])
        for node, pose in poses.items():
            if node.node_type == "PointLight":
                self.lights.append(((pose[0], pose[1]), node.get("intensity")))

    def _iter_entity_nodes(self, nodes):
        """Solid-like nodes that own a body, found through Transform wrappers."""
        for node in nodes:
            if node.node_type in scene.SOLID_TYPES:
                yield node
            elif node.node_type == "Transform" and node.use_ref is None:
                yield from self._iter_entity_nodes(node.children)

    def _shape_for(self, node: scene.Node) -> phys.Shape | None:
        bounding = node.fields.get("boundingObject")
        if bounding is not None:
            if bounding.node_type == "Box":
                w, h = bounding.get("size")
                return phys.Rect(w, h)
            if bounding.node_type == "Cylinder":
                return phys.Circle(bounding.get("radius"))
            raise WorldLoadError([scene.Diagnostic(
                f"boundingObject must be Box or Cylinder, not {bounding.node_type}",
                bounding.line, bounding.col)])
        if node.node_type == "DifferentialWheels":
            return phys.Circle(node.get("axleLength") / 2.0)
        if node.node_type == "Robot":
            return phys.Circle(0.1)
        return None  # plain Solid without a bounding object: no collision body

    def _body_for(self, node: scene.Node, pose) -> phys.Body | None:
        shape = self._shape_for(node)
        if shape is None:
            return None
        physics_node = node.fields.get("physics")
        is_robot = node.node_type in scene.ROBOT_TYPES
        if physics_node is None and not is_robot:
            return phys.Body(pose=pose, shape=shape)  # static obstacle
        get = physics_node.get if physics_node is not None else (
            lambda f: scene.DEFAULTS["Physics"][f])
        mass = get("mass")
        inertia = get("inertia")
        if inertia <= 0.0:
            if isinstance(shape, phys.Circle):
                inertia = mass * shape.radius ** 2 / 2.0
            elif isinstance(shape, phys.Rect):
                inertia = mass * (shape.width ** 2 + shape.height ** 2) / 12.0
            else:
                inertia = mass
        return phys.Body(
            pose=pose, mass=mass, inertia=inertia, shape=shape,
            static_friction=get("staticFriction"),
            kinetic_friction=get("kineticFriction"),
            bounce=get("bounce"))

    def _attach_node(self, node: scene.Node, pose):
        name = self._assign_name(node)
        body = self._body_for(node, pose)
        if body is not None:
            self.bodies.append(body)
            self.body_nodes[id(body)] = node
            self.node_bodies[node] = body
        if node.node_type in scene.ROBOT_TYPES:
            if body is None:
                raise WorldLoadError([scene.Diagnostic(
                    f"robot {name} has no collision shape", node.line, node.col)])
            self._attach_robot(node, name, body)

    def _attach_robot(self, node: scene.Node, name: str, body: phys.Body):
        robot = RobotRuntime(node=node, name=name, index=self._robot_seq,
                             body=body, controller_name=node.get("controller"))
        self._robot_seq += 1
        if node.node_type == "DifferentialWheels":
            robot.drive = phys.DriveState(
                wheel_radius=node.get("wheelRadius"),
                axle_length=node.get("axleLength"),
                max_speed=node.get("maxSpeed"))
        self._discover_devices(robot, node.children, ())
        if robot.drive is not None:
            for side in ("left", "right"):
                device = DeviceRuntime(kind="Encoder", name=f"{side}_encoder",
                                       index=len(robot.devices), node=None,
                                       encoder_side=side)
                robot.devices.append(device)
                robot.devices_by_name[device.name] = device
        robot.ctx = ControllerContext(self, robot)
        self.robots.append(robot)
        self.robot_by_index[robot.index] = robot
        self._spawn_controller_task(robot)

    def _discover_devices(self, robot: RobotRuntime, nodes, chain):
        for node in nodes:
            if node.node_type in scene.DEVICE_TYPES:
                device = DeviceRuntime(
                    kind=node.node_type,
                    name=node.get("name") or node.node_type.lower(),
                    index=len(robot.devices), node=node, chain=chain + (node,))
                if node.node_type in ("DistanceSensor", "LightSensor"):
                    device.table = dev.LookupTable.from_flat(node.get("lookupTable"))
                elif node.node_type == "Servo":
                    device.joint = phys.ServoJoint(
                        min_position=node.get("minPosition"),
                        max_position=node.get("maxPosition"),
                        max_velocity=node.get("maxVelocity"),
                        max_torque=node.get("maxTorque"),
                        kp=node.get("kP"),
                        inertia=node.get("inertia"))
                robot.devices.append(device)
                robot.devices_by_name[device.name] = device
                if node.node_type == "Servo":
                    robot.servo_by_node[node] = device
                    self._discover_devices(robot, node.children, chain + (node,))
            elif node.node_type in ("Transform", "Solid"):
                if node.use_ref is None:
                    self._discover_devices(robot, node.children, chain + (node,))

    def _spawn_controller_task(self, robot: RobotRuntime):
        name = robot.controller_name
        if name in ("void", "extern"):
            return
        fn = self.controllers.get(name) or BUILTIN_CONTROLLERS.get(name)
        if fn is None:
            raise WorldLoadError([scene.Diagnostic(
                f"unknown controller {name!r} for robot {robot.name}",
                robot.node.line, robot.node.col)])
        robot.task = _ControllerTask(fn, robot.ctx, self.step_budget_s)

    # ------------------------------------------------------------------
    # Pose helpers

    def device_world_pose(self, robot: RobotRuntime, device: DeviceRuntime):
        pose = robot.body.pose
        for node in device.chain:
            if node.node_type == "Servo":
                ax, ay = node.get("anchor")
                joint = robot.servo_by_node[node].joint
                pose = scene.compose_pose(pose, ax, ay, joint.angle)
            else:  # Transform, Solid, or the device node itself
                tx, ty = node.get("translation")
                pose = scene.compose_pose(pose, tx, ty, node.get("rotation"))
        return pose

    def body_color(self, body: phys.Body) -> float:
        node = self.body_nodes.get(id(body))
        if node is None or "color" not in scene.NODE_CATALOG[node.node_type]:
            return 0.5
        return node.get("color")

    def find_node(self, name: str) -> scene.Node:
        node = self.nodes_by_name.get(name)
        if node is None:
            raise UnknownNode(f"no node named {name!r}")
        return node

    # ------------------------------------------------------------------
    # Device reads (engine-internal, called from step context)

    def _resolve_device(self, tag: dev.DeviceTag, kind: str) -> DeviceRuntime:
        robot = self.robot_by_index.get(tag.robot_index)
        if robot is None:
            raise dev.UnknownDevice("tag belongs to a removed robot")
        device = robot.devices[tag.device_index]
        if device.kind != kind:
            raise dev.WrongDeviceKind(kind, tag)
        return device

    def _noise(self, robot: RobotRuntime, device: DeviceRuntime) -> float:
        return dev.gaussian_noise(self.seed, self.tick_index, robot.index, device.index)

    def _read_distance(self, robot, device) -> float:
        if device.cache_tick == self.tick_index:
            return device.cache_value
        pose = self.device_world_pose(robot, device)
        node = device.node
        value, d = dev.distance_reading(
            pose, node.get("aperture"), node.get("rayCount"), device.table,
            self.bodies, ignore=(robot.body,))
        value = dev.apply_table_noise(value, d, device.table, self._noise(robot, device))
        device.cache_tick, device.cache_value = self.tick_index, value
        return value

    def _read_light(self, robot, device) -> float:
        if device.cache_tick == self.tick_index:
            return device.cache_value
        x, y, _ = self.device_world_pose(robot, device)
        e = dev.irradiance((x, y), self.lights, self.bodies, ignore=(robot.body,))
        value = device.table.interpolate(e)
        value = dev.apply_table_noise(value, e, device.table, self._noise(robot, device))
        device.cache_tick, device.cache_value = self.tick_index, value
        return value

    def _read_touch(self, robot, device) -> int:
        x, y, _ = self.device_world_pose(robot, device)
        points = [c.point for c in self.last_contacts
                  if c.body_a is robot.body or c.body_b is robot.body]
        return 1 if dev.touch_active((x, y), device.node.get("radius"), points) else 0

    def _read_camera(self, robot, device) -> list[float]:
        if device.cache_tick == self.tick_index:
            return device.cache_value
        pose = self.device_world_pose(robot, device)
        node = device.node
        row = dev.camera_line(pose, node.get("fieldOfView"), node.get("width"),
                              self.bodies, ignore=(robot.body,), color_of=self.body_color)
        device.cache_tick, device.cache_value = self.tick_index, row
        return row

    def _read_encoder(self, robot, device) -> float:
        drive = robot.drive
        angle = (drive.accumulated_wheel_angle_left if device.encoder_side == "left"
                 else drive.accumulated_wheel_angle_right)
        resolution = robot.node.get(_ENCODER_RESOLUTION_FIELD)
        return (angle - device.encoder_offset) * resolution

    def _emitter_send(self, robot, device, payload: bytes):
        dev.check_payload(payload)
        node = device.node
        message = dev.Message(
            channel=node.get("channel"), payload=bytes(payload),
            emitter_pose=self.device_world_pose(robot, device),
            send_tick=self.tick_index, emitter_order=robot.index)
        params = {"type": node.get("type"), "range": node.get("range"),
                  "aperture": node.get("aperture"), "sender_body": robot.body,
                  "seq": self._send_seq}
        self._send_seq += 1
        self._pending_sends.append((message, params))

    def read_device_value(self, robot: RobotRuntime, name: str):
        """Generic read used by the wire server; returns (kind, value)."""
        device = robot.devices_by_name.get(name)
        if device is None:
            raise dev.UnknownDevice(f"robot {robot.name!r} has no device {name!r}")
        tag = dev.DeviceTag(robot.index, device.index, device.name, device.kind)
        ctx = robot.ctx
        readers = {
            "DistanceSensor": ctx.distance_sensor_value,
            "LightSensor": ctx.light_sensor_value,
            "TouchSensor": ctx.touch_sensor_value,
            "GPS": ctx.gps_position,
            "Compass": ctx.compass_north,
            "Camera1D": ctx.camera_image,
            "Encoder": ctx.encoder_counts,
            "Servo": ctx.servo_position,
            "LED": ctx.led_state,
            "Receiver": ctx.receiver_poll,
        }
        reader = readers.get(device.kind)
        if reader is None:
            raise dev.WrongDeviceKind("readable device", tag)
        return device.kind, reader(tag)

    # ------------------------------------------------------------------
    # Supervisor surface

    def post(self, command) -> None:
        """Queue a callable to run at the next tick boundary (phase 2 drain)."""
        self._queue.append(command)

    def supervisor_set_pose(self, node_name: str, x: float, y: float, theta: float):
        node = self.find_node(node_name) if isinstance(node_name, str) else node_name
        if node not in self.node_bodies:
            raise UnknownNode(f"node {self.node_names.get(node, node_name)!r} has no pose")

        def apply():
            body = self.node_bodies.get(node)
            if body is not None:
                body.pose = (float(x), float(y), float(theta))
                body.velocity = (0.0, 0.0, 0.0)
        self.post(apply)

    def supervisor_get_pose(self, node_name: str):
        node = self.find_node(node_name) if isinstance(node_name, str) else node_name
        body = self.node_bodies.get(node)
        if body is None:
            raise UnknownNode(f"node {node_name!r} has no pose")
        return body.pose

    def supervisor_spawn(self, fragment: str) -> scene.Node:
        sub = scene.parse_world(fragment)
        if len(sub.root_nodes) != 1:
            raise scene.ParseError("spawn fragment must contain exactly one node", 1, 1)
        node = sub.root_nodes[0]
        if node.node_type not in scene.SOLID_TYPES:
            raise scene.ParseError(f"cannot spawn a {node.node_type}", node.line, node.col)
        for def_name in sub.def_table:
            if def_name in self.tree.def_table:
                raise scene.ParseError(f"DEF {def_name!r} already exists", node.line, node.col)
        if node.node_type in scene.ROBOT_TYPES:
            name = node.get("controller")
            if name not in ("void", "extern") and name not in self.controllers \
                    and name not in BUILTIN_CONTROLLERS:
                raise WorldLoadError([scene.Diagnostic(
                    f"unknown controller {name!r}", node.line, node.col)])

        def apply():
            self.tree.root_nodes.append(node)
            self.tree.def_table.update(sub.def_table)
            pose = scene.flatten_poses(sub)[node]
            self._attach_node(node, pose)
        self.post(apply)
        return node

    def supervisor_remove(self, node_or_name):
        node = (self.find_node(node_or_name) if isinstance(node_or_name, str)
                else node_or_name)
        if node not in self.node_names:
            raise UnknownNode("node is not a removable entity")

        def apply():
            self._detach_node(node)
        self.post(apply)

    def _detach_node(self, node: scene.Node):
        name = self.node_names.pop(node, None)
        self.nodes_by_name.pop(name, None)
        if node in self.tree.root_nodes:
            self.tree.root_nodes.remove(node)
        else:
            for parent in scene.iter_nodes(self.tree):
                children = parent.fields.get("children")
                if isinstance(children, list) and node in children:
                    children.remove(node)
                    break
        if node.def_name:
            self.tree.def_table.pop(node.def_name, None)
        body = self.node_bodies.pop(node, None)
        if body is not None:
            self.bodies.remove(body)
            self.body_nodes.pop(id(body), None)
        for robot in list(self.robots):
            if robot.node is node:
                self.robots.remove(robot)
                self.robot_by_index.pop(robot.index, None)
                robot.task = None
        self._pending_sends = [
            (m, p) for m, p in self._pending_sends if p.get("sender_body") is not body]
        self.trajectories = [t for t in self.trajectories if t.node is not node]
        for hook in self.on_node_removed:
            hook(self, node, name)

    def supervisor_track(self, node_or_name) -> Trajectory:
        node = (self.find_node(node_or_name) if isinstance(node_or_name, str)
                else node_or_name)
        if node not in self.node_bodies:
            raise UnknownNode("cannot track a node without a pose")
        trajectory = Trajectory(node, self.node_names[node])
        self.trajectories.append(trajectory)
        return trajectory

    def supervisor_send(self, channel: int, payload: bytes):
        dev.check_payload(payload)

        def apply():
            message = dev.Message(channel=int(channel), payload=bytes(payload),
                                  emitter_pose=(0.0, 0.0, 0.0),
                                  send_tick=self.tick_index, emitter_order=-1)
            params = {"type": "radio", "range": -1.0, "aperture": -1.0,
                      "sender_body": None, "seq": self._send_seq}
            self._send_seq += 1
            self._pending_sends.append((message, params))
        self.post(apply)

    # ------------------------------------------------------------------
    # Tick

    def tick(self):
        self._latch_commands()
        self._drain_queue()
        self._run_controllers()
        self._step_physics()
        self._deliver_messages()
        self.clock.now_ms += self.clock.basic_step_ms
        self.tick_index += 1
        self._record_trajectories()
        for robot in self.robots:
            session = robot.remote_session
            if session is not None and hasattr(session, "time_advanced"):
                session.time_advanced(self, robot)
        for hook in list(self.on_tick):
            hook(self)

    def _latch_commands(self):
        for robot in self.robots:
            if robot.staged_speeds is not None and robot.drive is not None:
                robot.drive.set_speeds(*robot.staged_speeds)
                robot.staged_speeds = None
            for device in robot.devices:
                if device.staged_servo is not None:
                    mode, target = device.staged_servo
                    device.joint = replace(device.joint, mode=mode, target=target)
                    device.staged_servo = None
                if device.staged_led is not None:
                    device.led_state = device.staged_led
                    device.staged_led = None

    def _drain_queue(self):
        while self._queue:
            command = self._queue.popleft()
            command()

    def _controller_failed(self, robot: RobotRuntime, message: str):
        self.errors.append((robot.name, message))
        log.error("controller of %s failed: %s", robot.name, message)
        self._zero_actuators(robot)

    def _zero_actuators(self, robot: RobotRuntime):
        robot.staged_speeds = None
        if robot.drive is not None:
            robot.drive.set_speeds(0.0, 0.0)
        for device in robot.devices:
            if device.kind == "Servo":
                device.staged_servo = None
                device.joint = replace(device.joint, mode="velocity", target=0.0)

    def _run_controllers(self):
        for robot in list(self.robots):
            if robot.remote_session is not None:
                if self.clock.now_ms >= robot.ctx.blocked_until_ms:
                    ms = robot.remote_session.engine_pump(self, robot)
                    if ms is None:
                        robot.remote_session = None
                        self._zero_actuators(robot)
                    else:
                        robot.ctx.blocked_until_ms = self.clock.now_ms + ms
                continue
            task = robot.task
            if task is None or self.clock.now_ms < robot.ctx.blocked_until_ms:
                continue
            state = task.resume()
            if state == "yielded":
                continue
            robot.task = None
            if state == "failed":
                self._controller_failed(robot, repr(task.error))
            elif state == "hung":
                self._controller_failed(
                    robot, f"no step call within {self.step_budget_s} s, declared hung")

    def _step_physics(self):
        dt = self.clock.basic_step_ms / 1000.0
        driven = set()
        for robot in self.robots:
            if robot.drive is not None:
                driven.add(id(robot.body))
                v, omega = phys.drive_twist(robot.drive)
                theta = robot.body.pose[2]
                robot.body.velocity = (v * math.cos(theta), v * math.sin(theta), omega)
                robot.body.pose = phys.integrate_drive(robot.body.pose, robot.drive, dt)
            for device in robot.servos:
                device.joint = phys.step_servo(device.joint, dt)
        for body in self.bodies:
            if body.is_static or id(body) in driven:
                continue
            # free dynamic bodies coast on whatever impulses gave them
            vx, vy, omega = body.velocity
            x, y, theta = body.pose
            body.pose = (x + vx * dt, y + vy * dt, theta + omega * dt)
        self.last_contacts = phys.resolve_contacts(self.bodies, dt)

    def _deliver_messages(self):
        due = [(m, p) for m, p in self._pending_sends if m.send_tick == self.tick_index]
        self._pending_sends = [
            (m, p) for m, p in self._pending_sends if m.send_tick != self.tick_index]
        due.sort(key=lambda mp: (mp[0].send_tick, mp[0].emitter_order, mp[1]["seq"]))
        for message, params in due:
            for robot in self.robots:
                for device in robot.devices:
                    if device.kind != "Receiver":
                        continue
                    if not dev.channels_match(message.channel, device.node.get("channel")):
                        continue
                    x, y, _ = self.device_world_pose(robot, device)
                    ignore = [robot.body]
                    if params["sender_body"] is not None:
                        ignore.append(params["sender_body"])
                    if dev.can_receive(message, params["type"], params["range"],
                                       params["aperture"], (x, y), self.bodies, ignore):
                        device.queue.append(message)

    def _record_trajectories(self):
        for trajectory in self.trajectories:
            body = self.node_bodies.get(trajectory.node)
            if body is not None:
                x, y, theta = body.pose
                trajectory.samples.append((self.clock.now_ms, x, y, theta))

    # ------------------------------------------------------------------
    # Reset and state digest

    def _capture_state(self):
        robots = {}
        for robot in self.robots:
            robots[robot.name] = {
                "drive": replace(robot.drive) if robot.drive else None,
                "servos": {d.name: replace(d.joint) for d in robot.servos},
                "leds": {d.name: d.led_state for d in robot.devices if d.kind == "LED"},
                "offsets": {d.name: d.encoder_offset for d in robot.devices
                            if d.kind == "Encoder"},
            }
        return {
            "root_nodes": list(self.tree.root_nodes),
            "bodies": {id(b): (b.pose, b.velocity) for b in self.bodies},
            "body_list": list(self.bodies),
            "node_bodies": dict(self.node_bodies),
            "robot_list": list(self.robots),
            "robot_seq": self._robot_seq,
            "robots": robots,
            "names": (dict(self.node_names), dict(self.nodes_by_name),
                      dict(self._name_counters)),
            "lights": list(self.lights),
        }

    def reset(self):
        """Restore the post-load world, rewind the clock, rerun reset callbacks."""
        snap = self._snapshot
        self.tree.root_nodes = list(snap["root_nodes"])
        self.tree.def_table = {n.def_name: n for n in scene.iter_nodes(self.tree)
                               if n.def_name}
        self.bodies = list(snap["body_list"])
        self.node_bodies = dict(snap["node_bodies"])
        self.body_nodes = {id(b): n for n, b in self.node_bodies.items()}
        self.robots = list(snap["robot_list"])
        self.robot_by_index = {r.index: r for r in self.robots}
        self._robot_seq = snap["robot_seq"]
        self.node_names, self.nodes_by_name, self._name_counters = (
            dict(snap["names"][0]), dict(snap["names"][1]), dict(snap["names"][2]))
        self.lights = list(snap["lights"])
        for body in self.bodies:
            body.pose, body.velocity = snap["bodies"][id(body)]
        for robot in self.robots:
            saved = snap["robots"][robot.name]
            if robot.drive is not None:
                for f in ("wheel_speed_left", "wheel_speed_right",
                          "accumulated_wheel_angle_left", "accumulated_wheel_angle_right"):
                    setattr(robot.drive, f, getattr(saved["drive"], f))
            robot.staged_speeds = None
            for device in robot.devices:
                if device.kind == "Servo":
                    device.joint = replace(saved["servos"][device.name])
                    device.staged_servo = None
                elif device.kind == "LED":
                    device.led_state = saved["leds"][device.name]
                    device.staged_led = None
                elif device.kind == "Encoder":
                    device.encoder_offset = saved["offsets"][device.name]
                elif device.kind == "Receiver":
                    device.queue = []
                device.cache_tick = -1
            robot.ctx.blocked_until_ms = 0
        self.clock.now_ms = 0
        self.tick_index = 0
        self._pending_sends = []
        self._queue.clear()
        self.last_contacts = []
        for trajectory in self.trajectories:
            trajectory.samples.clear()
        self.trajectories = [t for t in self.trajectories if t.node in self.node_bodies]
        for robot in self.robots:
            if robot.ctx._reset_cb is not None:
                robot.ctx._reset_cb()
        for hook in list(self.on_reset):
            hook(self)

    def state_digest(self) -> str:
        """SHA-256 over the exact dynamic state; equal digests mean equal worlds."""
        parts = [str(self.clock.now_ms)]
        for body in self.bodies:
            node = self.body_nodes.get(id(body))
            parts.append(self.node_names.get(node, "?"))
            parts.extend(v.hex() for v in body.pose)
            parts.extend(v.hex() for v in body.velocity)
        for robot in self.robots:
            parts.append(robot.name)
            if robot.drive is not None:
                d = robot.drive
                parts.extend(v.hex() for v in (
                    d.wheel_speed_left, d.wheel_speed_right,
                    d.accumulated_wheel_angle_left, d.accumulated_wheel_angle_right))
            for device in robot.devices:
                if device.kind == "Servo":
                    parts.extend((device.joint.angle.hex(),
                                  device.joint.angular_velocity.hex()))
                elif device.kind == "LED":
                    parts.append(str(device.led_state))
                elif device.kind == "Receiver":
                    parts.append(str(len(device.queue)))
                    parts.extend(m.payload.hex() for m in device.queue)
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Module-level API

def load(tree: scene.SceneTree, seed: int = 0, controllers=None,
         step_budget_s: float = DEFAULT_STEP_BUDGET_S) -> Simulation:
    """Build a Simulation from a validated tree; raises WorldLoadError."""
    return Simulation(tree, seed=seed, controllers=controllers,
                      step_budget_s=step_budget_s)


def load_text(text: str, seed: int = 0, controllers=None) -> Simulation:
    return load(scene.parse_world(text), seed=seed, controllers=controllers)


def tick(sim: Simulation):
    sim.tick()


def reset(sim: Simulation):
    sim.reset()


def run(sim: Simulation, mode: str = "fast", until_ms: int | None = None,
        control: RunControl | None = None):
    """Drive the tick loop: 'fast' is unpaced, 'realtime' paces virtual time
    to the wall clock, 'step' ticks only on control.step_once()."""
    if mode not in ("fast", "realtime", "step"):
        raise ValueError(f"unknown run mode {mode!r}")
    sim.clock.mode = mode
    if control is None:
        control = RunControl(paused=(mode == "step"))
    elif mode == "step":
        control.pause()
    sim.run_control = control
    step_s = sim.clock.basic_step_ms / 1000.0
    deadline = time.monotonic() + step_s
    parked = False
    try:
        while not control.stopped:
            if until_ms is not None and sim.clock.now_ms >= until_ms:
                break
            action = control.next_action(timeout=0.05)
            if action == "stop":
                break
            if action == "idle":
                if not parked:
                    parked = True  # notify once per pause transition
                    for hook in list(sim.on_pause):
                        hook(sim)
                deadline = time.monotonic() + step_s
                continue
            parked = False
            sim.tick()
            if mode == "realtime" and action == "tick":
                delay = deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                deadline += step_s
    finally:
        sim.run_control = None


# Spec-shaped controller API aliases.

def robot_live(ctx: ControllerContext, reset_callback):
    ctx.live(reset_callback)


def robot_get_device(ctx: ControllerContext, name: str) -> dev.DeviceTag:
    return ctx.get_device(name)


def robot_step(ctx: ControllerContext, ms: int):
    ctx.step(ms)


def supervisor_set_pose(sim, node, x, y, theta):
    sim.supervisor_set_pose(node, x, y, theta)


def supervisor_get_pose(sim, node):
    return sim.supervisor_get_pose(node)


def supervisor_spawn(sim, fragment):
    return sim.supervisor_spawn(fragment)


def supervisor_remove(sim, node):
    sim.supervisor_remove(node)


def supervisor_track(sim, node):
    return sim.supervisor_track(node)


def supervisor_send(sim, channel, payload):
    sim.supervisor_send(channel, payload)


# ---------------------------------------------------------------------------
# Built-in controllers usable from world files

def _avoid_obstacle(ctx: ControllerContext):
    """Drive forward, stop while the front distance sensor reads above 100."""
    tags = {}

    def on_reset():
        tags["ir"] = ctx.get_device("ir")

    ctx.live(on_reset)
    while True:
        if ctx.distance_sensor_value(tags["ir"]) > 100:
            ctx.set_wheel_speeds(0, 0)
        else:
            ctx.set_wheel_speeds(10, 10)
        ctx.step(64)


def _spin(ctx: ControllerContext):
    """Rotate in place forever; handy for demos and tests."""
    ctx.live(lambda: None)
    while True:
        ctx.set_wheel_speeds(-5, 5)
        ctx.step(ctx.basic_step_ms)


BUILTIN_CONTROLLERS = {
    "avoid_obstacle": _avoid_obstacle,
    "spin": _spin,
}
