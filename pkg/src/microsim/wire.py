"""Wire protocol server: NDJSON over TCP, with the same messages carried as
text frames over a WebSocket handshake at path ``/ws`` on the same port.

Every connection starts with ``{"op":"hello","role":...}`` and gets back
``{"op":"welcome","version":1,...}``. Requests carry an optional integer
``id`` echoed on exactly one response; state broadcasts carry none.

Role rules: a ``controller`` session claims one robot (whose world-file
controller must be ``"extern"``) and drives it in lockstep; its ``step``
request is answered only after the virtual time advances, exactly like the
in-process blocking step. A ``supervisor`` may additionally move, spawn,
remove, track, message, and pace the world. An ``observer`` may only
subscribe to state broadcasts.

Simulation state is mutated solely through the engine's command queue (or
the robot's own scheduling slot); reads are answered at tick boundaries so
wire-driven runs are digest-identical to in-process runs. Slow broadcast
consumers lose old frames, never engine time.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import queue
import socket
import struct
import threading
from collections import deque

from . import devices as dev
from . import engine as eng
from . import physics2d as phys
from . import scene

log = logging.getLogger("microsim.wire")

PROTOCOL_VERSION = 1
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_BROADCAST_BACKLOG = 8

CONTROLLER_OPS = frozenset(
    ["get_device", "set_wheel_speeds", "servo_command", "led_set",
     "emitter_send", "read", "step"])
SUPERVISOR_OPS = frozenset(
    ["set_pose", "get_pose", "spawn", "remove", "track", "send",
     "pause", "resume", "step_once", "reset", "subscribe"]) | CONTROLLER_OPS
OBSERVER_OPS = frozenset(["subscribe"])


# ---------------------------------------------------------------------------
# Transports

class _LineTransport:
    """One JSON object per LF-terminated UTF-8 line."""

    def __init__(self, sock: socket.socket, rfile=None):
        self.sock = sock
        self._rfile = rfile if rfile is not None else sock.makefile("rb")
        self._wlock = threading.Lock()

    def recv_text(self) -> str | None:
        line = self._rfile.readline()
        if not line:
            return None
        return line.decode("utf-8", errors="replace")

    def send_text(self, text: str):
        with self._wlock:
            self.sock.sendall(text.encode("utf-8") + b"\n")

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _WebSocketTransport:
    """RFC 6455 text frames, server side, no extensions."""

    def __init__(self, sock: socket.socket, rfile):
        self.sock = sock
        self._rfile = rfile
        self._wlock = threading.Lock()

    def recv_text(self) -> str | None:
        data = bytearray()
        while True:
            header = self._rfile.read(2)
            if len(header) < 2:
                return None
            fin = header[0] & 0x80
            opcode = header[0] & 0x0F
            masked = header[1] & 0x80
            length = header[1] & 0x7F
            if length == 126:
                length = struct.unpack(">H", self._rfile.read(2))[0]
            elif length == 127:
                length = struct.unpack(">Q", self._rfile.read(8))[0]
            mask = self._rfile.read(4) if masked else b"\x00" * 4
            payload = bytearray(self._rfile.read(length))
            if masked:
                for i in range(len(payload)):
                    payload[i] ^= mask[i % 4]
            if opcode == 0x8:  # close
                return None
            if opcode == 0x9:  # ping -> pong
                self._send_frame(bytes(payload), opcode=0xA)
                continue
            if opcode in (0x1, 0x0):
                data.extend(payload)
                if fin:
                    return data.decode("utf-8", errors="replace")
                continue
            # ignore binary/pong frames

    def _send_frame(self, payload: bytes, opcode: int = 0x1):
        header = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 1 << 16:
            header.append(126)
            header.extend(struct.pack(">H", n))
        else:
            header.append(127)
            header.extend(struct.pack(">Q", n))
        with self._wlock:
            self.sock.sendall(bytes(header) + payload)

    def send_text(self, text: str):
        self._send_frame(text.encode("utf-8"))

    def close(self):
        try:
            self._send_frame(b"", opcode=0x8)
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _websocket_handshake(sock: socket.socket, rfile) -> bool:
    request = bytearray()
    while not request.endswith(b"\r\n\r\n"):
        chunk = rfile.read(1)
        if not chunk:
            return False
        request.extend(chunk)
        if len(request) > 16384:
            return False
    lines = request.decode("latin-1").split("\r\n")
    path = lines[0].split(" ")[1] if len(lines[0].split(" ")) > 1 else ""
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if path != "/ws" or key is None:
        sock.sendall(b"HTTP/1.1 404 Not Found\r\nConnection: close\r\n\r\n")
        return False
    accept = base64.b64encode(
        hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
    sock.sendall(
        ("HTTP/1.1 101 Switching Protocols\r\n"
         "Upgrade: websocket\r\nConnection: Upgrade\r\n"
         f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
    return True


# ---------------------------------------------------------------------------
# Sessions

class WireError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class Session:
    def __init__(self, server: "WireServer", transport):
        self.server = server
        self.transport = transport
        self.role: str | None = None
        self.robot: eng.RobotRuntime | None = None
        self.subscribe_every = 0  # 0 = no broadcasts
        self.inbox: queue.Queue = queue.Queue()  # controller ops for engine_pump
        self.outstanding_step: int | None = None
        self.closed = False
        self._out_cond = threading.Condition()
        self._responses: deque = deque()
        self._broadcasts: deque = deque(maxlen=_BROADCAST_BACKLOG)
        self._sender = threading.Thread(target=self._send_loop, daemon=True,
                                        name="wire-send")
        self._sender.start()

    # -- outgoing ------------------------------------------------------

    def send(self, message: dict):
        """Reliable send (responses, notices); never dropped."""
        with self._out_cond:
            self._responses.append(json.dumps(message, separators=(",", ":")))
            self._out_cond.notify()

    def send_broadcast(self, text: str):
        """Droppable send: old frames are discarded under backpressure."""
        with self._out_cond:
            self._broadcasts.append(text)
            self._out_cond.notify()

    def _send_loop(self):
        # owns the transport: closes it only after reliable sends flush
        try:
            while True:
                with self._out_cond:
                    while not self._responses and not self._broadcasts and not self.closed:
                        self._out_cond.wait()
                    if self.closed and not self._responses:
                        return  # pending broadcasts are droppable
                    item = (self._responses.popleft() if self._responses
                            else self._broadcasts.popleft())
                try:
                    self.transport.send_text(item)
                except OSError:
                    return
        finally:
            self.transport.close()

    def close(self):
        with self._out_cond:
            self.closed = True
            self._out_cond.notify()
        self.inbox.put(None)  # wake a blocked engine_pump

    # -- engine-side controller pump ------------------------------------

    def time_advanced(self, sim: eng.Simulation, robot: eng.RobotRuntime):
        """End-of-tick callback: answer a finished step once the virtual
        clock reaches its target, mirroring the in-process resume point."""
        if (self.outstanding_step is not None
                and sim.clock.now_ms >= robot.ctx.blocked_until_ms):
            self.send({"op": "stepped", "id": self.outstanding_step,
                       "t_ms": sim.clock.now_ms})
            self.outstanding_step = None

    def engine_pump(self, sim: eng.Simulation, robot: eng.RobotRuntime):
        """Run this remote controller's slot: process its ops until the next
        step request. Called on the engine thread while the robot is
        runnable; returns the requested ms, or None to detach."""
        while True:
            try:
                message = self.inbox.get(timeout=sim.step_budget_s)
            except queue.Empty:
                log.warning("controller client for %s stalled, detaching", robot.name)
                self._error(None, "hung", "no step request within budget")
                return None
            if message is None or self.closed:
                return None
            mid = message.get("id")
            op = message.get("op")
            if op == "step":
                ms = message.get("ms")
                step = sim.clock.basic_step_ms
                if not isinstance(ms, int) or ms <= 0 or ms % step != 0:
                    self._error(mid, "bad_step",
                                f"ms must be a positive multiple of {step}")
                    continue
                self.outstanding_step = mid
                return ms
            try:
                self._controller_op(sim, robot, op, message, mid)
            except WireError as err:
                self._error(mid, err.code, err.detail)

    def _controller_op(self, sim, robot, op, message, mid):
        ctx = robot.ctx
        try:
            if op == "get_device":
                tag = ctx.get_device(_require(message, "device", str))
                self.send({"op": "device", "id": mid,
                           "device": {"name": tag.name, "kind": tag.kind}})
            elif op == "set_wheel_speeds":
                ctx.set_wheel_speeds(_require(message, "left", (int, float)),
                                     _require(message, "right", (int, float)))
                self.send({"op": "ok", "id": mid})
            elif op == "servo_command":
                tag = ctx.get_device(_require(message, "device", str))
                ctx.servo_command(tag, _require(message, "mode", str),
                                  _require(message, "target", (int, float)))
                self.send({"op": "ok", "id": mid})
            elif op == "led_set":
                tag = ctx.get_device(_require(message, "device", str))
                ctx.led_set(tag, _require(message, "state", int))
                self.send({"op": "ok", "id": mid})
            elif op == "emitter_send":
                tag = ctx.get_device(_require(message, "device", str))
                payload = base64.b64decode(_require(message, "data", str))
                ctx.emitter_send(tag, payload)
                self.send({"op": "ok", "id": mid})
            elif op == "read":
                kind, value = sim.read_device_value(
                    robot, _require(message, "device", str))
                self.send({"op": "value", "id": mid, "kind": kind,
                           "value": _encode_value(kind, value)})
            else:
                self._error(mid, "unknown_op", f"unsupported op {op!r}")
        except dev.UnknownDevice as err:
            self._error(mid, "unknown_device", str(err))
        except dev.DeviceError as err:
            self._error(mid, "wrong_kind", str(err))
        except eng.ControllerError as err:
            self._error(mid, "bad_request", str(err))

    def _error(self, mid, code, detail):
        self.send({"op": "error", "id": mid, "code": code, "detail": detail})


def _require(message: dict, key: str, types) -> object:
    value = message.get(key)
    if value is None or not isinstance(value, types):
        raise WireError("malformed", f"field {key!r} missing or wrong type")
    return value


def _encode_value(kind: str, value):
    if kind == "Camera1D":
        import array
        buf = array.array("f", value)
        return base64.b64encode(buf.tobytes()).decode()
    if kind == "Receiver":
        return [{"channel": m.channel,
                 "data": base64.b64encode(m.payload).decode(),
                 "send_tick": m.send_tick} for m in value]
    if kind in ("GPS", "Compass"):
        return [value[0], value[1]]
    return value


# ---------------------------------------------------------------------------
# Server

class WireServer:
    """Serves one simulation; see module docstring for the protocol."""

    def __init__(self, sim: eng.Simulation, host: str = "127.0.0.1", port: int = 0):
        self.sim = sim
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._sessions: list[Session] = []
        self._lock = threading.Lock()
        self._closed = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="wire-accept")
        sim.on_tick.append(self._broadcast_state)
        sim.on_pause.append(self._broadcast_pause)
        sim.on_reset.append(self._notify_reset)
        sim.on_node_removed.append(self._notify_removed)
        self._accept_thread.start()
        log.info("wire server listening on %s:%d", *self.address)

    # -- lifecycle -------------------------------------------------------

    def close(self):
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            self._drop_session(session)
        if self._broadcast_state in self.sim.on_tick:
            self.sim.on_tick.remove(self._broadcast_state)
        if self._broadcast_pause in self.sim.on_pause:
            self.sim.on_pause.remove(self._broadcast_pause)

    def _accept_loop(self):
        while not self._closed:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(sock,),
                             daemon=True, name="wire-read").start()

    def _serve_connection(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        rfile = sock.makefile("rb")
        try:
            head = rfile.peek(4)[:4]
        except OSError:
            sock.close()
            return
        if head.startswith(b"GET"):
            if not _websocket_handshake(sock, rfile):
                sock.close()
                return
            transport = _WebSocketTransport(sock, rfile)
        else:
            transport = _LineTransport(sock, rfile)
        session = Session(self, transport)
        with self._lock:
            self._sessions.append(session)
        try:
            self._read_loop(session)
        finally:
            self._drop_session(session)

    def _drop_session(self, session: Session):
        with self._lock:
            if session in self._sessions:
                self._sessions.remove(session)
        robot = session.robot
        if robot is not None and robot.remote_session is session:
            def detach(sim=self.sim, robot=robot, session=session):
                if robot.remote_session is session:
                    robot.remote_session = None
                    sim._zero_actuators(robot)
            self.sim.post(detach)
        session.close()

    # -- incoming --------------------------------------------------------

    def _read_loop(self, session: Session):
        while True:
            try:
                text = session.transport.recv_text()
            except OSError:
                return
            if text is None:
                return
            if not text.strip():
                continue
            try:
                message = json.loads(text)
                if not isinstance(message, dict):
                    raise ValueError("not an object")
            except ValueError as err:
                session._error(None, "bad_json", str(err))
                continue
            try:
                if session.role is None:
                    self._handle_hello(session, message)
                else:
                    self._dispatch(session, message)
            except WireError as err:
                session._error(message.get("id"), err.code, err.detail)
            except Exception as err:  # never let one message kill the session
                log.exception("wire op failed")
                session._error(message.get("id"), "internal", repr(err))

    def _handle_hello(self, session: Session, message: dict):
        if message.get("op") != "hello":
            raise WireError("bad_hello", "first message must be hello")
        role = message.get("role")
        if role not in ("controller", "supervisor", "observer"):
            raise WireError("bad_hello", f"unknown role {role!r}")
        devices = []
        if role == "controller":
            name = message.get("robot")
            robot = next((r for r in self.sim.robots if r.name == name), None)
            if robot is None:
                raise WireError("unknown_node", f"no robot named {name!r}")
            if robot.controller_name != "extern":
                raise WireError("robot_unavailable",
                                f"robot {name!r} is not externally controllable")
            with self._lock:
                if robot.remote_session is not None:
                    raise WireError("robot_unavailable",
                                    f"robot {name!r} already has a controller")
                robot.remote_session = session
            session.robot = robot
            devices = [{"name": d.name, "kind": d.kind} for d in robot.devices]
        else:
            devices = [{"robot": r.name, "name": d.name, "kind": d.kind}
                       for r in self.sim.robots for d in r.devices]
        session.role = role
        if role == "observer":
            session.subscribe_every = 1
        session.send({"op": "welcome", "version": PROTOCOL_VERSION, "id": message.get("id"),
                      "basic_step_ms": self.sim.clock.basic_step_ms,
                      "devices": devices})

    def _dispatch(self, session: Session, message: dict):
        op = message.get("op")
        mid = message.get("id")
        allowed = {"controller": CONTROLLER_OPS, "supervisor": SUPERVISOR_OPS,
                   "observer": OBSERVER_OPS}[session.role]
        if op not in allowed:
            known = CONTROLLER_OPS | SUPERVISOR_OPS
            if op in known:
                raise WireError("permission", f"role {session.role} may not {op}")
            raise WireError("unknown_op", f"unsupported op {op!r}")
        if op in CONTROLLER_OPS and session.role == "controller":
            session.inbox.put(message)
            return
        self._supervisor_op(session, op, message, mid)

    def _supervisor_op(self, session: Session, op: str, message: dict, mid):
        sim = self.sim
        if op == "subscribe":
            every = message.get("every_n_ticks", 1)
            if not isinstance(every, int) or every < 1:
                raise WireError("malformed", "every_n_ticks must be a positive integer")
            session.subscribe_every = every
            session.send({"op": "subscribed", "id": mid, "every_n_ticks": every})
        elif op == "get_pose":
            try:
                pose = sim.supervisor_get_pose(_require(message, "node", str))
            except eng.UnknownNode as err:
                raise WireError("unknown_node", str(err)) from None
            session.send({"op": "pose", "id": mid, "x": pose[0], "y": pose[1],
                          "theta": pose[2]})
        elif op == "set_pose":
            try:
                sim.supervisor_set_pose(
                    _require(message, "node", str),
                    _require(message, "x", (int, float)),
                    _require(message, "y", (int, float)),
                    _require(message, "theta", (int, float)))
            except eng.UnknownNode as err:
                raise WireError("unknown_node", str(err)) from None
            session.send({"op": "ok", "id": mid})
        elif op == "spawn":
            try:
                node = sim.supervisor_spawn(_require(message, "world", str))
            except scene.ParseError as err:
                raise WireError("parse_error", str(err)) from None
            except eng.WorldLoadError as err:
                raise WireError("load_error", str(err)) from None
            session.send({"op": "ok", "id": mid, "node": node.def_name})
        elif op == "remove":
            try:
                sim.supervisor_remove(_require(message, "node", str))
            except eng.UnknownNode as err:
                raise WireError("unknown_node", str(err)) from None
            session.send({"op": "ok", "id": mid})
        elif op == "track":
            try:
                sim.supervisor_track(_require(message, "node", str))
            except eng.UnknownNode as err:
                raise WireError("unknown_node", str(err)) from None
            session.send({"op": "ok", "id": mid})
        elif op == "send":
            payload = base64.b64decode(_require(message, "data", str))
            try:
                sim.supervisor_send(_require(message, "channel", int), payload)
            except dev.PayloadTooLarge as err:
                raise WireError("bad_payload", str(err)) from None
            session.send({"op": "ok", "id": mid})
        elif op in ("pause", "resume", "step_once"):
            control = sim.run_control
            if control is None:
                raise WireError("no_run_control", "simulation is not in a run loop")
            getattr(control, {"pause": "pause", "resume": "resume",
                              "step_once": "step_once"}[op])()
            session.send({"op": "ok", "id": mid})
        elif op == "reset":
            sim.post(sim.reset)
            session.send({"op": "ok", "id": mid})
        elif op in CONTROLLER_OPS:
            self._supervisor_device_op(session, op, message, mid)
        else:
            raise WireError("unknown_op", f"unsupported op {op!r}")

    def _supervisor_device_op(self, session: Session, op, message, mid):
        """Controller ops issued by a supervisor; applied at the next tick
        boundary against the named robot."""
        name = _require(message, "robot", str)
        robot = next((r for r in self.sim.robots if r.name == name), None)
        if robot is None:
            raise WireError("unknown_node", f"no robot named {name!r}")

        def apply():
            try:
                session._controller_op(self.sim, robot, op, message, mid)
            except WireError as err:
                session._error(mid, err.code, err.detail)
        if op == "step":
            raise WireError("permission", "only a controller session may step a robot")
        self.sim.post(apply)

    # -- broadcasts --------------------------------------------------------

    def _broadcast_state(self, sim: eng.Simulation):
        with self._lock:
            due = [s for s in self._sessions if s.subscribe_every
                   and sim.tick_index % s.subscribe_every == 0]
        if not due:
            return
        text = json.dumps(self.state_message(sim), separators=(",", ":"))
        for session in due:
            session.send_broadcast(text)

    def _broadcast_pause(self, sim: eng.Simulation):
        """One extra snapshot when the run loop parks, so subscribers see
        the paused flag without waiting for a tick."""
        with self._lock:
            due = [s for s in self._sessions if s.subscribe_every]
        if not due:
            return
        text = json.dumps(self.state_message(sim), separators=(",", ":"))
        for session in due:
            session.send_broadcast(text)

    def state_message(self, sim: eng.Simulation) -> dict:
        bodies = []
        for body in sim.bodies:
            node = sim.body_nodes.get(id(body))
            x, y, theta = body.pose
            bodies.append({"node": sim.node_names.get(node, "?"),
                           "x": x, "y": y, "theta": theta,
                           "shape": _shape_info(body.shape),
                           "color": sim.body_color(body),
                           "static": body.is_static})
        devices = []
        leds = []
        for robot in sim.robots:
            for device in robot.devices:
                entry = {"robot": robot.name, "name": device.name, "kind": device.kind}
                entry["display_value"] = self._display_value(sim, robot, device)
                devices.append(entry)
                if device.kind == "LED":
                    leds.append({"robot": robot.name, "name": device.name,
                                 "state": device.led_state})
        return {"op": "state", "t_ms": sim.clock.now_ms, "bodies": bodies,
                "devices": devices, "leds": leds,
                "paused": bool(sim.run_control and sim.run_control.paused)}

    def _display_value(self, sim, robot, device):
        try:
            if device.kind == "DistanceSensor":
                return round(sim._read_distance(robot, device), 3)
            if device.kind == "LightSensor":
                return round(sim._read_light(robot, device), 3)
            if device.kind == "TouchSensor":
                return sim._read_touch(robot, device)
            if device.kind == "GPS":
                x, y, _ = sim.device_world_pose(robot, device)
                return [round(x, 4), round(y, 4)]
            if device.kind == "Compass":
                nx, ny = dev.compass_north(sim.device_world_pose(robot, device)[2])
                return [round(nx, 4), round(ny, 4)]
            if device.kind == "Servo":
                return round(device.joint.angle, 4)
            if device.kind == "Encoder":
                return round(sim._read_encoder(robot, device), 2)
            if device.kind == "LED":
                return device.led_state
            if device.kind == "Receiver":
                return len(device.queue)
        except Exception:
            return None
        return None

    def _notify_reset(self, sim):
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.send({"op": "reset_notice", "t_ms": 0})

    def _notify_removed(self, sim, node, name):
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            if session.robot is not None and session.robot.node is node:
                session.send({"op": "removed", "node": name})
                self._drop_session(session)
            else:
                session.send({"op": "node_removed", "node": name})


def _shape_info(shape: phys.Shape) -> dict:
    if isinstance(shape, phys.Circle):
        return {"kind": "circle", "radius": shape.radius}
    if isinstance(shape, phys.Rect):
        return {"kind": "rect", "width": shape.width, "height": shape.height}
    return {"kind": "segment", "ax": shape.a[0], "ay": shape.a[1],
            "bx": shape.b[0], "by": shape.b[1]}


def serve(sim: eng.Simulation, address: str | tuple = ("127.0.0.1", 0)) -> WireServer:
    """Start serving a simulation; address is (host, port) or "host:port"."""
    if isinstance(address, str):
        host, _, port = address.rpartition(":")
        address = (host or "127.0.0.1", int(port))
    return WireServer(sim, address[0], address[1])
