"""Lockstep engine: loading, tick phases, controller scheduling, supervisor."""

import time
from pathlib import Path

import pytest

from microsim import devices as dev
from microsim import engine, scene
from microsim.engine import (
    ControllerError,
    PermissionDenied,
    RunControl,
    Simulation,
    UnknownNode,
    WorldLoadError,
    load,
    load_text,
    run,
)

WORLDS = Path(__file__).resolve().parent.parent / "worlds"
CORRIDOR = (WORLDS / "corridor.mwt").read_text()


def drive_forever(left, right, step=32):
    def controller(ctx):
        ctx.live(lambda: None)
        while True:
            ctx.set_wheel_speeds(left, right)
            ctx.step(step)
    return controller


ROBOT_WORLD = """
WorldInfo {{ basicTimeStep 32 }}
DEF BOT DifferentialWheels {{
  translation 0 0
  wheelRadius 0.05
  axleLength 0.1
  maxSpeed 100
  controller "{controller}"
  children [ {children} ]
}}
"""


def bot_world(controller="void", children=""):
    return ROBOT_WORLD.format(controller=controller, children=children)


# ---------------------------------------------------------------------------
# Loading

def test_load_corridor_world():
    sim = load_text(CORRIDOR)
    assert len(sim.robots) == 1
    robot = sim.robots[0]
    assert robot.name == "ROBOT"
    assert "ir" in robot.devices_by_name
    # implicit wheel encoders are present too
    assert set(robot.devices_by_name) == {"ir", "left_encoder", "right_encoder"}
    assert sim.clock.now_ms == 0
    assert sim.clock.basic_step_ms == 32


def test_load_empty_world():
    sim = load_text("WorldInfo { basicTimeStep 32 }")
    assert sim.robots == []
    assert sim.bodies == []


def test_load_rejects_duplicate_device_names():
    text = bot_world(children='DistanceSensor { name "ir" } DistanceSensor { name "ir" }')
    with pytest.raises(WorldLoadError) as err:
        load_text(text)
    assert "duplicate device name" in str(err.value)


def test_load_rejects_unknown_controller():
    with pytest.raises(WorldLoadError) as err:
        load_text(bot_world(controller="nonsense"))
    assert "unknown controller" in str(err.value)


def test_load_rejects_invalid_tree():
    with pytest.raises(WorldLoadError):
        load_text("Solid { }")  # missing WorldInfo


def test_robot_default_shape_is_axle_circle():
    sim = load_text(bot_world())
    shape = sim.robots[0].body.shape
    assert shape.radius == pytest.approx(0.05)


# ---------------------------------------------------------------------------
# Clock and tick basics

def test_tick_advances_clock_exactly():
    sim = load_text(bot_world())
    for n in range(1, 6):
        sim.tick()
        assert sim.clock.now_ms == n * 32
        assert sim.tick_index == n


def test_run_fast_until():
    sim = load_text(bot_world())
    run(sim, "fast", until_ms=1000)
    assert sim.clock.now_ms == 1024  # first multiple of 32 at or past 1000


def test_run_fast_exact_multiple():
    sim = load_text(bot_world())
    run(sim, "fast", until_ms=1024)
    assert sim.clock.now_ms == 1024


def test_step_mode_three_triggers():
    sim = load_text(bot_world())
    for _ in range(3):
        sim.tick()
    assert sim.clock.now_ms == 3 * 32


def test_realtime_paces_wall_clock():
    sim = load_text(bot_world())
    start = time.monotonic()
    run(sim, "realtime", until_ms=320)
    elapsed = time.monotonic() - start
    assert sim.clock.now_ms == 320
    assert elapsed >= 0.3


def test_run_rejects_unknown_mode():
    sim = load_text(bot_world())
    with pytest.raises(ValueError):
        run(sim, "warp")


# ---------------------------------------------------------------------------
# Controller scheduling

def test_controllers_run_in_scene_order():
    order = []

    def recorder(name):
        def controller(ctx):
            ctx.live(lambda: None)
            while True:
                order.append((name, ctx.time_ms))
                ctx.step(32)
        return controller

    text = """
WorldInfo { basicTimeStep 32 }
DEF FIRST DifferentialWheels { controller "a" }
DEF SECOND DifferentialWheels { translation 1 0 controller "b" }
"""
    sim = load_text(text, controllers={"a": recorder("a"), "b": recorder("b")})
    sim.tick()
    sim.tick()
    assert order == [("a", 0), ("b", 0), ("a", 32), ("b", 32)]


def test_robot_step_cadence():
    times = []

    def controller(ctx):
        ctx.live(lambda: None)
        while True:
            times.append(ctx.time_ms)
            ctx.step(64)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    for _ in range(6):
        sim.tick()
    assert times == [0, 64, 128]  # resumed exactly every 2 ticks


def test_robot_step_rejects_non_multiple():
    def controller(ctx):
        ctx.live(lambda: None)
        ctx.step(48)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()
    assert sim.errors and "48" in sim.errors[0][1]


def test_robot_step_rejects_non_positive():
    def controller(ctx):
        ctx.live(lambda: None)
        ctx.step(0)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()
    assert sim.errors


def test_step_before_live_is_an_error():
    def controller(ctx):
        ctx.step(32)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()
    assert sim.errors and "live" in sim.errors[0][1]


def test_live_twice_is_an_error():
    def controller(ctx):
        ctx.live(lambda: None)
        ctx.live(lambda: None)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()
    assert sim.errors and "twice" in sim.errors[0][1]


def test_get_device_and_unknown_device():
    tags = []

    def controller(ctx):
        ctx.live(lambda: None)
        tags.append(ctx.get_device("ir"))
        tags.append(ctx.get_device("ir"))
        with pytest.raises(dev.UnknownDevice):
            ctx.get_device("zz")
        while True:
            ctx.step(32)

    text = bot_world(controller="c", children='DistanceSensor { name "ir" }')
    sim = load_text(text, controllers={"c": controller})
    sim.tick()
    assert not sim.errors
    assert tags[0] == tags[1]


def test_controller_exception_zeroes_actuators_and_continues():
    def controller(ctx):
        ctx.live(lambda: None)
        ctx.set_wheel_speeds(30, 30)
        ctx.step(32)
        raise RuntimeError("controller bug")

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()  # command staged
    sim.tick()  # latches, controller crashes
    assert sim.errors and "controller bug" in sim.errors[0][1]
    drive = sim.robots[0].drive
    assert (drive.wheel_speed_left, drive.wheel_speed_right) == (0.0, 0.0)
    before = sim.clock.now_ms
    sim.tick()  # still ticking fine afterwards
    assert sim.clock.now_ms == before + 32


def test_hung_controller_is_detected():
    def controller(ctx):
        ctx.live(lambda: None)
        time.sleep(0.5)
        ctx.step(32)

    sim = Simulation(scene.parse_world(bot_world(controller="c")),
                     controllers={"c": controller}, step_budget_s=0.05)
    sim.tick()
    assert sim.errors and "hung" in sim.errors[0][1]
    sim.tick()  # engine stays alive


# ---------------------------------------------------------------------------
# Actuator latching

def test_commands_act_one_tick_later():
    sim = load_text(bot_world(controller="d"),
                    controllers={"d": drive_forever(10, 10)})
    sim.tick()  # controller commands during tick 0; physics still uses zeros
    assert sim.robots[0].body.pose[0] == pytest.approx(0.0)
    sim.tick()  # latched now
    assert sim.robots[0].body.pose[0] == pytest.approx(0.05 * 10 * 0.032)


def test_speed_clamped_to_max_speed():
    sim = load_text(bot_world(controller="d"),
                    controllers={"d": drive_forever(1e9, 0)})
    sim.tick()
    sim.tick()
    assert sim.robots[0].drive.wheel_speed_left == 100.0


# ---------------------------------------------------------------------------
# Sensors through the engine

def test_distance_sensor_and_gps_through_engine():
    readings = {}

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(ir=ctx.get_device("ir"), gps=ctx.get_device("gps")))
        readings["ir"] = ctx.distance_sensor_value(tags["ir"])
        readings["ir_again"] = ctx.distance_sensor_value(tags["ir"])
        readings["gps"] = ctx.gps_position(tags["gps"])
        while True:
            ctx.step(32)

    text = """
WorldInfo { basicTimeStep 32 }
DEF BOT DifferentialWheels {
  translation 1 2
  wheelRadius 0.05
  axleLength 0.1
  controller "c"
  children [
    DistanceSensor { name "ir" translation 0.05 0 lookupTable [ 0 1024 0 0.2 0 0 ] }
    GPS { name "gps" }
  ]
}
DEF WALL Solid { translation 1.3 2 boundingObject Box { size 0.1 2 } }
"""
    sim = load_text(text, controllers={"c": controller})
    sim.tick()
    # sensor at x=1.05, wall face at 1.25: d = 0.2 exactly -> table end -> 0
    assert readings["ir"] == pytest.approx(0.0, abs=1e-9)
    assert readings["ir_again"] == readings["ir"]
    assert readings["gps"] == pytest.approx((1.0, 2.0))


def test_noisy_sensor_is_reproducible_per_tick():
    values = []

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(ir=ctx.get_device("ir")))
        while True:
            a = ctx.distance_sensor_value(tags["ir"])
            b = ctx.distance_sensor_value(tags["ir"])
            values.append((a, b))
            ctx.step(32)

    children = 'DistanceSensor { name "ir" lookupTable [ 0 1024 0.05 0.5 0 0.05 ] }'
    world = ("WorldInfo { basicTimeStep 32 }\n"
             + bot_world(controller="c", children=children).split("\n", 1)[1].replace(
                 "WorldInfo { basicTimeStep 32 }\n", "")
             + 'DEF WALL Solid { translation 0.3 0 boundingObject Box { size 0.1 2 } }')
    sim_a = load_text(world, seed=5, controllers={"c": controller})
    for _ in range(4):
        sim_a.tick()
    first_run = list(values)
    values.clear()
    sim_b = load_text(world, seed=5, controllers={"c": controller})
    for _ in range(4):
        sim_b.tick()
    assert values == first_run
    for a, b in first_run:
        assert a == b  # same tick, same value
    assert len({a for a, _ in first_run}) > 1  # noise varies across ticks

    values.clear()
    sim_c = load_text(world, seed=6, controllers={"c": controller})
    for _ in range(4):
        sim_c.tick()
    assert values != first_run  # different seed, different stream


def test_encoder_counts_and_reset():
    counts = []

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(enc=ctx.get_device("left_encoder")))
        ctx.set_wheel_speeds(10, 10)
        ctx.step(64)
        counts.append(ctx.encoder_counts(tags["enc"]))
        ctx.encoder_reset(tags["enc"])
        counts.append(ctx.encoder_counts(tags["enc"]))
        while True:
            ctx.step(64)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    for _ in range(3):
        sim.tick()
    # command latched at tick 1: one tick of motion by resume at now=64
    assert counts[0] == pytest.approx(10 * 0.032 * 100)
    assert counts[1] == 0.0


def test_touch_sensor_through_engine():
    reads = []

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(bump=ctx.get_device("bump")))
        while True:
            reads.append(ctx.touch_sensor_value(tags["bump"]))
            ctx.set_wheel_speeds(5, 5)
            ctx.step(32)

    text = (WORLDS / "touch.mwt").read_text().replace('"void"', '"c"')
    sim = load_text(text, controllers={"c": controller})
    for _ in range(8):
        sim.tick()
    assert reads[0] == 0  # parked 10 mm away, not yet touching
    assert 1 in reads  # driving into the wall presses the bumper


# ---------------------------------------------------------------------------
# Communication through the engine

COMM_WORLD = """
WorldInfo { basicTimeStep 32 }
DEF SENDER Robot {
  translation 0 0
  controller "tx"
  boundingObject Cylinder { radius 0.03 }
  children [ Emitter { name "out" type "radio" channel 1 } ]
}
DEF LISTENER Robot {
  translation 1 0
  controller "rx"
  boundingObject Cylinder { radius 0.03 }
  children [ Receiver { name "in" type "radio" channel 1 } ]
}
"""


def test_message_latency_is_one_tick():
    received = []

    def tx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(out=ctx.get_device("out")))
        ctx.emitter_send(tags["out"], b"ping")
        while True:
            ctx.step(32)

    def rx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(inn=ctx.get_device("in")))
        while True:
            received.append([m.payload for m in ctx.receiver_poll(tags["inn"])])
            ctx.step(32)

    sim = load_text(COMM_WORLD, controllers={"tx": tx, "rx": rx})
    for _ in range(3):
        sim.tick()
    assert received[0] == []          # sent during tick 0, not visible yet
    assert received[1] == [b"ping"]   # visible exactly one tick later
    assert received[2] == []          # delivered once, drained


def test_channel_mismatch_not_delivered():
    world = COMM_WORLD.replace("channel 1 } ]\n}", "channel 2 } ]\n}", 1)

    def tx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(out=ctx.get_device("out")))
        ctx.emitter_send(tags["out"], b"ping")
        while True:
            ctx.step(32)

    got = []

    def rx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(inn=ctx.get_device("in")))
        while True:
            got.extend(ctx.receiver_poll(tags["inn"]))
            ctx.step(32)

    sim = load_text(world, controllers={"tx": tx, "rx": rx})
    for _ in range(3):
        sim.tick()
    assert got == []


def test_same_tick_sends_ordered_by_scene_order():
    world = """
WorldInfo { basicTimeStep 32 }
DEF A Robot { translation 0 0 controller "tx_a" boundingObject Cylinder { radius 0.02 }
  children [ Emitter { name "out" channel 1 } ] }
DEF B Robot { translation 0 1 controller "tx_b" boundingObject Cylinder { radius 0.02 }
  children [ Emitter { name "out" channel 1 } ] }
DEF C Robot { translation 1 0 controller "rx" boundingObject Cylinder { radius 0.02 }
  children [ Receiver { name "in" channel 1 } ] }
"""
    def make_tx(payload):
        def tx(ctx):
            tags = {}
            ctx.live(lambda: tags.update(out=ctx.get_device("out")))
            ctx.emitter_send(tags["out"], payload)
            while True:
                ctx.step(32)
        return tx

    got = []

    def rx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(inn=ctx.get_device("in")))
        while True:
            got.extend(m.payload for m in ctx.receiver_poll(tags["inn"]))
            ctx.step(32)

    # run controller B first would break scene order; engine must sort by robot order
    sim = load_text(world, controllers={
        "tx_a": make_tx(b"from_a"), "tx_b": make_tx(b"from_b"), "rx": rx})
    sim.tick()
    sim.tick()
    assert got == [b"from_a", b"from_b"]


def test_supervisor_send_broadcast_channel():
    got = []

    def rx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(inn=ctx.get_device("in")))
        while True:
            got.extend(m.payload for m in ctx.receiver_poll(tags["inn"]))
            ctx.step(32)

    world = COMM_WORLD.replace('"tx"', '"void"')
    sim = load_text(world, controllers={"rx": rx})
    sim.supervisor_send(0, b"stop")  # reserved broadcast channel
    sim.tick()
    sim.tick()
    assert got == [b"stop"]


def test_emitter_payload_cap():
    def tx(ctx):
        tags = {}
        ctx.live(lambda: tags.update(out=ctx.get_device("out")))
        with pytest.raises(dev.PayloadTooLarge):
            ctx.emitter_send(tags["out"], b"x" * 2000)
        while True:
            ctx.step(32)

    sim = load_text(COMM_WORLD, controllers={"tx": tx, "rx": lambda ctx: (
        ctx.live(lambda: None), [ctx.step(32) for _ in iter(int, 1)])})
    sim.tick()
    assert not sim.errors


# ---------------------------------------------------------------------------
# Supervisor surface

def test_supervisor_set_get_pose():
    sim = load_text(CORRIDOR)
    sim.supervisor_set_pose("WALL", 5.0, 5.0, 0.0)
    assert sim.supervisor_get_pose("WALL") == pytest.approx((0.35, 0.0, 0.0))
    sim.tick()  # applied at the next boundary
    assert sim.supervisor_get_pose("WALL") == pytest.approx((5.0, 5.0, 0.0))


def test_supervisor_pose_unknown_node():
    sim = load_text(CORRIDOR)
    with pytest.raises(UnknownNode):
        sim.supervisor_get_pose("GHOST")
    with pytest.raises(UnknownNode):
        sim.supervisor_set_pose("GHOST", 0, 0, 0)


def test_non_supervisor_controller_denied():
    def controller(ctx):
        ctx.live(lambda: None)
        with pytest.raises(PermissionDenied):
            ctx.supervisor_set_pose("WALL", 1, 1, 0)
        while True:
            ctx.step(32)

    sim = load_text(CORRIDOR.replace("avoid_obstacle", "c"), controllers={"c": controller})
    sim.tick()
    assert not sim.errors


def test_supervisor_robot_context_allowed():
    moved = []

    def boss(ctx):
        ctx.live(lambda: None)
        ctx.supervisor_set_pose("CRATE", 2, 2, 0)
        moved.append(True)
        while True:
            ctx.step(32)

    text = """
WorldInfo { basicTimeStep 32 }
DEF BOSS Robot { supervisor TRUE controller "boss" boundingObject Cylinder { radius 0.03 } }
DEF CRATE Solid { translation 0 1 boundingObject Box { size 0.1 0.1 } }
"""
    sim = load_text(text, controllers={"boss": boss})
    sim.tick()
    sim.tick()
    assert moved
    assert sim.supervisor_get_pose("CRATE") == pytest.approx((2.0, 2.0, 0.0))


def test_spawn_and_remove():
    sim = load_text(CORRIDOR)
    count = len(sim.bodies)
    node = sim.supervisor_spawn('DEF CRATE Solid { translation 1 1 boundingObject Box { size 0.1 0.1 } }')
    sim.tick()
    assert len(sim.bodies) == count + 1
    assert sim.supervisor_get_pose("CRATE") == pytest.approx((1.0, 1.0, 0.0))
    sim.supervisor_remove(node)
    sim.tick()
    assert len(sim.bodies) == count
    with pytest.raises(UnknownNode):
        sim.supervisor_get_pose("CRATE")


def test_spawn_invalid_text_leaves_world_unchanged():
    sim = load_text(CORRIDOR)
    count = len(sim.bodies)
    with pytest.raises(scene.ParseError):
        sim.supervisor_spawn("Solid { translation }")
    with pytest.raises(scene.ParseError):
        sim.supervisor_spawn("DEF WALL Solid { }")  # DEF clash
    sim.tick()
    assert len(sim.bodies) == count


def test_track_trajectory():
    sim = load_text(CORRIDOR)
    trajectory = sim.supervisor_track("WALL")
    sim.tick()
    sim.tick()
    assert [s[0] for s in trajectory.samples] == [32, 64]
    assert all(s[1] == pytest.approx(0.35) for s in trajectory.samples)


def test_track_moving_robot_matches_drive():
    sim = load_text(bot_world(controller="d"), controllers={"d": drive_forever(10, 10)})
    trajectory = sim.supervisor_track("BOT")
    for _ in range(4):
        sim.tick()
    # speeds latch at tick 1: x advances from the second sample on
    assert trajectory.samples[0][1] == pytest.approx(0.0)
    assert trajectory.samples[-1][1] == pytest.approx(0.05 * 10 * 0.032 * 3)


# ---------------------------------------------------------------------------
# Reset

def test_reset_restores_postload_digest():
    sim = load_text(CORRIDOR)
    digest0 = sim.state_digest()
    for _ in range(100):
        sim.tick()
    assert sim.state_digest() != digest0
    sim.reset()
    assert sim.state_digest() == digest0
    assert sim.clock.now_ms == 0


def test_reset_is_idempotent():
    sim = load_text(CORRIDOR)
    for _ in range(10):
        sim.tick()
    sim.reset()
    digest = sim.state_digest()
    sim.reset()
    assert sim.state_digest() == digest


def test_reset_reruns_live_callbacks():
    calls = []

    def controller(ctx):
        ctx.live(lambda: calls.append(ctx.time_ms))
        while True:
            ctx.step(32)

    sim = load_text(bot_world(controller="c"), controllers={"c": controller})
    sim.tick()
    assert calls == [0]
    sim.tick()
    sim.reset()
    assert len(calls) == 2


def test_reset_clears_trajectories_and_spawns():
    sim = load_text(CORRIDOR)
    trajectory = sim.supervisor_track("WALL")
    sim.supervisor_spawn("Solid { translation 2 2 boundingObject Box { size 0.1 0.1 } }")
    for _ in range(5):
        sim.tick()
    assert trajectory.samples
    sim.reset()
    assert trajectory.samples == []
    assert len(sim.bodies) == 2  # robot + wall only


# ---------------------------------------------------------------------------
# Determinism (short; the acceptance suite runs the long version)

def test_short_run_digest_sequences_identical():
    text = (WORLDS / "three_robots.mwt").read_text()

    def digests(sim, n):
        out = []
        for _ in range(n):
            sim.tick()
            out.append(sim.state_digest())
        return out

    a = digests(load_text(text, seed=7), 50)
    b = digests(load_text(text, seed=7), 50)
    assert a == b


def test_avoidance_behavior_stops_at_wall():
    sim = load_text(CORRIDOR)
    run(sim, "fast", until_ms=4096)
    robot = sim.robots[0]
    drive = robot.drive
    assert (drive.wheel_speed_left, drive.wheel_speed_right) == (0.0, 0.0)
    # stopped before touching: hull at +0.05 from center, wall face at 0.25
    assert robot.body.pose[0] < 0.20
    assert robot.body.pose[0] > 0.0  # but it did advance
    # moving the wall away lets it resume
    sim.supervisor_set_pose("WALL", 5.0, 5.0, 0.0)
    before = sim.clock.now_ms
    run(sim, "fast", until_ms=before + 640)
    assert robot.body.pose[0] > 0.20


def test_run_control_pause_and_step():
    sim = load_text(bot_world())
    control = RunControl(paused=True)
    import threading
    thread = threading.Thread(target=run, args=(sim, "fast"), kwargs={
        "until_ms": 3200, "control": control})
    thread.start()
    time.sleep(0.1)
    assert sim.clock.now_ms == 0  # paused from the start
    control.step_once()
    time.sleep(0.1)
    assert sim.clock.now_ms == 32
    control.resume()
    thread.join(timeout=5)
    assert sim.clock.now_ms == 3200


# ---------------------------------------------------------------------------
# Device kind errors and servo semantics through the engine

def test_wrong_device_kind_distinct_from_unknown():
    failures = {}

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(gps=ctx.get_device("gps")))
        try:
            ctx.distance_sensor_value(tags["gps"])
        except dev.WrongDeviceKind as err:
            failures["kind"] = str(err)
        try:
            ctx.get_device("nonexistent")
        except dev.UnknownDevice as err:
            failures["unknown"] = str(err)
        while True:
            ctx.step(32)

    sim = load_text(bot_world(controller="c", children='GPS { name "gps" }'),
                    controllers={"c": controller})
    sim.tick()
    assert not sim.errors
    assert "DistanceSensor" in failures["kind"]
    assert "nonexistent" in failures["unknown"]


SERVO_WORLD = """
WorldInfo { basicTimeStep 32 }
DEF ARMED Robot {
  controller "c"
  boundingObject Cylinder { radius 0.05 }
  children [
    Servo { name "arm" minPosition -1.5 maxPosition 1.5 maxVelocity 5 kP 8 }
  ]
}
"""


def test_servo_velocity_integrates_exactly():
    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(arm=ctx.get_device("arm")))
        ctx.servo_command(tags["arm"], "velocity", 0.5)
        while True:
            ctx.step(32)

    sim = load_text(SERVO_WORLD, controllers={"c": controller})
    total_ticks = 33  # command latches after tick 0, then 32 moving ticks
    for _ in range(total_ticks):
        sim.tick()
    arm = sim.robots[0].devices_by_name["arm"]
    assert arm.joint.angle == pytest.approx(0.5 * 0.032 * (total_ticks - 1), abs=1e-12)


def test_servo_position_target_clamped_to_limits():
    readings = []

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(arm=ctx.get_device("arm")))
        ctx.servo_command(tags["arm"], "position", 10.0)  # beyond maxPosition
        while True:
            readings.append(ctx.servo_position(tags["arm"]))
            ctx.step(32)

    sim = load_text(SERVO_WORLD, controllers={"c": controller})
    for _ in range(200):
        sim.tick()
    arm = sim.robots[0].devices_by_name["arm"]
    assert arm.joint.target == 1.5  # clamped at command time
    assert arm.joint.angle == pytest.approx(1.5, abs=1e-9)
    assert max(readings) <= 1.5


def test_servo_position_holds_current_angle():
    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(arm=ctx.get_device("arm")))
        ctx.servo_command(tags["arm"], "position", 0.0)  # target = current angle
        while True:
            ctx.step(32)

    sim = load_text(SERVO_WORLD, controllers={"c": controller})
    for _ in range(10):
        sim.tick()
    assert sim.robots[0].devices_by_name["arm"].joint.angle == 0.0


def test_spawn_robot_requires_known_controller():
    sim = load_text(CORRIDOR)
    with pytest.raises(WorldLoadError):
        sim.supervisor_spawn('DifferentialWheels { controller "mystery" }')
    node = sim.supervisor_spawn('DifferentialWheels { translation 3 3 controller "void" }')
    sim.tick()
    assert len(sim.robots) == 2
    sim.supervisor_remove(node)
    sim.tick()
    assert len(sim.robots) == 1


def test_camera_reads_body_colors():
    rows = {}

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(cam=ctx.get_device("cam")))
        rows["row"] = ctx.camera_image(tags["cam"])
        while True:
            ctx.step(32)

    text = (WORLDS / "camera_line.mwt").read_text().replace('"void"', '"c"')
    sim = load_text(text, controllers={"c": controller})
    sim.tick()
    row = rows["row"]
    assert len(row) == 64
    assert 0.9 in row  # upper bar
    assert 0.4 in row  # lower bar
    assert 0.0 in row  # gap between them


def test_light_sensor_and_compass_through_engine():
    readings = {}

    def controller(ctx):
        tags = {}
        ctx.live(lambda: tags.update(light=ctx.get_device("light"),
                                     compass=ctx.get_device("compass")))
        readings["light"] = ctx.light_sensor_value(tags["light"])
        readings["north"] = ctx.compass_north(tags["compass"])
        while True:
            ctx.step(32)

    text = (WORLDS / "lights.mwt").read_text().replace(
        'controller "void"', 'controller "c"').replace(
        'LightSensor { name "light" lookupTable [ 0 0 0 10 1000 0 ] }',
        'LightSensor { name "light" lookupTable [ 0 0 0 10 1000 0 ] }\n'
        '    Compass { name "compass" }')
    sim = load_text(text, controllers={"c": controller})
    sim.tick()
    assert not sim.errors
    # the light at (1,0) contributes 1/1^2; the one at (-2,0) is screened off,
    # so E = 1 and the linear table maps it to 100
    assert readings["light"] == pytest.approx(100.0)
    assert readings["north"] == pytest.approx((0.0, 1.0))


def test_device_tags_survive_removal_of_another_robot():
    # tags must stay valid when an earlier robot disappears mid-run
    readings = []

    def watcher(ctx):
        tags = {}
        ctx.live(lambda: tags.update(gps=ctx.get_device("gps")))
        while True:
            readings.append(ctx.gps_position(tags["gps"]))
            ctx.step(32)

    text = """
WorldInfo { basicTimeStep 32 }
DEF FIRST DifferentialWheels { translation -1 0 controller "void" }
DEF SECOND Robot {
  translation 2 3
  controller "w"
  boundingObject Cylinder { radius 0.05 }
  children [ GPS { name "gps" } ]
}
"""
    sim = load_text(text, controllers={"w": watcher})
    sim.tick()
    sim.supervisor_remove("FIRST")
    sim.tick()
    sim.tick()
    assert not sim.errors
    assert len(sim.robots) == 1
    assert readings == [pytest.approx((2.0, 3.0))] * 3


@pytest.mark.parametrize("name", sorted(p.name for p in WORLDS.glob("*.mwt")))
def test_every_corpus_world_loads_and_ticks(name):
    sim = load_text((WORLDS / name).read_text())
    for _ in range(5):
        sim.tick()
    assert sim.clock.now_ms == 5 * sim.clock.basic_step_ms
    assert not sim.errors


def test_supervisor_robot_can_spawn_track_remove():
    log = {}

    def boss(ctx):
        ctx.live(lambda: None)
        node = ctx.supervisor_spawn(
            'DEF CONE Solid { translation 1 1 boundingObject Cylinder { radius 0.05 } }')
        trajectory = ctx.supervisor_track("BOSS")
        log["trajectory"] = trajectory
        ctx.step(64)
        log["cone_pose"] = ctx.supervisor_get_pose("CONE")
        ctx.supervisor_remove(node)
        while True:
            ctx.step(64)

    text = """
WorldInfo { basicTimeStep 32 }
DEF BOSS Robot { supervisor TRUE controller "boss" boundingObject Cylinder { radius 0.03 } }
"""
    sim = load_text(text, controllers={"boss": boss})
    for _ in range(4):
        sim.tick()
    assert not sim.errors
    assert log["cone_pose"] == pytest.approx((1.0, 1.0, 0.0))
    assert len(sim.bodies) == 1  # cone removed again
    assert len(log["trajectory"].samples) == 4
