"""Sensor and actuator evaluation: lookup-table sensors with seeded noise,
light/touch/camera readings, and message reception rules.

Everything here is a pure function of explicit world state; the engine owns
the mutable per-robot runtime and calls in from its step context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physics2d import ray_cast

MAX_PAYLOAD_BYTES = 1024
_LIGHT_EPS = 1e-9
_CAMERA_RANGE = 1e6
_OCCLUSION_SLACK = 1e-9


class DeviceError(Exception):
    pass


class UnknownDevice(DeviceError):
    pass


class WrongDeviceKind(DeviceError):
    def __init__(self, expected: str, tag: "DeviceTag"):
        super().__init__(f"device {tag.name!r} is a {tag.kind}, expected {expected}")


class PayloadTooLarge(DeviceError):
    pass


@dataclass(frozen=True)
class DeviceTag:
    """Opaque handle to one device of one robot."""

    robot_index: int
    device_index: int
    name: str
    kind: str


@dataclass(frozen=True)
class Message:
    channel: int
    payload: bytes
    emitter_pose: tuple[float, float, float]
    send_tick: int
    emitter_order: int  # scene order of the sender; supervisor sends use -1


class LookupTable:
    """Piecewise-linear response curve with a per-row noise ratio.

    Rows are (input, output, noise_ratio) with strictly increasing inputs;
    queries are clamped to the input domain.
    """

    def __init__(self, rows):
        rows = [tuple(map(float, r)) for r in rows]
        if len(rows) < 2:
            raise ValueError("lookup table needs at least 2 rows")
        inputs = [r[0] for r in rows]
        if any(b <= a for a, b in zip(inputs, inputs[1:])):
            raise ValueError("lookup table inputs must be strictly increasing")
        if any(r[2] < 0 for r in rows):
            raise ValueError("lookup table noise ratios must be >= 0")
        self.rows = rows

    @classmethod
    def from_flat(cls, values) -> "LookupTable":
        if len(values) % 3 != 0:
            raise ValueError("flat lookup table length must be a multiple of 3")
        return cls([values[i:i + 3] for i in range(0, len(values), 3)])

    @property
    def max_input(self) -> float:
        return self.rows[-1][0]

    @property
    def output_range(self) -> tuple[float, float]:
        outputs = [r[1] for r in self.rows]
        return min(outputs), max(outputs)

    def _interp(self, x: float, column: int) -> float:
        rows = self.rows
        if x <= rows[0][0]:
            return rows[0][column]
        if x >= rows[-1][0]:
            return rows[-1][column]
        for (x0, *r0), (x1, *r1) in zip(rows, rows[1:]):
            if x <= x1:
                f = (x - x0) / (x1 - x0)
                return r0[column - 1] + f * (r1[column - 1] - r0[column - 1])
        raise AssertionError("unreachable")

    def interpolate(self, x: float) -> float:
        return self._interp(x, 1)

    def noise_ratio(self, x: float) -> float:
        return self._interp(x, 2)


def gaussian_noise(seed: int, tick: int, robot_index: int, device_index: int) -> float:
    """Standard-normal sample from the substream keyed by (tick, robot, device).

    Keyed derivation makes readings independent of evaluation order and
    idempotent within a tick.
    """
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, tick, robot_index, device_index])
    return float(np.random.Generator(np.random.PCG64(ss)).standard_normal())


def spread_angles(aperture: float, count: int) -> list[float]:
    """Ray directions evenly across an aperture centered on the device axis."""
    if count <= 1:
        return [0.0]
    half = aperture / 2.0
    step = aperture / (count - 1)
    return [-half + i * step for i in range(count)]


# ---------------------------------------------------------------------------
# Sensors

def distance_reading(pose, aperture: float, ray_count: int, table: LookupTable,
                     bodies, ignore=()) -> tuple[float, float]:
    """Noise-free lookup value and the measured distance.

    Rays fan across the aperture; the reading reflects the nearest hit. The
    sensing range is the table's input domain, so a miss reads the value at
    the last table row.
    """
    x, y, theta = pose
    max_range = table.max_input
    d = max_range
    for offset in spread_angles(aperture, ray_count):
        angle = theta + offset
        hit = ray_cast(bodies, (x, y), (math.cos(angle), math.sin(angle)), max_range, ignore)
        if hit.hit:
            d = min(d, hit.distance)
    return table.interpolate(d), d


def apply_table_noise(value: float, d: float, table: LookupTable, noise: float) -> float:
    """Add N(0, (ratio*value)^2) noise and clamp to the table's output range."""
    ratio = table.noise_ratio(d)
    if ratio > 0.0:
        value = value + ratio * value * noise
    lo, hi = table.output_range
    return min(max(value, lo), hi)


def irradiance(sensor_pos, lights, bodies, ignore=()) -> float:
    """Inverse-square irradiance from all point lights with a clear sightline."""
    sx, sy = sensor_pos
    total = 0.0
    for (lx, ly), intensity in lights:
        dx, dy = lx - sx, ly - sy
        d = math.hypot(dx, dy)
        if d > 0.0:
            hit = ray_cast(bodies, (sx, sy), (dx / d, dy / d), d, ignore)
            if hit.hit and hit.distance < d - _OCCLUSION_SLACK:
                continue
        total += intensity / max(d * d, _LIGHT_EPS)
    return total


def touch_active(sensor_pos, radius: float, contact_points) -> bool:
    sx, sy = sensor_pos
    return any(math.hypot(px - sx, py - sy) <= radius for px, py in contact_points)


def compass_north(device_theta: float) -> tuple[float, float]:
    """World +y expressed in the device frame."""
    return (math.sin(device_theta), math.cos(device_theta))


def camera_line(pose, fov: float, width: int, bodies, ignore=(), color_of=None) -> list[float]:
    """Grayscale row: one ray per pixel across the field of view.

    Pixel 0 looks toward the left edge of the view; a miss reads 0.
    """
    x, y, theta = pose
    if width == 1:
        offsets = [0.0]
    else:
        offsets = [fov / 2.0 - fov * i / (width - 1) for i in range(width)]
    row = []
    for offset in offsets:
        angle = theta + offset
        hit = ray_cast(bodies, (x, y), (math.cos(angle), math.sin(angle)), _CAMERA_RANGE, ignore)
        if hit.hit and color_of is not None:
            row.append(float(color_of(hit.body)))
        else:
            row.append(0.0)
    return row


# ---------------------------------------------------------------------------
# Communication

def check_payload(payload: bytes):
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD_BYTES}")


def channels_match(emitter_channel: int, receiver_channel: int) -> bool:
    """Channel 0 is the reserved broadcast channel on either side."""
    return emitter_channel == receiver_channel or emitter_channel == 0 or receiver_channel == 0


def can_receive(message: Message, emitter_type: str, emitter_range: float,
                emitter_aperture: float, receiver_pos, bodies, ignore=()) -> bool:
    """Reception rules evaluated against the emitter pose at send time.

    radio: in range (unlimited when range < 0). infra-red: additionally
    within the emitter aperture and with an unobstructed sightline.
    """
    ex, ey, etheta = message.emitter_pose
    rx, ry = receiver_pos
    dx, dy = rx - ex, ry - ey
    d = math.hypot(dx, dy)
    if emitter_range >= 0.0 and d > emitter_range:
        return False
    if emitter_type != "infra-red":
        return True
    if d > 0.0:
        if emitter_aperture >= 0.0:
            bearing = math.atan2(dy, dx) - etheta
            bearing = math.atan2(math.sin(bearing), math.cos(bearing))
            if abs(bearing) > emitter_aperture / 2.0:
                return False
        hit = ray_cast(bodies, (ex, ey), (dx / d, dy / d), d, ignore)
        if hit.hit and hit.distance < d - _OCCLUSION_SLACK:
            return False
    return True
