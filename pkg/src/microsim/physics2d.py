"""Planar rigid-body core: differential-drive arcs, servo joints, ray casts,
and impulse-based contact resolution with Coulomb friction and restitution.

Bodies live in a single world frame. A pose is (x, y, theta) and a velocity
is (vx, vy, omega). Static bodies carry infinite mass. There is no gravity:
the world is a top-down plane, so bodies move only when driven or pushed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

Vec2 = tuple[float, float]
Pose = tuple[float, float, float]

# Straight-line fallback threshold for arc integration.
_OMEGA_EPS = 1e-12
# Contact resolution targets.
PENETRATION_TOLERANCE = 1e-6
_MAX_CONTACT_PASSES = 24


@dataclass
class Circle:
    radius: float


@dataclass
class Rect:
    width: float
    height: float


@dataclass
class Segment:
    """Thin static wall, endpoints in the body's local frame."""

    a: Vec2
    b: Vec2


Shape = Circle | Rect | Segment


@dataclass(eq=False)  # bodies compare by identity
class Body:
    pose: Pose = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mass: float = math.inf  # inf = static
    inertia: float = math.inf
    shape: Shape = field(default_factory=lambda: Circle(0.1))
    static_friction: float = 0.5
    kinetic_friction: float = 0.5
    bounce: float = 0.0

    @property
    def is_static(self) -> bool:
        return math.isinf(self.mass)

    @property
    def inv_mass(self) -> float:
        return 0.0 if math.isinf(self.mass) else 1.0 / self.mass

    @property
    def inv_inertia(self) -> float:
        return 0.0 if math.isinf(self.inertia) else 1.0 / self.inertia


@dataclass
class DriveState:
    """Differential-drive commands and odometry accumulators."""

    wheel_radius: float
    axle_length: float
    max_speed: float
    wheel_speed_left: float = 0.0
    wheel_speed_right: float = 0.0
    accumulated_wheel_angle_left: float = 0.0
    accumulated_wheel_angle_right: float = 0.0

    def set_speeds(self, left: float, right: float):
        limit = abs(self.max_speed)
        self.wheel_speed_left = min(max(left, -limit), limit)
        self.wheel_speed_right = min(max(right, -limit), limit)


@dataclass
class ServoJoint:
    angle: float = 0.0
    angular_velocity: float = 0.0
    mode: str = "position"  # position | velocity | torque
    target: float = 0.0
    min_position: float = -math.inf
    max_position: float = math.inf
    max_velocity: float = 10.0
    max_torque: float = 10.0
    kp: float = 10.0
    inertia: float = 1.0


@dataclass
class RayHit:
    hit: bool
    distance: float
    body: Body | None = None
    point: Vec2 = (0.0, 0.0)


@dataclass
class Contact:
    body_a: Body
    body_b: Body
    point: Vec2
    normal: Vec2  # unit, from body_a toward body_b
    penetration: float
    normal_impulse: float = 0.0
    tangent_impulse: float = 0.0


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


# ---------------------------------------------------------------------------
# Differential drive

def drive_twist(drive: DriveState) -> tuple[float, float]:
    """Body-frame (linear, angular) velocity for the commanded wheel speeds."""
    r = drive.wheel_radius
    v = r * (drive.wheel_speed_left + drive.wheel_speed_right) / 2.0
    omega = r * (drive.wheel_speed_right - drive.wheel_speed_left) / drive.axle_length
    return v, omega


def integrate_drive(pose: Pose, drive: DriveState, dt: float) -> Pose:
    """Exact constant-twist arc update over dt; advances wheel odometry.

    The closed-form arc makes constant-command motion independent of how
    dt is subdivided, so lockstep runs are bit-reproducible.
    """
    x, y, theta = pose
    v, omega = drive_twist(drive)
    drive.accumulated_wheel_angle_left += drive.wheel_speed_left * dt
    drive.accumulated_wheel_angle_right += drive.wheel_speed_right * dt
    if abs(omega) < _OMEGA_EPS:
        return (x + v * math.cos(theta) * dt, y + v * math.sin(theta) * dt, theta)
    radius = v / omega
    theta_new = theta + omega * dt
    x_new = x + radius * (math.sin(theta_new) - math.sin(theta))
    y_new = y - radius * (math.cos(theta_new) - math.cos(theta))
    return (x_new, y_new, theta_new)


# ---------------------------------------------------------------------------
# Servo joints

def step_servo(joint: ServoJoint, dt: float) -> ServoJoint:
    """Advance one joint by dt and return the new state.

    position: omega = clamp(kp * error, +-max_velocity)
    velocity: omega = clamp(target, +-max_velocity)
    torque:   omega += clamp(target, +-max_torque) / inertia * dt
    The angle is hard-clamped to the limits; hitting a limit zeroes omega.
    """
    if joint.mode == "position":
        omega = _clamp(joint.kp * (joint.target - joint.angle),
                       -joint.max_velocity, joint.max_velocity)
    elif joint.mode == "velocity":
        omega = _clamp(joint.target, -joint.max_velocity, joint.max_velocity)
    elif joint.mode == "torque":
        torque = _clamp(joint.target, -joint.max_torque, joint.max_torque)
        omega = joint.angular_velocity + torque / joint.inertia * dt
    else:
        raise ValueError(f"unknown servo mode {joint.mode!r}")
    angle = joint.angle + omega * dt
    if angle <= joint.min_position:
        angle, omega = joint.min_position, 0.0
    elif angle >= joint.max_position:
        angle, omega = joint.max_position, 0.0
    return replace(joint, angle=angle, angular_velocity=omega)


# ---------------------------------------------------------------------------
# Geometry helpers

def _rotate(x: float, y: float, theta: float) -> Vec2:
    c, s = math.cos(theta), math.sin(theta)
    return (c * x - s * y, s * x + c * y)


def _to_world(pose: Pose, p: Vec2) -> Vec2:
    wx, wy = _rotate(p[0], p[1], pose[2])
    return (pose[0] + wx, pose[1] + wy)


def _to_local(pose: Pose, p: Vec2) -> Vec2:
    return _rotate(p[0] - pose[0], p[1] - pose[1], -pose[2])


def segment_endpoints(body: Body) -> tuple[Vec2, Vec2]:
    shape = body.shape
    assert isinstance(shape, Segment)
    return _to_world(body.pose, shape.a), _to_world(body.pose, shape.b)


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


# ---------------------------------------------------------------------------
# Ray casting

def _ray_circle(ox, oy, dx, dy, cx, cy, r):
    mx, my = ox - cx, oy - cy
    c = mx * mx + my * my - r * r
    if c <= 0.0:
        return 0.0  # origin inside or on the circle
    b = mx * dx + my * dy
    disc = b * b - c
    if disc < 0.0:
        return None
    t = -b - math.sqrt(disc)
    return t if t >= 0.0 else None


def _ray_rect(ox, oy, dx, dy, body: Body):
    shape = body.shape
    lx, ly = _to_local(body.pose, (ox, oy))
    ldx, ldy = _rotate(dx, dy, -body.pose[2])
    tmin, tmax = 0.0, math.inf
    origin_inside = True
    for p, d, half in ((lx, ldx, shape.width / 2.0), (ly, ldy, shape.height / 2.0)):
        if abs(p) > half:
            origin_inside = False
        if abs(d) < 1e-15:
            if abs(p) > half:
                return None
            continue
        t1 = (-half - p) / d
        t2 = (half - p) / d
        if t1 > t2:
            t1, t2 = t2, t1
        tmin = max(tmin, t1)
        tmax = min(tmax, t2)
        if tmin > tmax:
            return None
    if origin_inside:
        return 0.0
    if tmax < 0.0:
        return None
    return tmin


def _ray_segment(ox, oy, dx, dy, p1: Vec2, p2: Vec2):
    ex, ey = p2[0] - p1[0], p2[1] - p1[1]
    denom = _cross(dx, dy, ex, ey)
    if abs(denom) < 1e-15:
        return None  # parallel (collinear grazing treated as a miss)
    wx, wy = p1[0] - ox, p1[1] - oy
    t = _cross(wx, wy, ex, ey) / denom
    s = _cross(wx, wy, dx, dy) / denom
    if t < 0.0 or not 0.0 <= s <= 1.0:
        return None
    return t


def ray_shape_distance(body: Body, origin: Vec2, direction: Vec2):
    """Entry distance of a ray into one body's shape, or None."""
    ox, oy = origin
    dx, dy = direction
    shape = body.shape
    if isinstance(shape, Circle):
        return _ray_circle(ox, oy, dx, dy, body.pose[0], body.pose[1], shape.radius)
    if isinstance(shape, Rect):
        return _ray_rect(ox, oy, dx, dy, body)
    p1, p2 = segment_endpoints(body)
    return _ray_segment(ox, oy, dx, dy, p1, p2)


def ray_cast(bodies, origin: Vec2, direction: Vec2, max_range: float, ignore=()) -> RayHit:
    """Nearest intersection within max_range; direction must be unit length.

    A miss returns hit=False with distance=max_range. An origin inside a
    shape hits at distance 0.
    """
    ignore_ids = {id(b) for b in ignore}
    best_t = max_range
    best_body = None
    for body in bodies:
        if id(body) in ignore_ids:
            continue
        t = ray_shape_distance(body, origin, direction)
        if t is not None and t <= best_t:
            if t < best_t or best_body is None:
                best_t = t
                best_body = body
    point = (origin[0] + direction[0] * best_t, origin[1] + direction[1] * best_t)
    return RayHit(best_body is not None, best_t, best_body, point)


# ---------------------------------------------------------------------------
# Contact generation

def _closest_point_on_segment(px, py, a: Vec2, b: Vec2) -> Vec2:
    abx, aby = b[0] - a[0], b[1] - a[1]
    denom = abx * abx + aby * aby
    if denom < 1e-30:
        return a
    t = _clamp(((px - a[0]) * abx + (py - a[1]) * aby) / denom, 0.0, 1.0)
    return (a[0] + t * abx, a[1] + t * aby)


def _rect_corners(body: Body) -> list[Vec2]:
    shape = body.shape
    hw, hh = shape.width / 2.0, shape.height / 2.0
    return [_to_world(body.pose, p)
            for p in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))]


def _shape_vertices(body: Body) -> list[Vec2]:
    if isinstance(body.shape, Rect):
        return _rect_corners(body)
    p1, p2 = segment_endpoints(body)
    return [p1, p2]


def _poly_axes(vertices: list[Vec2]) -> list[Vec2]:
    axes = []
    count = len(vertices)
    for i in range(count):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % count]
        ex, ey = bx - ax, by - ay
        length = math.hypot(ex, ey)
        if length < 1e-30:
            continue
        axes.append((-ey / length, ex / length))
        if count == 2:
            axes.append((ex / length, ey / length))
            break
    return axes


def _project(vertices, ax, ay):
    dots = [v[0] * ax + v[1] * ay for v in vertices]
    return min(dots), max(dots)


def _contact_circle_circle(a: Body, b: Body):
    dx = b.pose[0] - a.pose[0]
    dy = b.pose[1] - a.pose[1]
    dist = math.hypot(dx, dy)
    pen = a.shape.radius + b.shape.radius - dist
    if pen <= 0.0:
        return None
    if dist > 1e-12:
        nx, ny = dx / dist, dy / dist
    else:
        nx, ny = 1.0, 0.0
    px = a.pose[0] + nx * (a.shape.radius - pen / 2.0)
    py = a.pose[1] + ny * (a.shape.radius - pen / 2.0)
    return Contact(a, b, (px, py), (nx, ny), pen)


def _contact_circle_rect(circle: Body, rect: Body):
    r = circle.shape.radius
    hw, hh = rect.shape.width / 2.0, rect.shape.height / 2.0
    lx, ly = _to_local(rect.pose, (circle.pose[0], circle.pose[1]))
    qx, qy = _clamp(lx, -hw, hw), _clamp(ly, -hh, hh)
    dx, dy = lx - qx, ly - qy
    dist = math.hypot(dx, dy)
    if dist > 1e-12:
        if dist >= r:
            return None
        pen = r - dist
        n_local = (dx / dist, dy / dist)  # rect -> circle
    else:
        # center inside: push out along the shallowest face
        gaps = (hw - abs(lx), hh - abs(ly))
        if gaps[0] < gaps[1]:
            n_local = (1.0 if lx >= 0 else -1.0, 0.0)
            pen = r + gaps[0]
        else:
            n_local = (0.0, 1.0 if ly >= 0 else -1.0)
            pen = r + gaps[1]
    nx, ny = _rotate(n_local[0], n_local[1], rect.pose[2])
    point = _to_world(rect.pose, (qx, qy))
    return Contact(rect, circle, point, (nx, ny), pen)


def _contact_circle_segment(circle: Body, seg: Body):
    p1, p2 = segment_endpoints(seg)
    cx, cy = circle.pose[0], circle.pose[1]
    qx, qy = _closest_point_on_segment(cx, cy, p1, p2)
    dx, dy = cx - qx, cy - qy
    dist = math.hypot(dx, dy)
    r = circle.shape.radius
    if dist >= r or dist < 1e-12:
        if dist >= r:
            return None
        # center exactly on the wall: push along the segment normal
        ex, ey = p2[0] - p1[0], p2[1] - p1[1]
        length = math.hypot(ex, ey) or 1.0
        dx, dy = -ey / length, ex / length
        dist = 0.0
    nx, ny = (dx / dist, dy / dist) if dist > 0 else (dx, dy)
    return Contact(seg, circle, (qx, qy), (nx, ny), r - dist)


def _contact_poly_poly(a: Body, b: Body):
    va, vb = _shape_vertices(a), _shape_vertices(b)
    best_pen = math.inf
    best_axis = None
    for ax, ay in _poly_axes(va) + _poly_axes(vb):
        mina, maxa = _project(va, ax, ay)
        minb, maxb = _project(vb, ax, ay)
        overlap = min(maxa, maxb) - max(mina, minb)
        if overlap <= 0.0:
            return None
        if overlap < best_pen:
            best_pen = overlap
            # orient axis from a toward b
            ca = (mina + maxa) / 2.0
            cb = (minb + maxb) / 2.0
            best_axis = (ax, ay) if cb >= ca else (-ax, -ay)
    nx, ny = best_axis
    # contact point: midpoint of the support vertices that overlap deepest
    support_b = min(vb, key=lambda v: v[0] * nx + v[1] * ny)
    support_a = max(va, key=lambda v: v[0] * nx + v[1] * ny)
    point = ((support_a[0] + support_b[0]) / 2.0, (support_a[1] + support_b[1]) / 2.0)
    return Contact(a, b, point, (nx, ny), best_pen)


def make_contact(a: Body, b: Body) -> Contact | None:
    sa, sb = a.shape, b.shape
    if isinstance(sa, Circle) and isinstance(sb, Circle):
        return _contact_circle_circle(a, b)
    if isinstance(sa, Circle) and isinstance(sb, Rect):
        return _contact_circle_rect(a, b)
    if isinstance(sa, Rect) and isinstance(sb, Circle):
        return _contact_circle_rect(b, a)
    if isinstance(sa, Circle) and isinstance(sb, Segment):
        return _contact_circle_segment(a, b)
    if isinstance(sa, Segment) and isinstance(sb, Circle):
        return _contact_circle_segment(b, a)
    if isinstance(sa, Segment) and isinstance(sb, Segment):
        return None  # thin static walls never collide with each other
    return _contact_poly_poly(a, b)


# ---------------------------------------------------------------------------
# Contact resolution

def _velocity_at(body: Body, rx: float, ry: float) -> Vec2:
    vx, vy, omega = body.velocity
    return (vx - omega * ry, vy + omega * rx)


def _apply_impulse(body: Body, jx: float, jy: float, rx: float, ry: float):
    vx, vy, omega = body.velocity
    inv_m = body.inv_mass
    body.velocity = (vx + jx * inv_m,
                     vy + jy * inv_m,
                     omega + _cross(rx, ry, jx, jy) * body.inv_inertia)


def _solve_contact(c: Contact):
    a, b = c.body_a, c.body_b
    nx, ny = c.normal
    rax, ray_ = c.point[0] - a.pose[0], c.point[1] - a.pose[1]
    rbx, rby = c.point[0] - b.pose[0], c.point[1] - b.pose[1]
    vax, vay = _velocity_at(a, rax, ray_)
    vbx, vby = _velocity_at(b, rbx, rby)
    rvx, rvy = vbx - vax, vby - vay
    vn = rvx * nx + rvy * ny
    if vn >= 0.0:
        return  # separating
    e = min(a.bounce, b.bounce)
    ran = _cross(rax, ray_, nx, ny)
    rbn = _cross(rbx, rby, nx, ny)
    k_n = a.inv_mass + b.inv_mass + ran * ran * a.inv_inertia + rbn * rbn * b.inv_inertia
    if k_n <= 0.0:
        return  # two static bodies
    jn = -(1.0 + e) * vn / k_n
    _apply_impulse(a, -jn * nx, -jn * ny, rax, ray_)
    _apply_impulse(b, jn * nx, jn * ny, rbx, rby)
    c.normal_impulse += jn

    # Coulomb friction along the tangent
    vax, vay = _velocity_at(a, rax, ray_)
    vbx, vby = _velocity_at(b, rbx, rby)
    rvx, rvy = vbx - vax, vby - vay
    tx, ty = rvx - (rvx * nx + rvy * ny) * nx, rvy - (rvx * nx + rvy * ny) * ny
    t_len = math.hypot(tx, ty)
    if t_len < 1e-12:
        return
    tx, ty = tx / t_len, ty / t_len
    rat = _cross(rax, ray_, tx, ty)
    rbt = _cross(rbx, rby, tx, ty)
    k_t = a.inv_mass + b.inv_mass + rat * rat * a.inv_inertia + rbt * rbt * b.inv_inertia
    if k_t <= 0.0:
        return
    jt_stick = -t_len / k_t
    mu_s = math.sqrt(a.static_friction * b.static_friction)
    mu_k = math.sqrt(a.kinetic_friction * b.kinetic_friction)
    if abs(jt_stick) <= mu_s * c.normal_impulse:
        jt = jt_stick  # inside the static cone: cancel sliding entirely
    else:
        jt = -mu_k * c.normal_impulse
    _apply_impulse(a, -jt * tx, -jt * ty, rax, ray_)
    _apply_impulse(b, jt * tx, jt * ty, rbx, rby)
    c.tangent_impulse += jt


def _correct_positions(c: Contact):
    a, b = c.body_a, c.body_b
    total_inv = a.inv_mass + b.inv_mass
    if total_inv <= 0.0 or c.penetration <= 0.0:
        return
    nx, ny = c.normal
    share_a = a.inv_mass / total_inv
    share_b = b.inv_mass / total_inv
    ax, ay, atheta = a.pose
    bx, by, btheta = b.pose
    a.pose = (ax - nx * c.penetration * share_a, ay - ny * c.penetration * share_a, atheta)
    b.pose = (bx + nx * c.penetration * share_b, by + ny * c.penetration * share_b, btheta)


def find_contacts(bodies) -> list[Contact]:
    contacts = []
    for i, a in enumerate(bodies):
        for b in bodies[i + 1:]:
            if a.is_static and b.is_static:
                continue
            c = make_contact(a, b)
            if c is not None:
                contacts.append(c)
    return contacts


def resolve_contacts(bodies, dt: float) -> list[Contact]:
    """Resolve all overlaps among bodies (mutating poses and velocities).

    Returns the first-pass contact list (for touch sensing). After return,
    the residual penetration of every pair is below PENETRATION_TOLERANCE.
    """
    bodies = list(bodies)
    first_pass: list[Contact] = []
    for sweep in range(_MAX_CONTACT_PASSES):
        contacts = find_contacts(bodies)
        if sweep == 0:
            first_pass = contacts
        deepest = 0.0
        for c in contacts:
            _solve_contact(c)
            deepest = max(deepest, c.penetration)
        for c in contacts:
            _correct_positions(c)
        if deepest <= PENETRATION_TOLERANCE:
            break
    return first_pass
