"""Scene-tree world format: node catalog, parser, validation, canonical serializer.

Worlds are UTF-8 text files (conventionally ``.mwt``) holding a list of typed
nodes in a VRML-like syntax::

    WorldInfo { basicTimeStep 32 }
    DEF WALL Solid {
      translation 1 0
      boundingObject Box { size 0.1 2 }
    }

``DEF name`` labels a node, ``USE name`` references an earlier DEF. ``#``
starts a line comment, commas count as whitespace. All units are SI
(meters, radians, seconds, kilograms); the world is planar, so translations
have two components and rotations are a single angle about the vertical axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class FieldKind(enum.Enum):
    FLOAT = "float"
    INT = "int"
    BOOL = "bool"
    STRING = "string"
    VEC2 = "vec2"
    NUMBERS = "numbers"
    NODE = "node"
    NODES = "nodes"


_DEVICE_POSE = {
    "name": FieldKind.STRING,
    "translation": FieldKind.VEC2,
    "rotation": FieldKind.FLOAT,
}

_SOLID_BASE = {
    "translation": FieldKind.VEC2,
    "rotation": FieldKind.FLOAT,
    "name": FieldKind.STRING,
    "color": FieldKind.FLOAT,
    "children": FieldKind.NODES,
    "boundingObject": FieldKind.NODE,
    "physics": FieldKind.NODE,
}

# Field declaration order here is the canonical serialization order.
NODE_CATALOG: dict[str, dict[str, FieldKind]] = {
    "WorldInfo": {"basicTimeStep": FieldKind.INT, "randomSeed": FieldKind.INT},
    "Solid": dict(_SOLID_BASE),
    "Physics": {
        "mass": FieldKind.FLOAT,
        "inertia": FieldKind.FLOAT,
        "staticFriction": FieldKind.FLOAT,
        "kineticFriction": FieldKind.FLOAT,
        "bounce": FieldKind.FLOAT,
    },
    "Transform": {
        "translation": FieldKind.VEC2,
        "rotation": FieldKind.FLOAT,
        "children": FieldKind.NODES,
    },
    "Box": {"size": FieldKind.VEC2},
    "Cylinder": {"radius": FieldKind.FLOAT},
    "DifferentialWheels": dict(
        _SOLID_BASE,
        wheelRadius=FieldKind.FLOAT,
        axleLength=FieldKind.FLOAT,
        maxSpeed=FieldKind.FLOAT,
        encoderResolution=FieldKind.FLOAT,
        controller=FieldKind.STRING,
    ),
    "Robot": dict(
        _SOLID_BASE,
        supervisor=FieldKind.BOOL,
        controller=FieldKind.STRING,
    ),
    "Servo": {
        "name": FieldKind.STRING,
        "anchor": FieldKind.VEC2,
        "minPosition": FieldKind.FLOAT,
        "maxPosition": FieldKind.FLOAT,
        "maxVelocity": FieldKind.FLOAT,
        "maxTorque": FieldKind.FLOAT,
        "kP": FieldKind.FLOAT,
        "inertia": FieldKind.FLOAT,
        "children": FieldKind.NODES,
    },
    "DistanceSensor": dict(
        _DEVICE_POSE,
        lookupTable=FieldKind.NUMBERS,
        aperture=FieldKind.FLOAT,
        rayCount=FieldKind.INT,
        type=FieldKind.STRING,
    ),
    "LightSensor": dict(_DEVICE_POSE, lookupTable=FieldKind.NUMBERS),
    "TouchSensor": dict(_DEVICE_POSE, radius=FieldKind.FLOAT),
    "GPS": dict(_DEVICE_POSE),
    "Compass": dict(_DEVICE_POSE),
    "Camera1D": dict(_DEVICE_POSE, fieldOfView=FieldKind.FLOAT, width=FieldKind.INT),
    "Emitter": dict(
        _DEVICE_POSE,
        type=FieldKind.STRING,
        channel=FieldKind.INT,
        range=FieldKind.FLOAT,
        aperture=FieldKind.FLOAT,
    ),
    "Receiver": dict(_DEVICE_POSE, type=FieldKind.STRING, channel=FieldKind.INT),
    "LED": dict(_DEVICE_POSE),
    "PointLight": {"intensity": FieldKind.FLOAT, "location": FieldKind.VEC2},
}

_SOLID_DEFAULTS = {
    "translation": (0.0, 0.0),
    "rotation": 0.0,
    "name": "",
    "color": 0.5,
    "children": (),
    "boundingObject": None,
    "physics": None,
}

# Applied by readers when a field is absent from the file; never serialized.
DEFAULTS: dict[str, dict[str, object]] = {
    "WorldInfo": {"basicTimeStep": 32, "randomSeed": 0},
    "Solid": dict(_SOLID_DEFAULTS),
    "Physics": {
        "mass": 1.0,
        "inertia": 0.0,  # 0 = derive from shape
        "staticFriction": 0.5,
        "kineticFriction": 0.5,
        "bounce": 0.0,
    },
    "Transform": {"translation": (0.0, 0.0), "rotation": 0.0, "children": ()},
    "Box": {"size": (0.1, 0.1)},
    "Cylinder": {"radius": 0.1},
    "DifferentialWheels": dict(
        _SOLID_DEFAULTS,
        wheelRadius=0.025,
        axleLength=0.09,
        maxSpeed=100.0,
        encoderResolution=100.0,
        controller="",
    ),
    "Robot": dict(_SOLID_DEFAULTS, supervisor=False, controller=""),
    "Servo": {
        "name": "",
        "anchor": (0.0, 0.0),
        "minPosition": -math.inf,
        "maxPosition": math.inf,
        "maxVelocity": 10.0,
        "maxTorque": 10.0,
        "kP": 10.0,
        "inertia": 1.0,
        "children": (),
    },
    "DistanceSensor": {
        "name": "",
        "translation": (0.0, 0.0),
        "rotation": 0.0,
        "lookupTable": (0.0, 1024.0, 0.0, 0.1, 1024.0, 0.0, 0.3, 0.0, 0.0),
        "aperture": 0.0,
        "rayCount": 1,
        "type": "infra-red",
    },
    "LightSensor": {
        "name": "",
        "translation": (0.0, 0.0),
        "rotation": 0.0,
        "lookupTable": (0.0, 0.0, 0.0, 10.0, 1000.0, 0.0),
    },
    "TouchSensor": {"name": "", "translation": (0.0, 0.0), "rotation": 0.0, "radius": 0.05},
    "GPS": {"name": "", "translation": (0.0, 0.0), "rotation": 0.0},
    "Compass": {"name": "", "translation": (0.0, 0.0), "rotation": 0.0},
    "Camera1D": {
        "name": "",
        "translation": (0.0, 0.0),
        "rotation": 0.0,
        "fieldOfView": math.pi / 2,
        "width": 64,
    },
    "Emitter": {
        "name": "",
        "translation": (0.0, 0.0),
        "rotation": 0.0,
        "type": "radio",
        "channel": 0,
        "range": -1.0,  # -1 = unlimited
        "aperture": -1.0,  # -1 = omnidirectional
    },
    "Receiver": {"name": "", "translation": (0.0, 0.0), "rotation": 0.0, "type": "radio", "channel": 0},
    "LED": {"name": "", "translation": (0.0, 0.0), "rotation": 0.0},
    "PointLight": {"intensity": 1.0, "location": (0.0, 0.0)},
}

# Solid-like nodes place a rigid entity in the world.
SOLID_TYPES = ("Solid", "Robot", "DifferentialWheels")
ROBOT_TYPES = ("Robot", "DifferentialWheels")
DEVICE_TYPES = (
    "DistanceSensor",
    "LightSensor",
    "TouchSensor",
    "GPS",
    "Compass",
    "Camera1D",
    "Emitter",
    "Receiver",
    "LED",
    "Servo",
)

# Device names reserved for the wheel encoders built into DifferentialWheels.
RESERVED_DEVICE_NAMES = ("left_encoder", "right_encoder")


class ParseError(Exception):
    """Syntax or semantic error in world text, with source location."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(eq=False)
class Node:
    """One scene-tree node. USE references share the target's field map."""

    node_type: str
    fields: dict[str, object] = field(default_factory=dict)
    def_name: str | None = None
    use_ref: str | None = None
    line: int = 0
    col: int = 0

    def get(self, name: str):
        """Explicit field value, or the catalog default."""
        if name in self.fields:
            return self.fields[name]
        return DEFAULTS[self.node_type][name]

    @property
    def children(self) -> list["Node"]:
        return list(self.fields.get("children", ()))

    def __repr__(self):  # keep debugging output short
        tag = f" DEF {self.def_name}" if self.def_name else ""
        if self.use_ref:
            return f"<USE {self.use_ref}>"
        return f"<{self.node_type}{tag} {sorted(self.fields)}>"


@dataclass(eq=False)
class SceneTree:
    root_nodes: list[Node]
    def_table: dict[str, Node] = field(default_factory=dict)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int = 0
    col: int = 0

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


# ---------------------------------------------------------------------------
# Lexer

_PUNCT = {"{", "}", "[", "]"}


class _Token:
    __slots__ = ("kind", "value", "raw", "line", "col")

    def __init__(self, kind, value, line, col, raw=""):
        self.kind = kind  # "ident" | "number" | "string" | "punct" | "eof"
        self.value = value
        self.raw = raw  # source spelling; integers beyond 2**53 need it
        self.line = line
        self.col = col


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r,":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token("punct", ch, line, col))
            i += 1
            col += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n or text[i] == "\n":
                    raise ParseError("unterminated string", start_line, start_col)
                c = text[i]
                if c == '"':
                    i += 1
                    col += 1
                    break
                if c == "\\" and i + 1 < n and text[i + 1] in '\\"':
                    buf.append(text[i + 1])
                    i += 2
                    col += 2
                    continue
                buf.append(c)
                i += 1
                col += 1
            tokens.append(_Token("string", "".join(buf), start_line, start_col))
            continue
        if ch.isdigit() or ch in "+-." and _looks_numeric(text, i):
            start_line, start_col = line, col
            j = i
            if text[j] in "+-":
                j += 1
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            raw = text[i:j]
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"malformed number {raw!r}", start_line, start_col) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite number {raw!r}", start_line, start_col)
            tokens.append(_Token("number", value, start_line, start_col, raw))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", None, line, col))
    return tokens


def _looks_numeric(text: str, i: int) -> bool:
    if text[i].isdigit():
        return True
    return i + 1 < len(text) and (text[i + 1].isdigit() or text[i + 1] == ".")


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.def_table: dict[str, Node] = {}

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        t = self.tok
        self.pos += 1
        return t

    def error(self, message: str):
        raise ParseError(message, self.tok.line, self.tok.col)

    def expect_punct(self, ch: str):
        if self.tok.kind != "punct" or self.tok.value != ch:
            self.error(f"expected {ch!r}")
        return self.advance()

    def parse_tree(self) -> SceneTree:
        nodes = []
        while self.tok.kind != "eof":
            nodes.append(self.parse_node())
        return SceneTree(nodes, self.def_table)

    def parse_node(self) -> Node:
        if self.tok.kind != "ident":
            self.error("expected a node")
        start = self.tok
        def_name = None
        if start.value == "USE":
            self.advance()
            if self.tok.kind != "ident":
                self.error("expected a name after USE")
            name_tok = self.advance()
            target = self.def_table.get(name_tok.value)
            if target is None:
                raise ParseError(f"USE {name_tok.value!r} has no earlier DEF", name_tok.line, name_tok.col)
            node = Node(target.node_type, target.fields, use_ref=name_tok.value,
                        line=start.line, col=start.col)
            return node
        if start.value == "DEF":
            self.advance()
            if self.tok.kind != "ident":
                self.error("expected a name after DEF")
            name_tok = self.advance()
            def_name = name_tok.value
            if def_name in self.def_table:
                raise ParseError(f"duplicate DEF {def_name!r}", name_tok.line, name_tok.col)
        if self.tok.kind != "ident":
            self.error("expected a node type")
        type_tok = self.advance()
        node_type = type_tok.value
        decl = NODE_CATALOG.get(node_type)
        if decl is None:
            raise ParseError(f"unknown node type {node_type!r}", type_tok.line, type_tok.col)
        self.expect_punct("{")
        fields: dict[str, object] = {}
        while not (self.tok.kind == "punct" and self.tok.value == "}"):
            if self.tok.kind != "ident":
                self.error("expected a field name")
            name_tok = self.advance()
            fname = name_tok.value
            kind = decl.get(fname)
            if kind is None:
                raise ParseError(f"{node_type} has no field {fname!r}", name_tok.line, name_tok.col)
            if fname in fields:
                raise ParseError(f"duplicate field {fname!r}", name_tok.line, name_tok.col)
            fields[fname] = self.parse_value(kind)
        self.expect_punct("}")
        node = Node(node_type, fields, def_name=def_name, line=start.line, col=start.col)
        if def_name is not None:
            self.def_table[def_name] = node
        return node

    def parse_value(self, kind: FieldKind):
        if kind is FieldKind.FLOAT:
            return self.expect_number()
        if kind is FieldKind.INT:
            if self.tok.kind != "number":
                self.error("expected a number")
            token = self.advance()
            try:
                return int(token.raw, 10)  # exact for the full 64-bit range
            except ValueError:
                pass
            if not token.value.is_integer():
                raise ParseError(f"expected an integer, got {token.raw}",
                                 token.line, token.col)
            return int(token.value)
        if kind is FieldKind.BOOL:
            if self.tok.kind == "ident" and self.tok.value in ("TRUE", "FALSE"):
                return self.advance().value == "TRUE"
            self.error("expected TRUE or FALSE")
        if kind is FieldKind.STRING:
            if self.tok.kind != "string":
                self.error("expected a quoted string")
            return self.advance().value
        if kind is FieldKind.VEC2:
            return (self.expect_number(), self.expect_number())
        if kind is FieldKind.NUMBERS:
            self.expect_punct("[")
            values = []
            while self.tok.kind == "number":
                values.append(self.advance().value)
            self.expect_punct("]")
            return tuple(values)
        if kind is FieldKind.NODE:
            return self.parse_node()
        if kind is FieldKind.NODES:
            self.expect_punct("[")
            nodes = []
            while not (self.tok.kind == "punct" and self.tok.value == "]"):
                nodes.append(self.parse_node())
            self.expect_punct("]")
            return nodes
        raise AssertionError(kind)

    def expect_number(self) -> float:
        if self.tok.kind != "number":
            self.error("expected a number")
        return self.advance().value


def parse_world(text: str) -> SceneTree:
    """Parse world-format text into a scene tree.

    Raises ParseError (with line:col location) on syntax errors, unknown
    node types or fields, duplicate DEFs, unresolved USEs, field-kind
    mismatches, and non-finite numbers.
    """
    return _Parser(text).parse_tree()


# ---------------------------------------------------------------------------
# Serializer

def _format_float(value: float) -> str:
    return repr(float(value))


def _format_value(kind: FieldKind, value, indent: int, out: list[str]):
    if kind is FieldKind.FLOAT:
        out.append(_format_float(value))
    elif kind is FieldKind.INT:
        out.append(str(int(value)))
    elif kind is FieldKind.BOOL:
        out.append("TRUE" if value else "FALSE")
    elif kind is FieldKind.STRING:
        out.append('"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif kind is FieldKind.VEC2:
        out.append(f"{_format_float(value[0])} {_format_float(value[1])}")
    elif kind is FieldKind.NUMBERS:
        if value:
            out.append("[ " + " ".join(_format_float(v) for v in value) + " ]")
        else:
            out.append("[ ]")
    elif kind is FieldKind.NODE:
        _format_node(value, indent, out)
    elif kind is FieldKind.NODES:
        if not value:
            out.append("[ ]")
        else:
            out.append("[\n")
            for child in value:
                out.append("  " * (indent + 1))
                _format_node(child, indent + 1, out)
                out.append("\n")
            out.append("  " * indent + "]")
    else:
        raise AssertionError(kind)


def _format_node(node: Node, indent: int, out: list[str]):
    if node.use_ref is not None:
        out.append(f"USE {node.use_ref}")
        return
    if node.def_name is not None:
        out.append(f"DEF {node.def_name} ")
    decl = NODE_CATALOG[node.node_type]
    present = [name for name in decl if name in node.fields]
    if not present:
        out.append(f"{node.node_type} {{ }}")
        return
    out.append(node.node_type + " {\n")
    for name in present:
        out.append("  " * (indent + 1) + name + " ")
        _format_value(decl[name], node.fields[name], indent + 1, out)
        out.append("\n")
    out.append("  " * indent + "}")


def serialize_world(tree: SceneTree) -> str:
    """Canonical text form: 2-space indent, declaration-order fields,
    shortest round-trip floats, LF endings. parse(serialize(t)) is
    structurally equal to t."""
    if not tree.root_nodes:
        return ""
    out: list[str] = []
    for node in tree.root_nodes:
        _format_node(node, 0, out)
        out.append("\n")
    return "".join(out)


def structurally_equal(a, b) -> bool:
    """Structural equality of trees/nodes, ignoring source locations."""
    if isinstance(a, SceneTree) and isinstance(b, SceneTree):
        return structurally_equal(a.root_nodes, b.root_nodes)
    if isinstance(a, Node) and isinstance(b, Node):
        if (a.node_type, a.def_name, a.use_ref) != (b.node_type, b.def_name, b.use_ref):
            return False
        if a.use_ref is not None:
            return True  # field map belongs to the DEF target
        if set(a.fields) != set(b.fields):
            return False
        return all(structurally_equal(a.fields[k], b.fields[k]) for k in a.fields)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(structurally_equal(x, y) for x, y in zip(a, b))
    return a == b


# ---------------------------------------------------------------------------
# Validation

def _walk(nodes, parent=None):
    """Yield (node, parent) over the whole tree, including SFNode fields."""
    for node in nodes:
        yield node, parent
        if node.use_ref is not None:
            continue  # shared subtree, visited at its DEF site
        for name, value in node.fields.items():
            if isinstance(value, Node):
                yield from _walk([value], node)
            elif isinstance(value, list) and value and isinstance(value[0], Node):
                yield from _walk(value, node)


def iter_nodes(tree: SceneTree):
    for node, _parent in _walk(tree.root_nodes):
        yield node


def _device_name(node: Node) -> str:
    name = node.get("name")
    return name if name else node.node_type.lower()


def _check_lookup_table(node: Node, diagnostics: list[Diagnostic]):
    table = node.get("lookupTable")
    where = (node.line, node.col)
    if len(table) % 3 != 0 or len(table) < 6:
        diagnostics.append(Diagnostic(
            f"{node.node_type} lookupTable needs at least 2 rows of 3 numbers", *where))
        return
    inputs = table[0::3]
    if any(b <= a for a, b in zip(inputs, inputs[1:])):
        diagnostics.append(Diagnostic(
            f"{node.node_type} lookupTable inputs must be strictly increasing", *where))
    if any(r < 0 for r in table[2::3]):
        diagnostics.append(Diagnostic(
            f"{node.node_type} lookupTable noise ratios must be >= 0", *where))


def validate(tree: SceneTree) -> list[Diagnostic]:
    """Simulation-readiness diagnostics; an empty list means loadable."""
    diagnostics: list[Diagnostic] = []
    world_infos = [n for n in iter_nodes(tree) if n.node_type == "WorldInfo"]
    if not world_infos:
        diagnostics.append(Diagnostic("missing WorldInfo"))
    for extra in world_infos[1:]:
        diagnostics.append(Diagnostic("duplicate WorldInfo", extra.line, extra.col))
    for info in world_infos[:1]:
        if info.get("basicTimeStep") <= 0:
            diagnostics.append(Diagnostic("basicTimeStep must be > 0", info.line, info.col))

    for node, parent in _walk(tree.root_nodes):
        if node.node_type in ROBOT_TYPES and not node.get("controller"):
            diagnostics.append(Diagnostic(
                f"{node.node_type} has an empty controller", node.line, node.col))
        if node.node_type == "Servo":
            if parent is None or parent.node_type not in ROBOT_TYPES + ("Servo",):
                diagnostics.append(Diagnostic(
                    "Servo must be a child of a robot or another Servo", node.line, node.col))
        if node.node_type in ("DistanceSensor", "LightSensor"):
            _check_lookup_table(node, diagnostics)
        if node.node_type == "Physics":
            if node.get("mass") <= 0:
                diagnostics.append(Diagnostic("Physics mass must be > 0", node.line, node.col))
            if not 0.0 <= node.get("bounce") <= 1.0:
                diagnostics.append(Diagnostic("Physics bounce must be in [0, 1]", node.line, node.col))
            if node.get("kineticFriction") > node.get("staticFriction"):
                diagnostics.append(Diagnostic(
                    "Physics kineticFriction must not exceed staticFriction", node.line, node.col))

    for robot in (n for n in iter_nodes(tree) if n.node_type in ROBOT_TYPES):
        seen: dict[str, Node] = {}
        if robot.node_type == "DifferentialWheels":
            for reserved in RESERVED_DEVICE_NAMES:
                seen[reserved] = robot
        for node, _ in _walk(robot.children, robot):
            if node.node_type in ROBOT_TYPES:
                diagnostics.append(Diagnostic(
                    "robots cannot be nested inside robots", node.line, node.col))
                continue
            if node.node_type in DEVICE_TYPES:
                name = _device_name(node)
                if name in seen:
                    diagnostics.append(Diagnostic(
                        f"duplicate device name {name!r} on robot", node.line, node.col))
                else:
                    seen[name] = node
    return diagnostics


# ---------------------------------------------------------------------------
# Pose flattening

Pose = tuple[float, float, float]


def compose_pose(parent: Pose, dx: float, dy: float, dtheta: float) -> Pose:
    px, py, ptheta = parent
    c, s = math.cos(ptheta), math.sin(ptheta)
    return (px + c * dx - s * dy, py + s * dx + c * dy, ptheta + dtheta)


_POSED_TYPES = SOLID_TYPES + DEVICE_TYPES + ("PointLight",)


def flatten_poses(tree: SceneTree, servo_angles: dict[Node, float] | None = None) -> dict[Node, Pose]:
    """World pose (x, y, theta) of every solid, device, and light.

    Poses compose ancestor translations/rotations in document order; Servo
    joints contribute ``servo_angles`` (0 when absent) about their anchor.
    Keys are node identities, so a USE site gets its own pose.
    """
    angles = servo_angles or {}
    poses: dict[Node, Pose] = {}

    def visit(node: Node, frame: Pose):
        local = frame
        if node.node_type in SOLID_TYPES + ("Transform",):
            tx, ty = node.get("translation")
            local = compose_pose(frame, tx, ty, node.get("rotation"))
        elif node.node_type == "Servo":
            ax, ay = node.get("anchor")
            local = compose_pose(frame, ax, ay, angles.get(node, 0.0))
        elif node.node_type == "PointLight":
            lx, ly = node.get("location")
            local = compose_pose(frame, lx, ly, 0.0)
        elif node.node_type in DEVICE_TYPES:
            tx, ty = node.get("translation")
            local = compose_pose(frame, tx, ty, node.get("rotation"))
        if node.node_type in _POSED_TYPES:
            poses[node] = local
        if node.use_ref is not None:
            return  # shared subtree: the USE site contributes only its own pose
        for child in node.children:
            visit(child, local)

    for root in tree.root_nodes:
        visit(root, (0.0, 0.0, 0.0))
    return poses
