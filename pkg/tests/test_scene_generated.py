"""Round-trip property on generated trees (corpus files only cover the
shapes a human happened to write)."""

from hypothesis import given, settings, strategies as st

from microsim import scene
from microsim.scene import (
    FieldKind,
    Node,
    SceneTree,
    parse_world,
    serialize_world,
    structurally_equal,
)

finite_floats = st.floats(allow_nan=False, allow_infinity=False)
int64 = st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1)
# strings are single-line in this format; anything else round-trips raw
line_text = st.text(
    st.characters(blacklist_categories=("Cs",), blacklist_characters="\n"),
    max_size=15)

_SHAPE_TYPES = ("Box", "Cylinder", "Physics")
_NODE_TYPES = tuple(t for t in scene.NODE_CATALOG if t not in ("Transform",))


def _value_strategy(kind: FieldKind, node_strategy):
    if kind is FieldKind.FLOAT:
        return finite_floats
    if kind is FieldKind.INT:
        return int64
    if kind is FieldKind.BOOL:
        return st.booleans()
    if kind is FieldKind.STRING:
        return line_text
    if kind is FieldKind.VEC2:
        return st.tuples(finite_floats, finite_floats)
    if kind is FieldKind.NUMBERS:
        return st.lists(finite_floats, max_size=6).map(tuple)
    if kind is FieldKind.NODE:
        return node_strategy
    if kind is FieldKind.NODES:
        return st.lists(node_strategy, max_size=3)
    raise AssertionError(kind)


@st.composite
def _node(draw, depth: int = 0):
    node_type = draw(st.sampled_from(_SHAPE_TYPES if depth >= 2 else _NODE_TYPES))
    decl = scene.NODE_CATALOG[node_type]
    fields = {}
    for name, kind in decl.items():
        if not draw(st.booleans()):
            continue  # absent fields stay absent, like a hand-written file
        if kind in (FieldKind.NODE, FieldKind.NODES):
            child = _node(depth=depth + 1)
            fields[name] = draw(_value_strategy(kind, child))
        else:
            fields[name] = draw(_value_strategy(kind, None))
    return Node(node_type, fields)


@st.composite
def _tree(draw):
    return SceneTree(draw(st.lists(_node(), max_size=4)), {})


@given(_tree())
@settings(max_examples=300, deadline=None)
def test_generated_trees_round_trip(tree):
    text = serialize_world(tree)
    parsed = parse_world(text)
    assert structurally_equal(tree, parsed)
    # canonical text is a fixpoint
    assert serialize_world(parsed) == text


@given(st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1))
@settings(max_examples=200, deadline=None)
def test_int_fields_survive_full_64_bit_range(value):
    tree = parse_world(f"WorldInfo {{ randomSeed {value} }}")
    assert tree.root_nodes[0].fields["randomSeed"] == value
    again = parse_world(serialize_world(tree))
    assert again.root_nodes[0].fields["randomSeed"] == value
